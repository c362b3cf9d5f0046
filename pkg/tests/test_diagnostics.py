import numpy as np
import pytest

from fraclab.constants import FracParams, one_plane_solution, slope_constant
from fraclab.diagnostics import (
    ClassifierConfig,
    GeometryError,
    ResolutionError,
    WeissCurve,
    boundary_slope,
    classify,
    density_ratio,
    flatness,
    free_boundary_set,
    nondegeneracy_scan,
    support_coincidence,
    weiss_curve,
    weiss_energy,
    weiss_monotonicity_audit,
)
from fraclab.eigen import lowest_eigenpairs
from fraclab.extension import ExtensionField, SlabGrid, extend
from fraclab.grids import BoxGrid, ball_domain, interval_domain, mask_from_indices
from fraclab.nonlocal_form import assemble_form


def exact_field(grid, J, Y, s, scale=1.0):
    slab = SlabGrid(grid, J, a=1.0 - 2.0 * s, Y=Y)
    X, Yv = np.meshgrid(grid.axis_nodes(), slab.y_nodes, indexing="ij")
    U = scale * one_plane_solution(X, Yv, s)
    return ExtensionField(slab, U.reshape(slab.values_shape()))


def half_line_domain(grid):
    """Nodes with x > 0 (positivity set of the exact profile)."""
    x = grid.axis_nodes()
    keep = (x > 1e-12) & grid.interior()
    return mask_from_indices(grid, np.flatnonzero(keep))


# -- free boundary extraction ------------------------------------------------


def test_free_boundary_of_ball():
    g = BoxGrid(2, -1.0, 1.0, 48)
    dom = ball_domain(g, [0.0, 0.0], 0.6)
    fb = free_boundary_set(dom)
    fb.check()
    assert len(fb) > 20
    radii = np.hypot(fb.points[:, 0], fb.points[:, 1])
    assert np.all(np.abs(radii - 0.6) <= 2.5 * g.h)
    # normals point outward (along the position vector)
    dots = np.sum(fb.normals * fb.points / radii[:, None], axis=1)
    assert np.all(dots > 0.8)
    nrm = np.linalg.norm(fb.normals, axis=1)
    np.testing.assert_allclose(nrm, 1.0, atol=1e-12)


def test_free_boundary_of_interval():
    g = BoxGrid(1, -1.0, 1.0, 64)
    dom = interval_domain(g, -0.5, 0.5)
    fb = free_boundary_set(dom)
    assert len(fb) == 2
    xs = sorted(fb.points[:, 0])
    assert xs[0] == pytest.approx(-0.5, abs=g.h)
    assert xs[1] == pytest.approx(0.5, abs=g.h)
    signs = fb.normals[np.argsort(fb.points[:, 0]), 0]
    assert signs[0] < 0 < signs[1]


# -- density -----------------------------------------------------------------


def test_density_ratio_model_cases():
    g = BoxGrid(2, -1.0, 1.0, 64)
    x = g.axis_nodes()
    half = (x[:, None] > 1e-12) & np.ones_like(x[None, :], dtype=bool) & g.interior()
    dom_half = mask_from_indices(g, np.flatnonzero(half.ravel()))
    r = 10 * g.h
    assert density_ratio(dom_half, [0.0, 0.0], r) == pytest.approx(0.5, abs=0.08)
    full = mask_from_indices(g, np.flatnonzero(g.interior().ravel()))
    assert density_ratio(full, [0.0, 0.0], r) == pytest.approx(1.0, abs=0.08)


def test_density_ratio_guards():
    g = BoxGrid(2, -1.0, 1.0, 32)
    dom = ball_domain(g, [0.0, 0.0], 0.5)
    with pytest.raises(ResolutionError):
        density_ratio(dom, [0.0, 0.0], 2.0 * g.h)  # below the 3h floor
    with pytest.raises(GeometryError):
        density_ratio(dom, [0.9, 0.9], 0.5)  # ball exits the box


# -- Weiss energy ------------------------------------------------------------


def test_weiss_constant_on_homogeneous_profile():
    """W(r) is constant (= lambda_tilde * omega_n / 2 after normalization) on
    the closed-form blow-up profile, to quadrature accuracy."""
    p = FracParams(1, 0.5, 1.0)
    c = slope_constant(1.0, 0.5)
    g = BoxGrid(1, -1.0, 1.0, 160)
    f = exact_field(g, 64, 4.0, 0.5, scale=c)
    radii = np.round(np.linspace(0.1, 0.4, 7) / g.h) * g.h
    cur = weiss_curve(f, [0.0], radii, p)
    rel_var = (cur.values.max() - cur.values.min()) / cur.values.mean()
    assert rel_var <= 0.06
    assert cur.values.mean() / p.lambda_tilde == pytest.approx(1.0, abs=0.05)
    # theory value carries omega_1 / 2 = 1


def test_weiss_quadratic_structure():
    """W(c*U) = c^2 * A(r) + M(r): the field enters through quadratic forms
    only, and the amplitude-independent remainder is the volume term."""
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -1.0, 1.0, 160)
    r = np.round(np.array([0.15, 0.25]) / g.h) * g.h
    w1 = weiss_curve(exact_field(g, 64, 4.0, 0.5, 1.0), [0.0], r, p).values
    w2 = weiss_curve(exact_field(g, 64, 4.0, 0.5, 2.0), [0.0], r, p).values
    w3 = weiss_curve(exact_field(g, 64, 4.0, 0.5, 3.0), [0.0], r, p).values
    A = (w3 - w1) / 8.0
    np.testing.assert_allclose(A, (w2 - w1) / 3.0, rtol=1e-10)
    # remainder M = volume term ~ lambda_tilde up to the staircase error in
    # the ball/positivity-set intersection
    np.testing.assert_allclose(w1 - A, p.lambda_tilde, atol=0.12 * p.lambda_tilde)


def test_weiss_energy_guards():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -1.0, 1.0, 64)
    f = exact_field(g, 16, 4.0, 0.5)
    with pytest.raises(ResolutionError):
        weiss_energy(f, [0.0], 3.0 * g.h, p)  # below the 5h floor
    with pytest.raises(GeometryError):
        weiss_energy(f, [0.9], 0.5, p)


def test_weiss_curve_requires_enough_radii():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -1.0, 1.0, 64)
    f = exact_field(g, 16, 4.0, 0.5)
    cur = weiss_curve(f, [0.0], [0.2, 0.25, 0.3, 0.35], p)  # all above 5h
    cur.check()
    with pytest.raises(ValueError):
        weiss_monotonicity_audit(
            WeissCurve(center=np.array([0.0]), radii=np.array([0.1, 0.2]),
                       values=np.array([1.0, 1.0]), s=0.5),
            holder_seminorm=1.0,
        )


def test_monotonicity_audit_on_monotone_and_dipped_curves():
    radii = np.array([0.1, 0.15, 0.2, 0.3, 0.4])
    up = WeissCurve(center=np.array([0.0]), radii=radii,
                    values=np.array([1.0, 1.1, 1.2, 1.25, 1.3]), s=0.5)
    rep = weiss_monotonicity_audit(up, holder_seminorm=1.0)
    assert rep["sigma_fit"] == 0.0
    assert rep["corrected_nondecreasing"]

    dipped = WeissCurve(center=np.array([0.0]), radii=radii,
                        values=np.array([1.0, 1.1, 1.05, 1.2, 1.3]), s=0.5)
    rep2 = weiss_monotonicity_audit(dipped, holder_seminorm=1.0)
    assert rep2["sigma_fit"] > 0.0
    assert rep2["corrected_nondecreasing"]
    # a larger Holder bound explains the same dip with a smaller sigma
    rep3 = weiss_monotonicity_audit(dipped, holder_seminorm=2.0)
    assert rep3["sigma_fit"] < rep2["sigma_fit"]


def test_homogeneous_baseline_audit_sigma_near_zero():
    p = FracParams(1, 0.5, 1.0)
    c = slope_constant(1.0, 0.5)
    g = BoxGrid(1, -1.0, 1.0, 160)
    f = exact_field(g, 64, 4.0, 0.5, scale=c)
    radii = np.round(np.linspace(0.1, 0.4, 7) / g.h) * g.h
    cur = weiss_curve(f, [0.0], radii, p)
    rep = weiss_monotonicity_audit(cur, holder_seminorm=c)
    assert rep["sigma_fit"] <= 0.05


# -- flatness ----------------------------------------------------------------


def test_flatness_small_on_exact_profile():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -1.0, 1.0, 256)
    c = slope_constant(1.0, 0.5)
    f = exact_field(g, 64, 4.0, 0.5, scale=c)
    for r in (0.125, 0.25):  # node-aligned radii
        eps, nu, fvec = flatness(f, [0.0], r, p)
        assert eps <= 2e-3
        assert nu[0] == pytest.approx(1.0)
        np.testing.assert_allclose(np.linalg.norm(fvec), 1.0, atol=1e-12)


def test_flatness_detects_rotated_direction_2d():
    p = FracParams(2, 0.5, 1.0)
    g = BoxGrid(2, -1.0, 1.0, 48)
    slab = SlabGrid(g, 24, a=0.0, Y=4.0)
    th = np.deg2rad(30.0)
    nu_true = np.array([np.cos(th), np.sin(th)])
    t = g.node_coords() @ nu_true
    c = slope_constant(1.0, 0.5)
    vals = np.empty((g.num_nodes, slab.J + 1))
    for j, y in enumerate(slab.y_nodes):
        vals[:, j] = c * one_plane_solution(t, y, 0.5)
    f = ExtensionField(slab, vals.reshape(slab.values_shape()))
    eps, nu, _ = flatness(f, [0.0, 0.0], 0.3, p)
    ang = np.rad2deg(np.arctan2(nu[1], nu[0]))
    assert abs(ang - 30.0) <= 360.0 / 128 + 1e-9
    assert eps < 0.15


def test_flatness_large_on_non_homogeneous_data():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -1.0, 1.0, 128)
    slab = SlabGrid(g, 32, a=0.0, Y=4.0)
    X, Yv = np.meshgrid(g.axis_nodes(), slab.y_nodes, indexing="ij")
    vals = np.cos(4.0 * X) * np.exp(-Yv)  # nothing like a one-plane profile
    f = ExtensionField(slab, vals.reshape(slab.values_shape()))
    eps, _, _ = flatness(f, [0.0], 0.25, p)
    assert eps > 0.3


# -- boundary slope ----------------------------------------------------------


def test_boundary_slope_exact_profile():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -1.0, 1.0, 256)
    c = slope_constant(1.0, 0.5)
    f = exact_field(g, 64, 4.0, 0.5, scale=c)
    al = boundary_slope(f, [0.0], [1.0], p)  # inward = +e1 here
    assert al == pytest.approx(c, rel=1e-6)


def test_boundary_slope_needs_enough_window():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -1.0, 1.0, 64)
    f = exact_field(g, 16, 4.0, 0.5)
    with pytest.raises(ResolutionError):
        boundary_slope(f, [0.93], [1.0], p)  # window falls off the grid


# -- nondegeneracy -----------------------------------------------------------


def test_nondegeneracy_scan_structure():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -2.0, 2.0, 128)
    dom = interval_domain(g, -1.0, 1.0)
    bundle = lowest_eigenpairs(assemble_form(dom, p), 1)
    fb = free_boundary_set(dom)
    radii = [6 * g.h, 9 * g.h, 12 * g.h]
    rep = nondegeneracy_scan(bundle.full_fields(), fb, radii, p)
    assert set(rep) >= {"constants", "not_on_boundary", "min", "median"}
    arr = np.asarray(rep["constants"])
    assert arr.shape == (fb.points.shape[0],)
    assert rep["min"] > 0.0
    assert rep["median"] >= rep["min"]
    with pytest.raises(ResolutionError):
        nondegeneracy_scan(bundle.full_fields(), fb, [2.0 * g.h], p)
    # off-boundary points are flagged, not rejected
    rep2 = nondegeneracy_scan(bundle.full_fields(), fb, radii, p,
                              points=[[0.33 * g.h + 0.5]])
    assert rep2["not_on_boundary"].all()


# -- classification ----------------------------------------------------------


def test_classify_exact_profile_regular():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -1.0, 1.0, 256)
    c = slope_constant(1.0, 0.5)
    f = exact_field(g, 64, 4.0, 0.5, scale=c)
    dom = half_line_domain(g)
    # the default 5h..12h ladder sits inside the staircase transient; a wider
    # ladder is needed before the extrapolated density settles near 1/2
    cfg = ClassifierConfig(r_max=0.5, num_radii=6)
    pc = classify(dom, f, [0.0], cfg, p, [1.0])
    pc.check(cfg)
    assert pc.label == "regular"
    assert pc.density_limit == pytest.approx(0.5, abs=0.1)
    assert pc.flatness <= 0.05


def test_classify_slit_point_singular():
    p = FracParams(2, 0.5, 1.0)
    g = BoxGrid(2, -1.0, 1.0, 48)
    x = g.axis_nodes()
    inner = g.interior().copy()
    iy0 = int(np.argmin(np.abs(x)))
    inner[x >= -1e-12, iy0] = False
    dom = mask_from_indices(g, np.flatnonzero(inner.ravel()))
    bundle = lowest_eigenpairs(assemble_form(dom, p), 1)
    f = [extend(v, SlabGrid(g, 16, a=0.0, Y=4.0)) for v in bundle.full_fields()]
    for X0 in ([0.25, 0.0], [0.5, 0.0]):
        pc = classify(dom, f, X0, ClassifierConfig(), p, None)
        assert pc.label == "singular"
        assert pc.density_limit > 0.55


def test_classify_respects_threshold_override():
    """Same data, two thresholds: the kink-interpolation floor lands between
    them, so the label flips from undetermined to regular."""
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -1.0, 1.0, 64)  # deliberately coarse
    c = slope_constant(1.0, 0.5)
    f = exact_field(g, 24, 4.0, 0.5, scale=c)
    dom = half_line_domain(g)
    strict = classify(dom, f, [0.0],
                      ClassifierConfig(flat_threshold=1e-4, r_max=0.6, num_radii=6),
                      p, [1.0])
    loose = classify(dom, f, [0.0],
                     ClassifierConfig(flat_threshold=1.0, r_max=0.6, num_radii=6),
                     p, [1.0])
    assert strict.label == "undetermined"
    assert loose.label == "regular"


# -- support coincidence -----------------------------------------------------


def test_support_coincidence_full_support():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -2.0, 2.0, 128)
    dom = interval_domain(g, -1.0, 1.0)
    bundle = lowest_eigenpairs(assemble_form(dom, p), 2)
    fracs, low = support_coincidence(bundle, dom)
    assert fracs.shape == (2,)
    assert np.all(fracs < 0.05)
    assert not low


def test_support_coincidence_flags_tiny_component():
    p = FracParams(1, 0.5, 1.0)
    g = BoxGrid(1, -2.0, 2.0, 64)
    x = g.axis_nodes()
    keep = ((x > -1.0) & (x < 0.2)) | ((x > 1.45) & (x < 1.58))  # 2-cell island
    keep &= g.interior()
    dom = mask_from_indices(g, np.flatnonzero(keep))
    bundle = lowest_eigenpairs(assemble_form(dom, p), 1)
    _, low = support_coincidence(bundle, dom)
    assert low
