"""Free-boundary diagnostics: densities, non-degeneracy, Weiss energies,
flatness, slopes, and point classification.

Ball quantities use cell-center membership; sphere integrals use Gauss-Jacobi
quadrature in the polar variable (absorbing the |y|^a weight) and periodic
trapezoid in azimuth. Volume integrals are doubled for the even reflection.
The penalized local energy J carries the rescaled penalty lambda_tilde; Weiss
values are comparable to densities after dividing by lambda_tilde, and every
curve records that normalization.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import roots_jacobi

from .constants import one_plane_solution, slope_constant, unit_ball_volume
from .extension import ball_energy
from .grids import ThinDomain
from .shape_opt import blow_up_rescale

__all__ = [
    "GeometryError",
    "ResolutionError",
    "FreeBoundarySet",
    "WeissCurve",
    "PointClassification",
    "ClassifierConfig",
    "free_boundary_set",
    "density_ratio",
    "nondegeneracy_scan",
    "weiss_energy",
    "weiss_curve",
    "weiss_monotonicity_audit",
    "flatness",
    "boundary_slope",
    "classify",
    "support_coincidence",
]


class GeometryError(ValueError):
    """Ball or window leaves the region where the quantity is defined."""


class ResolutionError(ValueError):
    """Requested radius is below the resolution floor of the grid."""


# ---------------------------------------------------------------------------


@dataclass
class FreeBoundarySet:
    """Mask cells adjacent to the complement, with smoothed outward normals."""

    domain: ThinDomain
    points: np.ndarray  # (k, n) cell centers
    normals: np.ndarray  # (k, n) outward unit vectors
    flat_indices: np.ndarray

    def __len__(self):
        return len(self.points)

    def check(self):
        norms = np.linalg.norm(self.normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise AssertionError("free-boundary normals are not unit length")
        m = self.domain.mask
        offsets = _face_neighbor_counts(m)
        on_fb = m.ravel()[self.flat_indices] & (offsets.ravel()[self.flat_indices] < 2 * m.ndim)
        if not np.all(on_fb):
            raise AssertionError("free-boundary point lacks a complement neighbor")
        return True


def _face_neighbor_counts(mask):
    """Number of same-mask face neighbors per node (masked nodes only)."""
    m = mask.astype(int)
    total = np.zeros_like(m)
    for ax in range(mask.ndim):
        total += np.roll(m, 1, axis=ax) + np.roll(m, -1, axis=ax)
    return total


def free_boundary_set(domain):
    """Extract the discrete free boundary of a mask with smoothed normals."""
    m = domain.mask
    counts = _face_neighbor_counts(m)
    fb = m & (counts < 2 * domain.grid.n)
    flat = np.flatnonzero(fb.ravel())
    coords = domain.grid.node_coords()[flat]
    smooth = m.astype(float)
    for ax in range(domain.grid.n):
        smooth = ndimage.correlate1d(smooth, [0.25, 0.5, 0.25], axis=ax, mode="constant")
    grads = np.gradient(smooth, domain.grid.h, edge_order=1)
    if domain.grid.n == 1:
        grads = [grads]
    gvec = np.stack([g.ravel()[flat] for g in grads], axis=1)
    norms = np.linalg.norm(gvec, axis=1)
    normals = np.zeros_like(gvec)
    ok = norms > 1e-14
    normals[ok] = -gvec[ok] / norms[ok, None]
    if np.any(~ok):
        normals[~ok, 0] = 1.0
    return FreeBoundarySet(domain=domain, points=coords, normals=normals, flat_indices=flat)


# ---------------------------------------------------------------------------


def _check_ball(grid, x0, r, floor):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (grid.n,):
        raise GeometryError("center must be a thin-space point of the grid dimension")
    if r < floor * grid.h - 1e-12:
        raise ResolutionError(f"radius {r} below the {floor}h resolution floor")
    if np.any(x0 - r < grid.lower - 1e-12) or np.any(x0 + r > grid.upper + 1e-12):
        raise GeometryError("ball exits the design box")
    return x0


def density_ratio(mask, x0, r):
    """Cell-counted |B_r(x0) and Omega| / (omega_n r^n), in [0, 1]."""
    grid = mask.grid
    x0 = _check_ball(grid, x0, r, floor=3)
    coords = grid.node_coords()
    inside = ((coords - x0[None, :]) ** 2).sum(axis=1) < r * r
    cnt = int(np.sum(inside & mask.mask.ravel()))
    vol = unit_ball_volume(grid.n) * r**grid.n
    return min(1.0, grid.h**grid.n * cnt / vol)


def nondegeneracy_scan(G_fields, fb, radii, params, points=None):
    """Empirical non-degeneracy constants c(X0) = min_r r^-s sup_{B_r} |G|.

    G_fields: component node arrays (list or single array) on fb's grid.
    Returns a dict with per-point constants and summary statistics; points not
    on the free boundary are flagged, not rejected.
    """
    grid = fb.domain.grid
    if isinstance(G_fields, np.ndarray) and G_fields.shape == grid.node_shape:
        comps = [G_fields]
    else:
        comps = list(G_fields)
    mag = np.sqrt(sum(np.asarray(c, dtype=float) ** 2 for c in comps)).ravel()
    coords = grid.node_coords()
    radii = np.sort(np.asarray(radii, dtype=float))
    if radii[0] < 3 * grid.h - 1e-12:
        raise ResolutionError("non-degeneracy radii below the 3h floor")
    if points is None:
        pts = fb.points
    else:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
    fbset = {tuple(np.round(p / grid.h).astype(int)) for p in fb.points}
    consts = np.empty(len(pts))
    flags = np.zeros(len(pts), dtype=bool)
    for k, p in enumerate(pts):
        vals = []
        d2 = ((coords - p[None, :]) ** 2).sum(axis=1)
        for r in radii:
            sel = d2 < r * r
            sup = mag[sel].max() if sel.any() else 0.0
            vals.append(sup / r**params.s)
        consts[k] = min(vals)
        flags[k] = tuple(np.round(p / grid.h).astype(int)) not in fbset
    return {
        "constants": consts,
        "not_on_boundary": flags,
        "min": float(consts[~flags].min()) if np.any(~flags) else float("nan"),
        "median": float(np.median(consts[~flags])) if np.any(~flags) else float("nan"),
    }


# ---------------------------------------------------------------------------


def _hemisphere_rule(n, a, k_polar=48, k_azimuth=64):
    """Quadrature nodes/weights for int_{upper half unit sphere} |y|^a f dS.

    Returns (directions (q, n+1), weights (q,)) with the weight |y|^a folded in.
    """
    if n == 1:
        # x = cos(theta): int_0^pi f (sin)^a dtheta = int_-1^1 f (1-x^2)^((a-1)/2) dx
        x, w = roots_jacobi(k_polar, (a - 1.0) / 2.0, (a - 1.0) / 2.0)
        dirs = np.column_stack([x, np.sqrt(1.0 - x * x)])
        return dirs, w
    # n=2: t = y/r in [0,1]: dS = r^2 t^a f  dt dphi on the weight side
    t, wt = roots_jacobi(k_polar, 0.0, a)
    t = 0.5 * (t + 1.0)
    wt = wt * 0.5 ** (a + 1.0)
    phi = 2.0 * np.pi * (np.arange(k_azimuth) + 0.5) / k_azimuth
    wphi = 2.0 * np.pi / k_azimuth
    rho = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    dirs = np.empty((k_polar * k_azimuth, 3))
    wts = np.empty(k_polar * k_azimuth)
    q = 0
    for i in range(k_polar):
        dirs[q : q + k_azimuth, 0] = rho[i] * np.cos(phi)
        dirs[q : q + k_azimuth, 1] = rho[i] * np.sin(phi)
        dirs[q : q + k_azimuth, 2] = t[i]
        wts[q : q + k_azimuth] = wt[i] * wphi
        q += k_azimuth
    return dirs, wts


def _trace_support(fields, tol=1e-12):
    sup = np.sqrt(sum(f.trace.astype(float) ** 2 for f in fields))
    top = sup.max()
    return sup > tol * max(top, 1e-300)


def weiss_energy(G_ext, X0, r, params):
    """Weiss energy W(X0, G, r) of extension fields at one radius.

    W = r^-n [2 sum_i E_half(g_i, B_r) + lambda_tilde meas({|G|>0} in B_r)]
        - s r^-(n+1) * 2 * int_{upper hemisphere} |y|^a |G|^2 dS.
    """
    fields = [G_ext] if not isinstance(G_ext, (list, tuple)) else list(G_ext)
    slab = fields[0].slab
    grid = slab.base
    x0 = _check_ball(grid, X0, r, floor=5)
    if r > slab.Y:
        raise GeometryError("ball exits the slab vertically")
    supp = _trace_support(fields)
    if not supp.any():
        return 0.0
    e = sum(ball_energy(f, x0, r) for f in fields)
    coords = grid.node_coords()
    thin_in = ((coords - x0[None, :]) ** 2).sum(axis=1) < r * r
    meas = grid.h**grid.n * int(np.sum(thin_in & supp.ravel()))
    vol_term = 2.0 * e + params.lambda_tilde * meas
    dirs, wts = _hemisphere_rule(grid.n, params.a)
    pts = np.empty((len(dirs), grid.n + 1))
    pts[:, : grid.n] = x0[None, :] + r * dirs[:, : grid.n]
    pts[:, grid.n] = r * dirs[:, grid.n]
    mag2 = np.zeros(len(dirs))
    for f in fields:
        gv = f.interp(pts)
        mag2 += gv * gv
    # the |y|^a factor is inside the rule's weights: (y/r)^a there, scale back
    sphere = float(np.sum(wts * mag2)) * r**grid.n * r**params.a
    return float(vol_term / r**grid.n - 2.0 * params.s * sphere / r ** (grid.n + 1))


@dataclass
class WeissCurve:
    """Weiss energies of one center across radii, with audit metadata.

    normalization records that the volume term carries lambda_tilde; divide
    values by lambda_tilde before comparing with densities.
    """

    center: np.ndarray
    radii: np.ndarray
    values: np.ndarray
    s: float
    c_tilde: float = 1.0
    normalization: str = "J-includes-lambda-tilde"

    def check(self):
        if not np.all(np.diff(self.radii) > 0):
            raise AssertionError("radii must be increasing")
        if not np.all(np.isfinite(self.values)):
            raise AssertionError("Weiss values must be finite")
        return True


def weiss_curve(G_ext, X0, radii, params, c_tilde=None):
    """Evaluate the Weiss energy across radii and package as a WeissCurve."""
    fields = [G_ext] if not isinstance(G_ext, (list, tuple)) else list(G_ext)
    radii = np.sort(np.asarray(radii, dtype=float))
    vals = np.array([weiss_energy(fields, X0, r, params) for r in radii])
    if c_tilde is None:
        lam_sum = 0.0
        grid = fields[0].slab.base
        for f in fields:
            from .extension import extension_energy

            tr = f.trace.ravel()
            nrm2 = float(np.sum(tr * tr)) * grid.h**grid.n
            if nrm2 > 0:
                lam_sum += params.d_s * extension_energy(f) / nrm2
        c_tilde = 2.0 * unit_ball_volume(grid.n) * lam_sum / params.d_s
    return WeissCurve(
        center=np.atleast_1d(np.asarray(X0, dtype=float)),
        radii=radii,
        values=vals,
        s=params.s,
        c_tilde=float(c_tilde),
    )


def weiss_monotonicity_audit(curve, holder_seminorm):
    """Smallest sigma >= 0 making r -> W(r) + 2 sigma (C/s) [G]_s r^s nondecreasing.

    Report-only: returns the fitted sigma and the per-pair slack.
    """
    if len(curve.radii) < 4:
        raise ValueError("audit needs at least 4 radii")
    curve.check()
    H = float(holder_seminorm)
    scale = 2.0 * (curve.c_tilde / curve.s) * H
    sigma = 0.0
    pairs = []
    for i in range(len(curve.radii) - 1):
        r0, r1 = curve.radii[i], curve.radii[i + 1]
        drop = curve.values[i] - curve.values[i + 1]
        denom = scale * (r1**curve.s - r0**curve.s)
        need = max(0.0, drop / denom) if denom > 0 else (np.inf if drop > 0 else 0.0)
        sigma = max(sigma, need)
        pairs.append({"r_lo": float(r0), "r_hi": float(r1), "drop": float(drop),
                      "sigma_needed": float(need)})
    corrected = curve.values + sigma * scale * curve.radii**curve.s
    return {
        "sigma_fit": float(sigma),
        "pairs": pairs,
        "corrected_nondecreasing": bool(np.all(np.diff(corrected) >= -1e-12)),
        "correction_scale": float(scale),
    }


# ---------------------------------------------------------------------------


def flatness(G_fields, X0, r, params, angle_count=128):
    """Distance of the blow-up at (X0, r) from the best one-plane profile.

    Minimizes sup_{|X|<=1} |G_{X0,r}(X) - slope_const * U(<x, nu>, y) f| over
    a grid of unit directions nu and the dominant component direction f.
    Returns (epsilon, nu, f).
    """
    fields = [G_fields] if not isinstance(G_fields, (list, tuple)) else list(G_fields)
    n = fields[0].slab.base.n
    bus = [blow_up_rescale(f, X0, r, params.s) for f in fields]
    bu0 = bus[0]
    mask = bu0.ball_mask().ravel()
    M = np.stack([b.values.reshape(-1)[mask] for b in bus], axis=1)
    # dominant component direction
    _, _, vt = np.linalg.svd(M, full_matrices=False)
    f = vt[0]
    if np.sum(M @ f) < 0:
        f = -f
    c = slope_constant(params.lambda_penalty, params.s)
    coords = bu0.xgrid.node_coords()
    y = bu0.y_levels
    pts_x = np.repeat(coords, len(y), axis=0)[mask]
    pts_y = np.tile(y, len(coords))[mask]
    if n == 1:
        nus = np.array([[1.0], [-1.0]])
    else:
        ang = 2.0 * np.pi * np.arange(angle_count) / angle_count
        nus = np.column_stack([np.cos(ang), np.sin(ang)])
    best = (np.inf, None)
    for nu in nus:
        t = pts_x @ nu
        model = c * one_plane_solution(t, pts_y, params.s)
        dev = M - model[:, None] * f[None, :]
        eps = float(np.sqrt((dev * dev).sum(axis=1)).max())
        if eps < best[0]:
            best = (eps, nu)
    return best[0], best[1], f


def boundary_slope(G_fields, x0, normal, params, t_lo=3.0, t_hi=10.0):
    """Least-squares power-law slope of |G| along a ray from a boundary point.

    Fits |G|(x0 + t * normal, 0) ~ alpha * t^s over t in [t_lo*h, t_hi*h];
    pass the inward normal (pointing into the positivity set). Needs at least
    4 in-grid samples, else raises ResolutionError.
    """
    from .extension import ExtensionField, _multilinear

    if isinstance(G_fields, ExtensionField):
        grid = G_fields.slab.base
        comps = [G_fields.trace]
    elif (
        isinstance(G_fields, (list, tuple))
        and len(G_fields) > 0
        and isinstance(G_fields[0], ExtensionField)
    ):
        grid = G_fields[0].slab.base
        comps = [f.trace for f in G_fields]
    else:
        grid, arr = G_fields
        arr = np.asarray(arr, dtype=float)
        comps = [arr] if arr.shape == grid.node_shape else list(arr)
    mag = np.sqrt(sum(np.asarray(c, dtype=float) ** 2 for c in comps))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    nu = np.atleast_1d(np.asarray(normal, dtype=float))
    nu = nu / np.linalg.norm(nu)
    h = grid.h
    ts = np.arange(np.ceil(t_lo), np.floor(t_hi) + 1) * h
    pts = x0[None, :] + ts[:, None] * nu[None, :]
    ok = np.all((pts >= grid.lower) & (pts <= grid.upper), axis=1)
    if ok.sum() < 4:
        raise ResolutionError("fewer than 4 slope samples inside the grid")
    vals = _multilinear(grid, mag, pts[ok])
    tk = ts[ok]
    return float(np.sum(vals * tk**params.s) / np.sum(tk ** (2.0 * params.s)))


@dataclass(frozen=True)
class ClassifierConfig:
    tol: float = 0.1
    delta: float = 0.05
    flat_threshold: float = 0.2
    num_radii: int = 4
    r_max: float | None = None


@dataclass
class PointClassification:
    density_limit: float
    label: str
    flatness: float
    slope: float
    radii: np.ndarray = field(default=None)
    ratios: np.ndarray = field(default=None)

    def check(self, config):
        if self.label == "regular" and abs(self.density_limit - 0.5) > config.tol:
            raise AssertionError("regular label with off-half density")
        if self.label == "singular" and self.density_limit < 0.5 + config.delta:
            raise AssertionError("singular label below the density threshold")
        return True


def classify(mask, G_fields, x0, config=None, params=None, normal=None):
    """Classify a free-boundary point as regular / singular / undetermined.

    Density ratios on a decreasing radius ladder are extrapolated linearly in
    r to a density limit; regular additionally requires small flatness of the
    blow-up at the finest radius (needs extension fields and params).
    """
    if config is None:
        config = ClassifierConfig()
    grid = mask.grid
    x0v = np.atleast_1d(np.asarray(x0, dtype=float))
    h = grid.h
    r_hi = config.r_max
    if r_hi is None:
        r_hi = min(np.min(x0v - grid.lower), np.min(grid.upper - x0v))
        r_hi = min(0.95 * r_hi, 12.0 * h)
    r_lo = 5.0 * h
    if r_hi <= r_lo:
        r_hi = r_lo * 1.5
    radii = np.geomspace(r_lo, r_hi, config.num_radii)
    ratios = np.array([density_ratio(mask, x0v, r) for r in radii])
    A = np.column_stack([np.ones_like(radii), radii])
    coef, *_ = np.linalg.lstsq(A, ratios, rcond=None)
    gamma = float(coef[0])
    eps = float("nan")
    slope = float("nan")
    if G_fields is not None and params is not None:
        eps, _, _ = flatness(G_fields, x0v, radii[0], params)
        if normal is None:
            fb = free_boundary_set(mask)
            k = int(np.argmin(((fb.points - x0v[None, :]) ** 2).sum(axis=1)))
            normal = fb.normals[k]
        try:
            slope = boundary_slope(G_fields, x0v, -np.asarray(normal), params)
        except ResolutionError:
            slope = float("nan")
    if abs(gamma - 0.5) <= config.tol and (np.isnan(eps) or eps < config.flat_threshold):
        label = "regular"
    elif gamma >= 0.5 + config.delta:
        label = "singular"
    else:
        label = "undetermined"
    return PointClassification(
        density_limit=gamma,
        label=label,
        flatness=eps,
        slope=slope,
        radii=radii,
        ratios=ratios,
    )


def support_coincidence(bundle, mask):
    """Fraction of mask cells where each eigenfunction is numerically silent.

    Returns (fractions, low_resolution flag); the flag marks masks with a
    connected component smaller than 4 cells.
    """
    fractions = np.empty(bundle.m)
    for i in range(bundle.m):
        v = bundle.vectors[i]
        fractions[i] = float(np.mean(np.abs(v) < 1e-10 * np.abs(v).max()))
    struct = ndimage.generate_binary_structure(mask.grid.n, 1)
    labels, ncomp = ndimage.label(mask.mask, structure=struct)
    low = False
    for c in range(1, ncomp + 1):
        if np.sum(labels == c) < 4:
            low = True
    return fractions, low
