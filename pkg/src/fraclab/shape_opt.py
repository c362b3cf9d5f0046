"""Pixel-set minimization of sum-of-eigenvalues plus volume penalty.

The search space is node masks on a BoxGrid with a one-cell margin. Because
zero-extension makes the stiffness matrix of a subdomain a principal submatrix
of the full-grid matrix, candidate moves re-solve small dense eigenproblems
against a kernel table assembled once. Greedy descent is steepest with
deterministic tie-breaking; annealing is Metropolis with geometric cooling.
Degenerate proposals (disconnecting or emptying the mask) are admissible.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .grids import BoxGrid, ThinDomain, ball_domain
from .nonlocal_form import kernel_table

__all__ = [
    "OptimizerConfig",
    "OptimizationTrace",
    "optimize",
    "blow_up_rescale",
    "RescaledField",
    "perimeter_estimate",
]

_MOVE_KINDS = ("single-flip", "boundary-flip", "block-flip")
_SCHEDULES = ("greedy", "anneal")


@dataclass(frozen=True)
class OptimizerConfig:
    m: int = 1
    Lambda: float = 1.0
    move_kind: str = "boundary-flip"
    schedule: str = "greedy"
    t0: float = 0.1
    cooling: float = 0.97
    steps: int = 400
    restarts: int = 1
    seed: int = 0
    stale_limit: int = 200
    initial_mask: np.ndarray | None = None
    spot_check_rate: float = 0.05

    def __post_init__(self):
        if self.Lambda <= 0:
            raise ValueError("Lambda must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.move_kind not in _MOVE_KINDS:
            raise ValueError(f"move_kind must be one of {_MOVE_KINDS}")
        if self.schedule not in _SCHEDULES:
            raise ValueError(f"schedule must be one of {_SCHEDULES}")
        if not 0.0 < self.cooling <= 1.0:
            raise ValueError("cooling must lie in (0, 1]")
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if self.steps < 1 or self.stale_limit < 1:
            raise ValueError("steps and stale_limit must be >= 1")
        if not 0.0 <= self.spot_check_rate <= 1.0:
            raise ValueError("spot_check_rate must lie in [0, 1]")


@dataclass
class OptimizationTrace:
    """Per-iteration searching record plus the best mask found."""

    records: list = field(default_factory=list)  # dict rows
    best_mask: ThinDomain | None = None
    best_objective: float = np.inf
    best_lambdas: np.ndarray | None = None
    wall_time: float = 0.0
    certified: bool = False
    aborted: bool = False
    interrupted: bool = False
    seed: int = 0
    config: OptimizerConfig | None = None

    def check(self):
        if self.config is not None and self.config.schedule == "greedy":
            for r in range(self.config.restarts):
                objs = [
                    row["objective"]
                    for row in self.records
                    if row["restart"] == r and row["accepted"]
                ]
                if any(b > a + 1e-12 for a, b in zip(objs, objs[1:])):
                    raise AssertionError("greedy objective increased along accepted moves")
        first = [r for r in self.records if r["iteration"] == 0]
        if first and self.best_objective > min(r["objective"] for r in first) + 1e-12:
            raise AssertionError("best objective above an initial objective")
        return True


class _Evaluator:
    """Objective evaluation shared across moves: cached kernel submatrices."""

    def __init__(self, grid, params, m, Lambda):
        self.grid = grid
        self.table = kernel_table(grid, params.s)
        self.h = grid.h
        self.n = grid.n
        self.m = m
        self.Lambda = Lambda
        self.count = 0

    def lambdas(self, idx):
        if idx.size < self.m:
            return None
        K = self.table.stiffness(idx)
        self.count += 1
        vals = linalg.eigh(
            K, subset_by_index=(0, self.m - 1), eigvals_only=True, driver="evr"
        )
        return vals / self.h**self.n

    def objective(self, idx):
        lams = self.lambdas(idx)
        if lams is None:
            return np.inf, None
        meas = self.h**self.n * idx.size
        return float(np.sum(lams) + self.Lambda * meas), lams


def _neighbor_offsets(grid):
    offs = []
    shape = grid.node_shape
    stride = np.ones(grid.n, dtype=int)
    for ax in range(grid.n - 2, -1, -1):
        stride[ax] = stride[ax + 1] * shape[ax + 1]
    for ax in range(grid.n):
        offs.append(stride[ax])
        offs.append(-stride[ax])
    return np.array(offs), stride


def _candidates(grid, mask_flat, kind):
    """Seed cells of admissible moves, sorted by flat index."""
    interior = grid.interior().ravel()
    offs, _ = _neighbor_offsets(grid)
    N = mask_flat.size
    nbr_mask = np.zeros(N, dtype=int)
    for o in offs:
        nbr_mask += np.roll(mask_flat, o)
    # roll wraps around; margin of non-mask cells makes wraparound harmless
    # because mask cells never touch the array edge.
    if kind == "single-flip":
        cand = interior.copy()
    else:
        add = interior & ~mask_flat & (nbr_mask > 0)
        rem = mask_flat & (nbr_mask < 2 * grid.n)
        cand = add | rem
    return np.flatnonzero(cand)


def _apply_move(grid, mask_flat, seed_cell, kind):
    new = mask_flat.copy()
    if kind in ("single-flip", "boundary-flip"):
        new[seed_cell] = ~new[seed_cell]
        return new
    offs, _ = _neighbor_offsets(grid)
    target = ~mask_flat[seed_cell]
    interior = grid.interior().ravel()
    block = [seed_cell]
    for o in offs:
        j = seed_cell + o
        if 0 <= j < new.size and interior[j]:
            block.append(j)
    new[np.array(block)] = target
    return new


def _initial_mask(grid, config, rng, jitter):
    if config.initial_mask is not None:
        m0 = np.asarray(config.initial_mask, dtype=bool)
        if m0.shape != grid.node_shape:
            raise ValueError("initial mask shape mismatch")
        start = m0.ravel().copy()
    else:
        feas = 0.5 * (grid.upper - grid.lower) - grid.h
        dom = ball_domain(grid, np.zeros(grid.n) + 0.5 * (grid.upper + grid.lower),
                          0.5 * feas)
        start = dom.mask.ravel().copy()
    if jitter:
        unjittered = start.copy()
        edge = _candidates(grid, start, "boundary-flip")
        flips = edge[rng.random(edge.size) < 0.3]
        start[flips] = ~start[flips]
        start &= grid.interior().ravel()
        if not start.any():
            start = unjittered
    return start


def optimize(design_box, config, params, should_stop=None):
    """Search for a locally optimal mask; returns the full OptimizationTrace.

    should_stop: optional zero-arg callable polled once per iteration; when it
    returns True the search stops early and the trace is marked interrupted.
    """
    if not isinstance(design_box, BoxGrid):
        raise TypeError("design_box must be a BoxGrid")
    ev = _Evaluator(design_box, params, config.m, config.Lambda)
    trace = OptimizationTrace(seed=config.seed, config=config)
    t_start = time.perf_counter()
    try:
        for restart in range(config.restarts):
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, restart]))
            mask = _initial_mask(design_box, config, rng, jitter=restart > 0)
            if config.schedule == "greedy":
                stopped = _run_greedy(design_box, ev, config, mask, trace, restart,
                                      rng, should_stop)
            else:
                stopped = _run_anneal(design_box, ev, config, mask, trace, restart,
                                      rng, should_stop)
            if stopped:
                trace.interrupted = True
                break
    except linalg.LinAlgError:
        trace.aborted = True
    trace.wall_time = time.perf_counter() - t_start
    if trace.best_mask is None and trace.records:
        trace.aborted = True
    return trace


def _record(trace, restart, iteration, obj, mask_flat, lams, accepted, h, n):
    trace.records.append(
        {
            "restart": restart,
            "iteration": iteration,
            "objective": float(obj),
            "measure": float(h**n * int(mask_flat.sum())),
            "lambdas": tuple(float(v) for v in (lams if lams is not None else [])),
            "accepted": bool(accepted),
        }
    )


def _update_best(trace, design_box, mask_flat, obj, lams):
    if obj < trace.best_objective - 1e-15:
        trace.best_objective = float(obj)
        trace.best_mask = ThinDomain(design_box, mask_flat.reshape(design_box.node_shape).copy())
        trace.best_lambdas = None if lams is None else np.array(lams)


def _run_greedy(grid, ev, config, mask, trace, restart, rng, should_stop):
    h, n = grid.h, grid.n
    obj, lams = ev.objective(np.flatnonzero(mask))
    _record(trace, restart, 0, obj, mask, lams, True, h, n)
    _update_best(trace, grid, mask, obj, lams)
    iteration = 0
    while True:
        if should_stop is not None and should_stop():
            return True
        iteration += 1
        cands = _candidates(grid, mask, config.move_kind)
        best_c, best_obj, best_lams, best_new = -1, obj, lams, None
        for c in cands:
            new = _apply_move(grid, mask, c, config.move_kind)
            o, lms = ev.objective(np.flatnonzero(new))
            if o < best_obj - 1e-12:
                best_c, best_obj, best_lams, best_new = c, o, lms, new
        if best_c < 0:
            trace.certified = _certify(grid, ev, config, mask, obj)
            return False
        if (
            best_new.sum() < mask.sum()
            and lams is not None
            and best_lams is not None
            and rng.random() < config.spot_check_rate
        ):
            if np.any(np.asarray(best_lams) < np.asarray(lams) - 1e-9 * np.abs(lams)):
                raise AssertionError("eigenvalue decreased after removing a cell")
        mask, obj, lams = best_new, best_obj, best_lams
        _record(trace, restart, iteration, obj, mask, lams, True, h, n)
        _update_best(trace, grid, mask, obj, lams)


def _certify(grid, ev, config, mask, obj):
    for c in _candidates(grid, mask, config.move_kind):
        new = _apply_move(grid, mask, c, config.move_kind)
        o, _ = ev.objective(np.flatnonzero(new))
        if o < obj - 1e-10:
            raise AssertionError(
                f"local optimality certificate failed: cell {c} improves by {obj - o:.3e}"
            )
    return True


def _run_anneal(grid, ev, config, mask, trace, restart, rng, should_stop):
    h, n = grid.h, grid.n
    obj, lams = ev.objective(np.flatnonzero(mask))
    _record(trace, restart, 0, obj, mask, lams, True, h, n)
    _update_best(trace, grid, mask, obj, lams)
    T = config.t0
    stale = 0
    for step in range(1, config.steps + 1):
        if should_stop is not None and should_stop():
            return True
        cands = _candidates(grid, mask, config.move_kind)
        if cands.size == 0:
            break
        c = cands[rng.integers(cands.size)]
        new = _apply_move(grid, mask, c, config.move_kind)
        o, lms = ev.objective(np.flatnonzero(new))
        delta = o - obj
        accept = delta < 0 or (np.isfinite(o) and rng.random() < np.exp(-delta / max(T, 1e-12)))
        if accept:
            mask, obj, lams = new, o, lms
        _record(trace, restart, step, obj, mask, lams, accept, h, n)
        before = trace.best_objective
        _update_best(trace, grid, mask, obj, lams)
        stale = 0 if trace.best_objective < before - 1e-15 else stale + 1
        if stale > config.stale_limit:
            break
        T *= config.cooling
    return False


# ---------------------------------------------------------------------------


@dataclass
class RescaledField:
    """Blow-up sample G_{X0,r}(X) = r^{-s} G(X0 + r X) on a unit-scale grid.

    values has shape xgrid.node_shape + (len(y_levels), m).
    """

    xgrid: BoxGrid
    y_levels: np.ndarray
    values: np.ndarray
    r: float
    x0: np.ndarray

    @property
    def m(self):
        return self.values.shape[-1]

    def magnitude(self):
        return np.sqrt(np.sum(self.values**2, axis=-1))

    def ball_mask(self):
        """Boolean array over nodes with |(x, y)| <= 1."""
        coords = self.xgrid.node_coords()
        d2 = (coords**2).sum(axis=1)[:, None] + self.y_levels[None, :] ** 2
        return (d2 <= 1.0 + 1e-12).reshape(self.xgrid.node_shape + (len(self.y_levels),))


def blow_up_rescale(source, x0, r, s):
    """Rescale a field around a thin-space point onto the unit ball scale.

    source: ExtensionField, or a (BoxGrid, node_array) pair for trace-only
    data (node_array may carry a leading component axis).
    """
    from .extension import ExtensionField

    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    r = float(r)
    if r <= 0:
        raise ValueError("rescale radius must be positive")
    if isinstance(source, ExtensionField):
        base = source.slab.base
        fields = [source]
        y_native = source.slab.y_nodes
    else:
        base, arr = source
        arr = np.asarray(arr, dtype=float)
        if arr.shape == base.node_shape:
            arr = arr[None]
        fields = [a for a in arr]
        y_native = None
    if np.any(x0 - r < base.lower - 1e-12) or np.any(x0 + r > base.upper + 1e-12):
        raise ValueError("blow-up window exits the field footprint")
    cells = int(np.clip(np.round(2.0 * r / base.h), 8, 128))
    xg = BoxGrid(base.n, -1.0, 1.0, cells)
    if y_native is not None:
        y_lv = y_native[y_native <= r * (1 + 1e-12)] / r
        if y_lv.size == 0 or y_lv[-1] < 1.0 - 1e-12:
            y_lv = np.append(y_lv, 1.0)
    else:
        y_lv = np.array([0.0])
    pts_x = xg.node_coords() * r + x0[None, :]
    if isinstance(source, ExtensionField):
        vals = np.empty((xg.num_nodes, y_lv.size, 1))
        for k, yl in enumerate(y_lv):
            q = np.column_stack([pts_x, np.full(len(pts_x), yl * r)])
            vals[:, k, 0] = source.interp(q)
    else:
        from .extension import _multilinear

        vals = np.empty((xg.num_nodes, y_lv.size, len(fields)))
        for ci, comp in enumerate(fields):
            vals[:, 0, ci] = _multilinear(base, comp, pts_x)
    vals *= r ** (-s)
    return RescaledField(
        xgrid=xg,
        y_levels=y_lv,
        values=vals.reshape(xg.node_shape + (y_lv.size, -1)),
        r=r,
        x0=x0,
    )


def perimeter_estimate(mask):
    """h^(n-1) times the count of mask/non-mask cell interfaces inside D."""
    if not isinstance(mask, ThinDomain):
        raise TypeError("mask must be a ThinDomain")
    grid = mask.grid
    m = mask.mask
    count = 0
    for ax in range(grid.n):
        sl_lo = [slice(None)] * grid.n
        sl_hi = [slice(None)] * grid.n
        sl_lo[ax] = slice(None, -1)
        sl_hi[ax] = slice(1, None)
        count += int(np.sum(m[tuple(sl_lo)] != m[tuple(sl_hi)]))
    return count * grid.h ** (grid.n - 1)
