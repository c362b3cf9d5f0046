"""Uniform node grids on a design box and pixel domains living inside them.

Conventions used throughout the package:

* Nodes sit at the lattice points of a uniform subdivision of the box D, so a
  grid with ``cells_per_axis = N`` carries ``(N+1)**n`` nodes, stored in
  C (row-major) order.
* Each node owns the cell of side h centered at it ("node-cell" convention);
  a pixel domain is a set of interior nodes and its Lebesgue measure is
  ``h**n`` times the node count.
* Functions are extended by zero outside the domain; masks never touch the
  outermost node layer, so the domain stays compactly inside D.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["BoxGrid", "ThinDomain", "interval_domain", "ball_domain", "mask_from_indices"]


class BoxGrid:
    """Uniform grid of nodes on the box [lower, upper]^n.

    Parameters
    ----------
    n : int
        Dimension (1 or 2).
    lower, upper : float
        Box corners, identical per axis (the box is a cube).
    cells_per_axis : int
        Number of cells per axis, at least 4.
    """

    def __init__(self, n, lower, upper, cells_per_axis):
        if n not in (1, 2):
            raise ValueError(f"dimension n must be 1 or 2, got {n}")
        lower = float(lower)
        upper = float(upper)
        if not upper > lower:
            raise ValueError("upper must exceed lower")
        cells_per_axis = int(cells_per_axis)
        if cells_per_axis < 4:
            raise ValueError("need at least 4 cells per axis")
        self.n = n
        self.lower = lower
        self.upper = upper
        self.cells_per_axis = cells_per_axis
        self.h = (upper - lower) / cells_per_axis
        self.node_shape = (cells_per_axis + 1,) * n
        self.num_nodes = (cells_per_axis + 1) ** n

    def axis_nodes(self):
        """Node coordinates along one axis, length cells_per_axis+1."""
        return self.lower + self.h * np.arange(self.cells_per_axis + 1)

    def node_coords(self):
        """(num_nodes, n) array of node coordinates in C order."""
        ax = self.axis_nodes()
        if self.n == 1:
            return ax[:, None]
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def interior(self):
        """Boolean node_shape array marking nodes strictly inside D."""
        m = np.zeros(self.node_shape, dtype=bool)
        if self.n == 1:
            m[1:-1] = True
        else:
            m[1:-1, 1:-1] = True
        return m

    def same_layout(self, other):
        return (
            self.n == other.n
            and self.cells_per_axis == other.cells_per_axis
            and abs(self.h - other.h) <= 1e-12 * self.h
        )

    def __repr__(self):
        return (
            f"BoxGrid(n={self.n}, lower={self.lower}, upper={self.upper}, "
            f"cells_per_axis={self.cells_per_axis})"
        )


@dataclass(frozen=True)
class ThinDomain:
    """A pixel domain: boolean node mask over a BoxGrid, one-layer margin enforced."""

    grid: BoxGrid
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.grid.node_shape:
            raise ValueError(
                f"mask shape {mask.shape} does not match grid {self.grid.node_shape}"
            )
        if np.any(mask & ~self.grid.interior()):
            raise ValueError("mask touches the boundary layer of the design box")
        object.__setattr__(self, "mask", mask)

    @property
    def cell_count(self):
        return int(self.mask.sum())

    @property
    def measure(self):
        """Lebesgue measure h^n * (number of cells)."""
        return self.grid.h**self.grid.n * self.cell_count

    @property
    def flat_indices(self):
        return np.flatnonzero(self.mask.ravel())

    def coords(self):
        """Coordinates of the domain's nodes, (cell_count, n)."""
        return self.grid.node_coords()[self.flat_indices]

    def full_field(self, values):
        """Scatter a domain vector to a full-grid node array (zeros elsewhere)."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.cell_count,):
            raise ValueError("values length does not match the domain")
        out = np.zeros(self.grid.num_nodes)
        out[self.flat_indices] = values
        return out.reshape(self.grid.node_shape)

    def with_mask(self, mask):
        return ThinDomain(self.grid, mask)


def interval_domain(grid, a, b):
    """Nodes of a 1d grid with a <= x <= b (clipped to the interior)."""
    if grid.n != 1:
        raise ValueError("interval_domain needs a 1d grid")
    x = grid.axis_nodes()
    mask = (x >= a - 1e-12 * grid.h) & (x <= b + 1e-12 * grid.h)
    mask &= grid.interior()
    return ThinDomain(grid, mask)


def ball_domain(grid, center, radius):
    """Nodes within `radius` of `center` (clipped to the interior)."""
    coords = grid.node_coords()
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = np.linalg.norm(coords - center[None, :], axis=1)
    mask = (d <= radius + 1e-12 * grid.h).reshape(grid.node_shape)
    mask &= grid.interior()
    return ThinDomain(grid, mask)


def mask_from_indices(grid, flat_indices):
    mask = np.zeros(grid.num_nodes, dtype=bool)
    mask[np.asarray(flat_indices, dtype=int)] = True
    return ThinDomain(grid, mask.reshape(grid.node_shape))
