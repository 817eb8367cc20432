"""Uniform rectangular meshes with O(1) point location.

Nodes and cells are numbered row-major from the lower-left corner of the
domain.  Each cell lists its four corner nodes counterclockwise starting
at the lower-left one.  Meshes are immutable after construction; derived
tables used by assembly routines are memoized on the instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Domain", "Mesh", "build_mesh"]


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle (xmin, xmax) x (ymin, ymax)."""

    xmin: float = 0.0
    xmax: float = 1.0
    ymin: float = 0.0
    ymax: float = 1.0

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(
                "degenerate domain: need xmax > xmin and ymax > ymin, got "
                f"({self.xmin}, {self.xmax}) x ({self.ymin}, {self.ymax})"
            )

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, x, y):
        """Membership in the closed rectangle (vectorized)."""
        return (
            (x >= self.xmin) & (x <= self.xmax)
            & (y >= self.ymin) & (y <= self.ymax)
        )

    def clamp(self, x, y):
        """Componentwise projection onto the closed rectangle."""
        return (
            np.clip(x, self.xmin, self.xmax),
            np.clip(y, self.ymin, self.ymax),
        )


class Mesh:
    """nx-by-ny uniform partition of a rectangular domain.

    The mesh parameter ``h`` is the larger cell edge.  Cell ``(ci, cj)``
    has index ``cj*nx + ci`` and covers
    ``[xmin + ci*hx, xmin + (ci+1)*hx] x [ymin + cj*hy, ymin + (cj+1)*hy]``.
    """

    def __init__(self, domain: Domain, nx: int, ny: int):
        if nx < 1 or ny < 1:
            raise ValueError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
        self.domain = domain
        self.nx = int(nx)
        self.ny = int(ny)
        self.hx = domain.width / self.nx
        self.hy = domain.height / self.ny
        self._cache: dict = {}

    def __repr__(self):
        d = self.domain
        return (
            f"Mesh({self.nx}x{self.ny} on ({d.xmin},{d.xmax})x({d.ymin},{d.ymax}), "
            f"hx={self.hx:g}, hy={self.hy:g})"
        )

    # ---- sizes -----------------------------------------------------

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    # ---- indexing --------------------------------------------------

    def node_index(self, i, j):
        return j * (self.nx + 1) + i

    def cell_index(self, ci, cj):
        return cj * self.nx + ci

    def cell_nodes(self, cell: int) -> np.ndarray:
        """Corner node indices of a cell, counterclockwise from lower-left."""
        ci, cj = cell % self.nx, cell // self.nx
        n0 = self.node_index(ci, cj)
        n1 = n0 + 1
        n3 = n0 + (self.nx + 1)
        n2 = n3 + 1
        return np.array([n0, n1, n2, n3])

    def node_coords(self) -> np.ndarray:
        """(n_nodes, 2) node positions, row-major from the lower-left."""
        x = np.linspace(self.domain.xmin, self.domain.xmax, self.nx + 1)
        y = np.linspace(self.domain.ymin, self.domain.ymax, self.ny + 1)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def cell_origins(self) -> np.ndarray:
        """(n_cells, 2) lower-left corner of every cell."""
        ci = np.arange(self.n_cells) % self.nx
        cj = np.arange(self.n_cells) // self.nx
        return np.column_stack(
            [self.domain.xmin + ci * self.hx, self.domain.ymin + cj * self.hy]
        )

    # ---- geometry --------------------------------------------------

    def jacobian(self):
        """Constant affine map scaling (hx, hy)."""
        return (self.hx, self.hy)

    def map_to_global(self, cell: int, xi: float, eta: float):
        """Map local coordinates in [0,1]^2 on a cell to a global point."""
        ci, cj = cell % self.nx, cell // self.nx
        return (
            self.domain.xmin + (ci + xi) * self.hx,
            self.domain.ymin + (cj + eta) * self.hy,
        )

    def locate(self, x: float, y: float):
        """Cell index and local coordinates of a point, or None if outside.

        Points landing exactly on shared edges resolve to the lower-index
        cell (local coordinate 1), so evaluation at such points is
        deterministic across runs.
        """
        if not self.domain.contains(x, y):
            return None
        i, xi = _axis_locate(x - self.domain.xmin, self.hx, self.nx)
        j, eta = _axis_locate(y - self.domain.ymin, self.hy, self.ny)
        return self.cell_index(i, j), (xi, eta)

    def locate_clamped(self, x, y):
        """Vectorized locate with clamping onto the closed domain.

        Intended for points that already went through an out-of-domain
        policy, so only roundoff excursions remain.  No edge tie-breaking:
        edge hits go to the upper cell (same field values by continuity).
        Returns (cells, xi, eta).
        """
        dom = self.domain
        tx = (np.clip(x, dom.xmin, dom.xmax) - dom.xmin) / self.hx
        ty = (np.clip(y, dom.ymin, dom.ymax) - dom.ymin) / self.hy
        i = np.minimum(tx.astype(np.int64), self.nx - 1)
        j = np.minimum(ty.astype(np.int64), self.ny - 1)
        return j * self.nx + i, tx - i, ty - j


def _axis_locate(d, h, n):
    t = d / h
    i = int(np.floor(t))
    if i >= n:  # point on the far boundary
        i = n - 1
    elif t == i and i > 0:  # interior shared edge: lower-index cell
        i -= 1
    return i, t - i


def build_mesh(domain: Domain, nx: int, ny: int) -> Mesh:
    """Build the uniform nx-by-ny mesh of ``domain``."""
    return Mesh(domain, nx, ny)
