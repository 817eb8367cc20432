"""Global finite element fields: C1 Hermite and Lagrange coefficient vectors.

The C1 field stores 4 dofs per mesh node (value, d/dx, d/dy, d2/dxdy),
node-major, so dof ``4*n + t`` is kind ``t`` of node ``n``.  The Lagrange
field of degree k stores nodal values on the refined (k*nx+1)x(k*ny+1)
grid.  Both evaluate in batch at arbitrary points via O(1) location.
"""

from __future__ import annotations

import numpy as np

from .elements import N_CELL_DOFS, c1_eval, lagrange_eval
from .mesh import Mesh

__all__ = [
    "C1Field", "LagrangeField",
    "c1_cell_dofs", "c1_constrained_dofs", "c1_free_dofs",
    "w_shape", "w_cell_dofs", "w_node_coords", "w_boundary_dofs",
]


# ---------------------------------------------------------------------------
# dof maps (memoized per mesh)
# ---------------------------------------------------------------------------

def c1_cell_dofs(mesh: Mesh) -> np.ndarray:
    """(n_cells, 16) global dof indices in local shape order."""
    key = "c1_cell_dofs"
    if key not in mesh._cache:
        ci = np.arange(mesh.n_cells) % mesh.nx
        cj = np.arange(mesh.n_cells) // mesh.nx
        n0 = cj * (mesh.nx + 1) + ci
        nodes = np.column_stack([n0, n0 + 1, n0 + mesh.nx + 2, n0 + mesh.nx + 1])
        dofs = (4 * nodes[:, :, None] + np.arange(4)[None, None, :])
        mesh._cache[key] = dofs.reshape(mesh.n_cells, N_CELL_DOFS)
    return mesh._cache[key]


def c1_constrained_dofs(mesh: Mesh) -> np.ndarray:
    """Dofs pinned by the Neumann condition on the normal derivative.

    On vertical boundary edges the trace of d/dx is the Hermite cubic in
    the (dx, dxy) dofs of the edge nodes, so those are constrained; on
    horizontal edges (dy, dxy).  Corners constrain dx, dy and dxy.
    """
    key = "c1_constrained"
    if key not in mesh._cache:
        nx, ny = mesh.nx, mesh.ny
        ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
        ii, jj = ii.ravel(), jj.ravel()
        node = jj * (nx + 1) + ii
        on_v = (ii == 0) | (ii == nx)
        on_h = (jj == 0) | (jj == ny)
        out = np.concatenate([
            4 * node[on_v] + 1,           # dx on vertical edges
            4 * node[on_h] + 2,           # dy on horizontal edges
            4 * node[on_v | on_h] + 3,    # dxy on all boundary nodes
        ])
        mesh._cache[key] = np.unique(out)
    return mesh._cache[key]


def c1_free_dofs(mesh: Mesh) -> np.ndarray:
    key = "c1_free"
    if key not in mesh._cache:
        mask = np.ones(4 * mesh.n_nodes, dtype=bool)
        mask[c1_constrained_dofs(mesh)] = False
        mesh._cache[key] = np.flatnonzero(mask)
    return mesh._cache[key]


def w_shape(mesh: Mesh, k: int):
    """Lagrange grid extents: (points per row, points per column)."""
    return k * mesh.nx + 1, k * mesh.ny + 1


def w_cell_dofs(mesh: Mesh, k: int) -> np.ndarray:
    """(n_cells, (k+1)^2) Lagrange dof indices in local tensor order."""
    key = ("w_cell_dofs", k)
    if key not in mesh._cache:
        wx, _ = w_shape(mesh, k)
        ci = np.arange(mesh.n_cells) % mesh.nx
        cj = np.arange(mesh.n_cells) // mesh.nx
        i0 = k * ci
        j0 = k * cj
        loc_i = np.tile(np.arange(k + 1), k + 1)
        loc_j = np.repeat(np.arange(k + 1), k + 1)
        mesh._cache[key] = (
            (j0[:, None] + loc_j[None, :]) * wx + i0[:, None] + loc_i[None, :]
        )
    return mesh._cache[key]


def w_node_coords(mesh: Mesh, k: int) -> np.ndarray:
    """(n_w_dofs, 2) coordinates of the Lagrange nodal grid, row-major."""
    key = ("w_nodes", k)
    if key not in mesh._cache:
        wx, wy = w_shape(mesh, k)
        x = np.linspace(mesh.domain.xmin, mesh.domain.xmax, wx)
        y = np.linspace(mesh.domain.ymin, mesh.domain.ymax, wy)
        X, Y = np.meshgrid(x, y)
        mesh._cache[key] = np.column_stack([X.ravel(), Y.ravel()])
    return mesh._cache[key]


def w_boundary_dofs(mesh: Mesh, k: int) -> np.ndarray:
    """Lagrange dofs sitting on the domain boundary."""
    key = ("w_boundary", k)
    if key not in mesh._cache:
        wx, wy = w_shape(mesh, k)
        ii, jj = np.meshgrid(np.arange(wx), np.arange(wy))
        on_b = (ii == 0) | (ii == wx - 1) | (jj == 0) | (jj == wy - 1)
        mesh._cache[key] = np.flatnonzero(on_b.ravel())
    return mesh._cache[key]


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

class C1Field:
    """Coefficient vector for the Bogner-Fox-Schmit space on a mesh."""

    def __init__(self, mesh: Mesh, dofs: np.ndarray | None = None):
        self.mesh = mesh
        if dofs is None:
            dofs = np.zeros(4 * mesh.n_nodes)
        else:
            dofs = np.asarray(dofs, dtype=float)
            if dofs.shape != (4 * mesh.n_nodes,):
                raise ValueError(
                    f"dof vector has shape {dofs.shape}, expected ({4*mesh.n_nodes},)"
                )
        self.dofs = dofs

    @property
    def n_dofs(self) -> int:
        return self.dofs.size

    def copy(self) -> "C1Field":
        return C1Field(self.mesh, self.dofs.copy())

    @classmethod
    def interpolate(cls, mesh: Mesh, f, fx, fy, fxy) -> "C1Field":
        """Hermite interpolant from value/derivative closures f(x, y)."""
        xy = mesh.node_coords()
        x, y = xy[:, 0], xy[:, 1]
        d = np.empty(4 * mesh.n_nodes)
        d[0::4] = f(x, y)
        d[1::4] = fx(x, y)
        d[2::4] = fy(x, y)
        d[3::4] = fxy(x, y)
        return cls(mesh, d)

    def _local(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        cells, xi, eta = self.mesh.locate_clamped(x, y)
        return cells, xi, eta

    def values(self, x, y) -> np.ndarray:
        cells, xi, eta = self._local(x, y)
        sh = c1_eval(xi, eta, self.mesh.hx, self.mesh.hy)
        cd = self.dofs[c1_cell_dofs(self.mesh)[cells]]
        return np.einsum("...i,...i->...", sh.val, cd)

    def gradient(self, x, y):
        cells, xi, eta = self._local(x, y)
        sh = c1_eval(xi, eta, self.mesh.hx, self.mesh.hy)
        cd = self.dofs[c1_cell_dofs(self.mesh)[cells]]
        return (
            np.einsum("...i,...i->...", sh.dx, cd),
            np.einsum("...i,...i->...", sh.dy, cd),
        )

    def hessian(self, x, y):
        """(dxx, dxy, dyy) at the given points."""
        cells, xi, eta = self._local(x, y)
        sh = c1_eval(xi, eta, self.mesh.hx, self.mesh.hy)
        cd = self.dofs[c1_cell_dofs(self.mesh)[cells]]
        return tuple(
            np.einsum("...i,...i->...", t, cd) for t in (sh.dxx, sh.dxy, sh.dyy)
        )


class LagrangeField:
    """Nodal coefficient vector for the degree-k tensor Lagrange space."""

    def __init__(self, mesh: Mesh, degree: int, dofs: np.ndarray | None = None):
        self.mesh = mesh
        self.degree = int(degree)
        wx, wy = w_shape(mesh, self.degree)
        if dofs is None:
            dofs = np.zeros(wx * wy)
        else:
            dofs = np.asarray(dofs, dtype=float)
            if dofs.shape != (wx * wy,):
                raise ValueError(
                    f"dof vector has shape {dofs.shape}, expected ({wx*wy},)"
                )
        self.dofs = dofs

    @property
    def n_dofs(self) -> int:
        return self.dofs.size

    def copy(self) -> "LagrangeField":
        return LagrangeField(self.mesh, self.degree, self.dofs.copy())

    @classmethod
    def interpolate(cls, mesh: Mesh, degree: int, f) -> "LagrangeField":
        """Nodal interpolant of the closure f(x, y)."""
        xy = w_node_coords(mesh, degree)
        return cls(mesh, degree, np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float))

    def values(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        cells, xi, eta = self.mesh.locate_clamped(x, y)
        sh = lagrange_eval(self.degree, xi, eta, self.mesh.hx, self.mesh.hy)
        cd = self.dofs[w_cell_dofs(self.mesh, self.degree)[cells]]
        return np.einsum("...i,...i->...", sh.val, cd)

    def gradient(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        cells, xi, eta = self.mesh.locate_clamped(x, y)
        sh = lagrange_eval(self.degree, xi, eta, self.mesh.hx, self.mesh.hy)
        cd = self.dofs[w_cell_dofs(self.mesh, self.degree)[cells]]
        return (
            np.einsum("...i,...i->...", sh.dx, cd),
            np.einsum("...i,...i->...", sh.dy, cd),
        )

    def min_value(self) -> float:
        """Minimum dof value: the field minimum for k=1, a surrogate for k>=2."""
        return float(self.dofs.min())
