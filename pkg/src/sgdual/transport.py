"""Modified-characteristic transport update for the density field.

The discrete velocity is the rotated displacement of the potential
gradient, v(x) = (psi_y - x2, x1 - psi_x); it is divergence free by
symmetry of the Hessian.  One step evaluates the current density at the
characteristic feet x - dt*v(x) and projects the composed field back
onto the Lagrange space (or re-interpolates it nodally, the variant that
preserves positivity exactly for k=1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import assembly as asm
from .fields import C1Field, LagrangeField, w_boundary_dofs, w_node_coords
from .mesh import Mesh

__all__ = [
    "TransportConfig", "velocity_at", "characteristic_feet",
    "transport_step", "min_value",
]

POLICIES = ("clamp", "initial")


@dataclass
class TransportConfig:
    """Time step, transport degree and out-of-domain foot policy."""

    dt: float
    degree: int = 3
    policy: str = "clamp"        # "clamp" | "initial"
    variant: str = "projection"  # "projection" | "nodal"
    n_quad: int = 4

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown foot policy {self.policy!r}")
        if self.variant not in ("projection", "nodal"):
            raise ValueError(f"unknown transport variant {self.variant!r}")


def velocity_at(psi: C1Field, x, y):
    """Discrete velocity (psi_y - y, x - psi_x) at points of closure(U)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all(psi.mesh.domain.contains(x, y)):
        raise ValueError("velocity evaluation outside the closed domain")
    gx, gy = psi.gradient(x, y)
    return gy - y, x - gx


def characteristic_feet(x, y, psi: C1Field, dt: float):
    """Upstream feet x - dt*v(x); the out-of-domain policy is applied by
    the caller."""
    v1, v2 = velocity_at(psi, x, y)
    return x - dt * v1, y - dt * v2


def _pullback_values(alpha, fx, fy, policy, alpha0):
    """Evaluate alpha at feet under the out-of-domain policy."""
    dom = alpha.mesh.domain
    if policy == "clamp":
        cx, cy = dom.clamp(fx, fy)
        return alpha.values(cx, cy)
    if alpha0 is None:
        raise ValueError("policy 'initial' needs the initial-density closure")
    inside = dom.contains(fx, fy)
    cx, cy = dom.clamp(fx, fy)
    vals = alpha.values(cx, cy)
    out = ~inside
    if np.any(out):
        vals = np.where(inside, vals, np.asarray(alpha0(fx, fy), dtype=float))
    return vals


def _mass_1d(n_cells: int, h: float, k: int, n: int) -> np.ndarray:
    """1-D Lagrange mass matrix on a uniform grid (dense; sizes are small)."""
    from .elements import _lagrange_1d, gauss_1d

    p, w = gauss_1d(n)
    val, _ = _lagrange_1d(k, p)  # (n, k+1)
    loc = h * np.einsum("q,qi,qj->ij", w, val, val)
    m = k * n_cells + 1
    M = np.zeros((m, m))
    for c in range(n_cells):
        s = slice(k * c, k * c + k + 1)
        M[s, s] += loc
    return M


class _TensorMassSolver:
    """Dirichlet-interior mass solve via the exact Kronecker split.

    On the uniform tensor grid the 2-D Gram matrix is kron(My, Mx), and
    removing boundary dofs keeps the tensor structure, so one solve is
    two small dense symmetric solves instead of a large sparse one.
    """

    def __init__(self, mesh: Mesh, k: int, n: int):
        import scipy.linalg as la

        self.wx, self.wy = k * mesh.nx + 1, k * mesh.ny + 1
        self.Mx = _mass_1d(mesh.nx, mesh.hx, k, n)
        self.My = _mass_1d(mesh.ny, mesh.hy, k, n)
        self.chox = la.cho_factor(self.Mx[1:-1, 1:-1])
        self.choy = la.cho_factor(self.My[1:-1, 1:-1])

    def boundary_moment(self, g_full: np.ndarray) -> np.ndarray:
        """Action of the full mass matrix on a boundary-supported vector."""
        G = g_full.reshape(self.wy, self.wx)
        return (self.My @ G @ self.Mx.T).ravel()

    def solve_interior(self, rhs_full: np.ndarray) -> np.ndarray:
        import scipy.linalg as la

        R = rhs_full.reshape(self.wy, self.wx)[1:-1, 1:-1]
        Z = la.cho_solve(self.choy, R)
        return la.cho_solve(self.chox, Z.T).T.ravel()


def _mass_solver(mesh: Mesh, k: int, n: int) -> _TensorMassSolver:
    key = ("w_mass_tensor", k, n)
    if key not in mesh._cache:
        mesh._cache[key] = _TensorMassSolver(mesh, k, n)
    return mesh._cache[key]


def transport_step(alpha: LagrangeField, psi: C1Field, dt: float,
                   g_dirichlet: Callable | None = None,
                   source: Callable | None = None,
                   policy: str = "clamp", variant: str = "projection",
                   n_quad: int = 4, alpha0: Callable | None = None) -> LagrangeField:
    """Advance the density one step along the discrete characteristics.

    Projection variant: (alpha_new, w) = (alpha(feet), w) + dt*(source, w)
    for interior test functions, boundary dofs set to g_dirichlet
    (zero by default).  Nodal variant: alpha_new(P) = alpha(foot(P)),
    which keeps nonnegative data nonnegative for k=1.
    """
    mesh, k = alpha.mesh, alpha.degree

    if variant == "nodal":
        xy = w_node_coords(mesh, k)
        fx, fy = characteristic_feet(xy[:, 0], xy[:, 1], psi, dt)
        vals = _pullback_values(alpha, fx, fy, policy, alpha0)
        if source is not None:
            vals = vals + dt * np.asarray(source(xy[:, 0], xy[:, 1]), dtype=float)
        bdofs = w_boundary_dofs(mesh, k)
        vals[bdofs] = 0.0 if g_dirichlet is None else np.asarray(
            g_dirichlet(xy[bdofs, 0], xy[bdofs, 1]), dtype=float)
        return LagrangeField(mesh, k, vals)

    t = asm.quad_tables(mesh, n_quad)
    sh = asm.w_quad_tables(mesh, k, n_quad)
    xq, yq = asm.quad_points(mesh, n_quad)
    fx, fy = characteristic_feet(xq.ravel(), yq.ravel(), psi, dt)
    abar = _pullback_values(alpha, fx, fy, policy, alpha0).reshape(xq.shape)
    if source is not None:
        abar = abar + dt * np.asarray(source(xq, yq), dtype=float)
    F = np.einsum("cq,q,qj->cj", abar, t.w, sh.val)
    rhs = np.zeros(alpha.n_dofs)
    np.add.at(rhs, asm.w_cell_dofs(mesh, k).ravel(), F.ravel())

    solver = _mass_solver(mesh, k, n_quad)
    bdofs = w_boundary_dofs(mesh, k)
    new = np.zeros_like(alpha.dofs)
    if g_dirichlet is not None:
        xy = w_node_coords(mesh, k)[bdofs]
        new[bdofs] = np.broadcast_to(
            np.asarray(g_dirichlet(xy[:, 0], xy[:, 1]), dtype=float), (bdofs.size,)
        )
        rhs = rhs - solver.boundary_moment(new)
    mask = np.ones(new.size, dtype=bool)
    mask[bdofs] = False
    new[mask] = solver.solve_interior(rhs)
    return LagrangeField(mesh, k, new)


def min_value(alpha: LagrangeField) -> float:
    """Minimum dof value (the field minimum for k=1)."""
    return alpha.min_value()
