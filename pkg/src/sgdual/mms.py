"""Manufactured problems, error norms and convergence-rate estimation.

The three stock problems mirror the simulator's validation experiments:
a radially symmetric exponential potential with exact data for the
unregularized system (test 1), the same potential with data corrected so
it solves the regularized fourth-order system exactly for a given eps
(test 2), and a compactly supported product-parabola density with no
closed-form solution (test 3).  Error norms are over-integrated so the
quadrature error sits well below the discretization error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import assembly as asm
from .assembly import NeumannData
from .fields import C1Field, LagrangeField, c1_cell_dofs, w_cell_dofs
from .mesh import Domain, Mesh

__all__ = [
    "ManufacturedProblem", "ErrorReport",
    "test1_problem", "test2_problem", "test3_problem",
    "c1_error_norms", "w_error_l2", "field_norms", "error_report",
    "convergence_rate",
]


@dataclass(frozen=True)
class ManufacturedProblem:
    """Closed-form data driving one simulation.

    All closures are pure functions of (x, y, t) (or (x, y) for the
    initial density).  psi* closures may be None when no exact solution
    is known; flux None selects the scheme's default constant-eps data.
    ``reference`` labels what the psi errors measure against: the exact
    unregularized potential ("psi_star", conflating regularization and
    discretization error) or the exact regularized one ("psi_eps").
    """

    name: str
    domain: Domain
    alpha0: Callable
    psi: Callable | None = None
    psi_dx: Callable | None = None
    psi_dy: Callable | None = None
    psi_dxy: Callable | None = None
    psi_dxx: Callable | None = None
    psi_dyy: Callable | None = None
    alpha: Callable | None = None
    transport_source: Callable | None = None
    g_dirichlet: Callable | None = None
    flux: Callable | None = None
    mean_value: Callable | None = None
    reference: str = "none"

    @property
    def has_exact_psi(self) -> bool:
        return self.psi is not None

    def neumann(self, t: float) -> NeumannData:
        if self.psi is None:
            return NeumannData.zero()
        return NeumannData(
            gx=lambda x, y: self.psi_dx(x, y, t),
            gy=lambda x, y: self.psi_dy(x, y, t),
            gxy=lambda x, y: self.psi_dxy(x, y, t),
        )

    def flux_at(self, t: float) -> Callable | None:
        if self.flux is None:
            return None
        return lambda x, y: self.flux(x, y, t)

    def g_dirichlet_at(self, t: float) -> Callable | None:
        if self.g_dirichlet is None:
            return None
        return lambda x, y: self.g_dirichlet(x, y, t)

    def source_at(self, t: float) -> Callable | None:
        if self.transport_source is None:
            return None
        return lambda x, y: self.transport_source(x, y, t)

    def mean_at(self, t: float) -> float:
        return 0.0 if self.mean_value is None else float(self.mean_value(t))

    def psi_closures(self, t: float) -> dict:
        return {
            "val": lambda x, y: self.psi(x, y, t),
            "dx": lambda x, y: self.psi_dx(x, y, t),
            "dy": lambda x, y: self.psi_dy(x, y, t),
            "dxx": lambda x, y: self.psi_dxx(x, y, t),
            "dxy": lambda x, y: self.psi_dxy(x, y, t),
            "dyy": lambda x, y: self.psi_dyy(x, y, t),
        }

    def alpha_at(self, t: float) -> Callable | None:
        if self.alpha is None:
            return None
        return lambda x, y: self.alpha(x, y, t)


def _unit_mean(t: float) -> float:
    """Integral of exp(t*(x^2+y^2)/2) over the unit square.

    Separable; each 1-D factor is integrated with a Gauss rule dense
    enough to be exact to machine precision for t of order one.
    """
    from .elements import gauss_1d

    p, w = gauss_1d(10)
    # composite rule on 4 panels for safety at larger t
    vals = 0.0
    for a in np.linspace(0.0, 1.0, 5)[:-1]:
        xs = a + 0.25 * p
        vals += 0.25 * np.sum(w * np.exp(0.5 * t * xs * xs))
    return float(vals * vals)


def _radial_psi_closures():
    """Derivative closures of exp(t*(x^2+y^2)/2)."""
    E = lambda x, y, t: np.exp(0.5 * t * (x * x + y * y))
    return {
        "psi": lambda x, y, t: E(x, y, t),
        "psi_dx": lambda x, y, t: t * x * E(x, y, t),
        "psi_dy": lambda x, y, t: t * y * E(x, y, t),
        "psi_dxy": lambda x, y, t: t * t * x * y * E(x, y, t),
        "psi_dxx": lambda x, y, t: t * (1 + t * x * x) * E(x, y, t),
        "psi_dyy": lambda x, y, t: t * (1 + t * y * y) * E(x, y, t),
    }


def test1_problem() -> ManufacturedProblem:
    """Exact data for the unregularized system on the unit square.

    The transported density is radial while the velocity is a rotation
    about the origin scaled by the radial profile, so the advection term
    vanishes and the transport source equals the time derivative of the
    density.
    """
    ps = _radial_psi_closures()

    def alpha(x, y, t):
        r2 = x * x + y * y
        return t * t * (1 + t * r2) * np.exp(t * r2)

    def F(x, y, t):
        r2 = x * x + y * y
        return t * (2 + 4 * t * r2 + t * t * r2 * r2) * np.exp(t * r2)

    return ManufacturedProblem(
        name="test1",
        domain=Domain(0.0, 1.0, 0.0, 1.0),
        alpha0=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
        alpha=alpha,
        transport_source=F,
        g_dirichlet=alpha,
        flux=None,  # keep the scheme's own constant-eps flux data
        mean_value=_unit_mean,
        reference="psi_star",
        **ps,
    )


def test2_problem(eps: float) -> ManufacturedProblem:
    """Exact data for the regularized fourth-order system at given eps.

    The density and transport source carry the eps-correction from the
    bilaplacian of the potential; the flux data is the exact normal
    derivative of its Laplacian.
    """
    ps = _radial_psi_closures()

    def alpha(x, y, t):
        r2 = x * x + y * y
        main = t * t * (1 + t * r2) * np.exp(t * r2)
        corr = eps * t * t * (8 + 8 * t * r2 + t * t * r2 * r2) * np.exp(0.5 * t * r2)
        return main - corr

    def F(x, y, t):
        r2 = x * x + y * y
        main = t * (2 + 4 * t * r2 + t * t * r2 * r2) * np.exp(t * r2)
        corr = (0.5 * eps * t) * (
            32 + 56 * t * r2 + 16 * t * t * r2 * r2 + t**3 * r2**3
        ) * np.exp(0.5 * t * r2)
        return main - corr

    def flux(x, y, t):
        # normal derivative of lap(psi) on the axis-aligned boundary:
        # grad(lap psi) = t^2 (4 + t r^2) e^{t r^2 / 2} (x, y)
        r2 = x * x + y * y
        g = t * t * (4 + t * r2) * np.exp(0.5 * t * r2)
        nx, ny = _outward_normal(x, y, Domain(0.0, 1.0, 0.0, 1.0))
        return g * (x * nx + y * ny)

    return ManufacturedProblem(
        name="test2",
        domain=Domain(0.0, 1.0, 0.0, 1.0),
        alpha0=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
        alpha=alpha,
        transport_source=F,
        g_dirichlet=alpha,
        flux=flux,
        mean_value=_unit_mean,
        reference="psi_eps",
        **ps,
    )


def _outward_normal(x, y, dom: Domain, tol: float = 1e-12):
    """Outward unit normal on the boundary of an axis-aligned rectangle.

    Corner points get the sum of both edge normals; interior points get
    zero, which silently drops their (ill-posed) contribution.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx = np.where(np.abs(x - dom.xmax) < tol, 1.0, 0.0)
    nx -= np.where(np.abs(x - dom.xmin) < tol, 1.0, 0.0)
    ny = np.where(np.abs(y - dom.ymax) < tol, 1.0, 0.0)
    ny -= np.where(np.abs(y - dom.ymin) < tol, 1.0, 0.0)
    return nx, ny


def test3_problem() -> ManufacturedProblem:
    """Compactly supported product-parabola density on (0,6)^2; no exact
    solution is known."""

    def alpha0(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        box = (x >= 2.0) & (x <= 4.0) & (y >= 2.25) & (y <= 3.75)
        val = 0.125 * (4.0 - x) * (x - 2.0) * (3.75 - y) * (y - 2.25)
        return np.where(box, val, 0.0)

    return ManufacturedProblem(
        name="test3",
        domain=Domain(0.0, 6.0, 0.0, 6.0),
        alpha0=alpha0,
        reference="none",
    )


# ---------------------------------------------------------------------------
# error norms
# ---------------------------------------------------------------------------

def c1_error_norms(field: C1Field, exact: dict | None, n: int = 5):
    """Full L2, H1, H2 norms of (field - exact) by over-integration.

    Passing exact=None gives the norms of the field itself.
    """
    mesh = field.mesh
    t = asm.quad_tables(mesh, n)
    xq, yq = asm.quad_points(mesh, n)
    cd = field.dofs[c1_cell_dofs(mesh)]

    def err(table, key):
        vals = np.einsum("qi,ci->cq", table, cd)
        if exact is not None:
            vals = vals - exact[key](xq, yq)
        return np.einsum("cq,q->", vals * vals, t.w)

    l2 = err(t.c1.val, "val")
    h1s = err(t.c1.dx, "dx") + err(t.c1.dy, "dy")
    h2s = err(t.c1.dxx, "dxx") + 2 * err(t.c1.dxy, "dxy") + err(t.c1.dyy, "dyy")
    return math.sqrt(l2), math.sqrt(l2 + h1s), math.sqrt(l2 + h1s + h2s)


def w_error_l2(field: LagrangeField, exact: Callable | None, n: int = 5) -> float:
    """L2 norm of (field - exact) on the Lagrange space."""
    mesh = field.mesh
    t = asm.quad_tables(mesh, n)
    sh = asm.w_quad_tables(mesh, field.degree, n)
    vals = np.einsum("qj,cj->cq", sh.val, field.dofs[w_cell_dofs(mesh, field.degree)])
    if exact is not None:
        xq, yq = asm.quad_points(mesh, n)
        vals = vals - exact(xq, yq)
    return math.sqrt(np.einsum("cq,q->", vals * vals, t.w))


def field_norms(field: C1Field, n: int = 5):
    """L2, H1, H2 norms of a C1 field."""
    return c1_error_norms(field, None, n)


@dataclass(frozen=True)
class ErrorReport:
    """One row of a convergence experiment."""

    h: float
    dt: float
    eps: float
    t: float
    psi_l2: float
    psi_h1: float
    psi_h2: float
    alpha_l2: float
    reference: str = "psi_eps"

    def __post_init__(self):
        for v in (self.psi_l2, self.psi_h1, self.psi_h2, self.alpha_l2):
            if v < 0:
                raise ValueError("error norms must be nonnegative")


def error_report(problem: ManufacturedProblem, psi: C1Field,
                 alpha: LagrangeField, t: float, dt: float, eps: float,
                 n: int = 5) -> ErrorReport:
    """Measure a state against the problem's exact fields."""
    if not problem.has_exact_psi:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    l2, h1, h2 = c1_error_norms(psi, problem.psi_closures(t), n)
    a_exact = problem.alpha_at(t)
    al2 = w_error_l2(alpha, a_exact, n) if a_exact is not None else np.nan
    return ErrorReport(psi.mesh.h, dt, eps, t, l2, h1, h2, al2,
                       reference=problem.reference)


def convergence_rate(errors, params) -> float:
    """Least-squares slope of log(error) against log(parameter)."""
    errors = np.asarray(errors, dtype=float)
    params = np.asarray(params, dtype=float)
    if errors.size < 2 or errors.size != params.size:
        raise ValueError("need at least two matching samples")
    if np.any(errors <= 0) or np.any(params <= 0):
        raise ValueError("rates need positive errors and parameters")
    return float(np.polyfit(np.log(params), np.log(errors), 1)[0])
