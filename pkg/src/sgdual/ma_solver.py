"""Newton and fixed-point solvers for the regularized Monge-Ampere problem.

At each time level the potential solves

    -eps*(lap psi, lap v) + (det(D^2 psi), v) = (alpha, v) + <eps*g, v>

over the test space with vanishing normal derivative, together with the
prescribed-mean constraint (psi, 1) = gamma.  The flux data g is the
prescribed normal derivative of lap psi (constant eps by default).  The
linearization is eps*(lap,lap) + (cof(D^2 psi) grad, grad), symmetric by
the divergence-free rows of the cofactor matrix; the mean constraint is
enforced through a bordered linear system whose multiplier also absorbs
the constant-test component of the residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import assembly as asm
from .assembly import NeumannData
from .fields import C1Field, LagrangeField, c1_free_dofs
from .mesh import Mesh
from .sparse_linalg import (BorderedSystem, KernelBorderedLU, SolveError,
                            solve_bordered)

__all__ = [
    "MASolverConfig", "BoundaryData", "MASolveReport", "JacobianCache",
    "ma_load", "ma_residual", "newton_solve", "fixed_point_step",
    "elliptic_bootstrap",
]


@dataclass
class MASolverConfig:
    """Knobs for the nonlinear solve at one time level."""

    eps: float
    newton_tol: float = 1e-10
    max_iters: int = 30
    damping: float = 1.0          # initial step-length factor in (0, 1]
    backtracking: bool = True     # halve the step until the residual decreases
    max_halvings: int = 10
    nonconvex_guard: float = 0.2  # forced damping above this det<=0 fraction
    n_quad: int = 4
    scheme: str = "newton"        # "newton" | "fixed_point"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"regularization parameter must be positive, got {self.eps}")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping factor must lie in (0, 1]")
        if self.scheme not in ("newton", "fixed_point"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class BoundaryData:
    """Neumann data for psi plus flux data for lap psi.

    flux(x, y) is the prescribed normal derivative of the Laplacian;
    None selects the default constant eps, so the weak boundary term is
    <eps^2, v>.
    """

    neumann: NeumannData
    flux: Callable | None = None

    @staticmethod
    def default() -> "BoundaryData":
        return BoundaryData(NeumannData.zero(), None)


@dataclass
class MASolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    constraint_history: list = field(default_factory=list)
    constraint_residual: float = np.nan
    converged: bool = False
    guard_engaged: bool = False
    nonconvex_fraction: float = np.nan
    multiplier: float = np.nan
    refreshes: int = 0
    message: str = ""



def _kernel_and_pin(mesh: Mesh):
    """Constant-field direction in free-dof coordinates, plus a central
    value dof to pin when deflating it out of the singular Newton matrix."""
    key = "ma_kernel_pin"
    if key not in mesh._cache:
        free = c1_free_dofs(mesh)
        e = (free % 4 == 0).astype(float)  # constants: value dofs only
        g = 4 * mesh.node_index(mesh.nx // 2, mesh.ny // 2)
        mesh._cache[key] = (e, int(np.searchsorted(free, g)))
    return mesh._cache[key]


def ma_load(mesh: Mesh, alpha, eps: float, bdry: BoundaryData | None = None,
            n: int = 4) -> np.ndarray:
    """Full load vector (alpha, phi_i) + <eps*flux, phi_i>."""
    if bdry is None:
        bdry = BoundaryData.default()
    load = asm.volume_load_c1(mesh, alpha, n)
    if bdry.flux is None:
        density = lambda x, y: np.full_like(np.asarray(x, dtype=float), eps * eps)
    else:
        g = bdry.flux
        density = lambda x, y: eps * np.asarray(g(x, y), dtype=float)
    return load + asm.assemble_boundary_flux(mesh, density, n1d=max(n, 4))


def _abs_biharmonic(mesh, n):
    key = ("A_bih_abs", n)
    if key not in mesh._cache:
        A = asm.assemble_biharmonic(mesh, n).copy()
        A.data = np.abs(A.data)
        mesh._cache[key] = A
    return mesh._cache[key]


def _residual_full(mesh, psi, load, eps, n):
    """Residual over all dofs; also returns det(D^2 psi) at quadrature."""
    det = asm.det_at_quad(mesh, psi, n)
    r = asm.assemble_det_functional(mesh, psi, n, det=det)
    r -= eps * (asm.assemble_biharmonic(mesh, n) @ psi.dofs)
    r -= load
    return r, det


def ma_residual(psi: C1Field, alpha, eps: float,
                bdry: BoundaryData | None = None, n: int = 4) -> np.ndarray:
    """Galerkin residual restricted to the constrained test space."""
    mesh = psi.mesh
    load = ma_load(mesh, alpha, eps, bdry, n)
    r, _ = _residual_full(mesh, psi, load, eps, n)
    return r[c1_free_dofs(mesh)]


def _projected_norm(r_f, c_f):
    """Norm of the residual with the constant-test component removed.

    The mean multiplier makes the residual parallel to c at convergence;
    what must vanish is the component orthogonal to c.
    """
    coeff = (c_f @ r_f) / (c_f @ c_f)
    return float(np.linalg.norm(r_f - coeff * c_f))


def _shift_to_mean(psi, cvec, gamma, area):
    """Add a constant so that (psi, 1) = gamma exactly."""
    mu = cvec @ psi.dofs
    psi.dofs[0::4] += (gamma - mu) / area


def elliptic_bootstrap(mesh: Mesh, alpha, eps: float,
                       bdry: BoundaryData | None = None, gamma: float = 0.0,
                       n: int = 4) -> C1Field:
    """Initial guess: the linear problem with the determinant term dropped,
    eps*(lap psi, lap v) = -(alpha, v) - <eps*flux, v>."""
    if bdry is None:
        bdry = BoundaryData.default()
    free = c1_free_dofs(mesh)
    psi = C1Field(mesh)
    asm.apply_neumann_bc(psi, bdry.neumann)
    A = (eps * asm.assemble_biharmonic(mesh, n)).tocsr()
    rhs = -ma_load(mesh, alpha, eps, bdry, n) - A @ psi.dofs
    cvec = asm.mean_vector(mesh, n)
    e, pin = _kernel_and_pin(mesh)
    x, _ = solve_bordered(BorderedSystem(
        asm.restrict(A, free), cvec[free], rhs[free],
        gamma - cvec @ psi.dofs,
    ), kernel=e, pin=pin)
    psi.dofs[free] += x
    return psi


def _spd_reference(mesh, eps, n):
    """SPD operator with the Newton matrix's scaling and kernel (constants):
    the linearization at the unit-curvature convex state."""
    key = ("ma_spd_ref", eps, n)
    if key not in mesh._cache:
        mesh._cache[key] = (
            eps * asm.assemble_biharmonic(mesh, n) + asm.assemble_stiffness(mesh, n)
        ).tocsr()
    return mesh._cache[key]


class JacobianCache:
    """Holds one factorized linearized operator for reuse across Newton
    iterations and across time steps (quasi-Newton).

    Only the step direction comes from the cached factorization; residual
    evaluation and the convergence test always use the current state, so
    reuse affects the iteration count but never the reported accuracy.
    At most one factorization is kept alive (they are large).

    ``mu`` is a Levenberg-style shift toward an SPD reference operator:
    along the solution branch the cofactor matrix develops indefinite
    regions and the exact linearization can pass through singularity, at
    which point the raw Newton direction blows up along a soft mode.  The
    shift is escalated only when a step fails and is switched off again
    once full Newton makes progress.
    """

    def __init__(self):
        self.lu: KernelBorderedLU | None = None
        self.fresh = False  # factored at the current Newton iterate
        self.mu = 0.0

    def refresh(self, mesh, psi, eps, n, c_f, e_ker, pin):
        free = c1_free_dofs(mesh)
        self.lu = None  # release before factoring; two may not fit in memory
        B = asm.assemble_B(mesh, psi, eps, n)
        if self.mu > 0.0:
            B = B + self.mu * _spd_reference(mesh, eps, n)
        self.lu = KernelBorderedLU(asm.restrict(B, free), c_f, e_ker, pin,
                                   symmetric=True)
        self.fresh = True


def newton_solve(alpha, config: MASolverConfig,
                 bdry: BoundaryData | None = None, gamma: float = 0.0,
                 guess: C1Field | None = None, mesh: Mesh | None = None,
                 jac_cache: JacobianCache | None = None):
    """Damped Newton iteration for the regularized Monge-Ampere problem.

    Returns (psi, report); non-convergence is reported, not raised.
    Convergence is measured on the projected residual relative to the
    load norm, with an absolute floor of 1e-12.  Passing a JacobianCache
    enables factorization reuse across calls; a stalled or slow iteration
    triggers re-linearization at the current iterate before giving up.
    """
    if mesh is None:
        mesh = alpha.mesh if isinstance(alpha, (LagrangeField, C1Field)) else guess.mesh
    if bdry is None:
        bdry = BoundaryData.default()
    if jac_cache is None:
        jac_cache = JacobianCache()
    eps, n = config.eps, config.n_quad
    free = c1_free_dofs(mesh)
    cvec = asm.mean_vector(mesh, n)
    c_f = cvec[free]
    e_ker, pin = _kernel_and_pin(mesh)

    if guess is None:
        psi = elliptic_bootstrap(mesh, alpha, eps, bdry, gamma, n)
    else:
        psi = guess.copy()
        asm.apply_neumann_bc(psi, bdry.neumann)
    _shift_to_mean(psi, cvec, gamma, mesh.domain.area)

    load = ma_load(mesh, alpha, eps, bdry, n)
    load_norm = np.linalg.norm(load[free])
    A_abs = _abs_biharmonic(mesh, n)
    mach = np.finfo(float).eps

    def attainable_tol(state):
        # cancellation noise of the residual assembly: the achievable floor
        # grows with the magnitudes summed inside eps*(lap, lap) + load
        noise = mach * (eps * np.linalg.norm(A_abs @ np.abs(state.dofs))
                        + load_norm)
        return max(config.newton_tol * load_norm, 1e-12, 8.0 * noise)

    tol = attainable_tol(psi)

    report = MASolveReport()
    r_full, det = _residual_full(mesh, psi, load, eps, n)
    rn = _projected_norm(r_full[free], c_f)
    report.residual_history.append(rn)
    report.constraint_history.append(abs(cvec @ psi.dofs - gamma))
    frac_prev = float(np.mean(det <= 0.0))

    for it in range(config.max_iters):
        tol = attainable_tol(psi)
        if rn <= tol:
            report.converged = True
            break
        frac = float(np.mean(det <= 0.0))
        report.nonconvex_fraction = frac
        # forced damping only when convexity is being LOST, not merely absent:
        # compactly supported data keeps det near zero (either sign) over most
        # of the domain even at the solution, so the raw fraction is no signal
        losing_convexity = frac > config.nonconvex_guard and frac > frac_prev + 0.05
        jac_cache.fresh = False

        # one pass with the cached operator; on a stall, re-linearize at the
        # current iterate, then escalate the SPD shift before giving up
        accepted = False
        for attempt in range(8):
            try:
                if jac_cache.lu is None:
                    jac_cache.refresh(mesh, psi, eps, n, c_f, e_ker, pin)
                    report.refreshes += 1
                delta, lam = jac_cache.lu.solve(
                    r_full[free], gamma - cvec @ psi.dofs
                )
            except SolveError as exc:
                report.message = f"linear solve failed at iteration {it}: {exc}"
                report.constraint_residual = abs(cvec @ psi.dofs - gamma)
                return psi, report
            report.multiplier = lam

            s = config.damping
            if losing_convexity and rn > 1e3 * tol:
                s *= 0.5
                report.guard_engaged = True
            trial = psi.copy()
            for _ in range(config.max_halvings + 1):
                trial.dofs[free] = psi.dofs[free] + s * delta
                r_trial, det_trial = _residual_full(mesh, trial, load, eps, n)
                rn_trial = _projected_norm(r_trial[free], c_f)
                if not config.backtracking or (
                    np.isfinite(rn_trial) and rn_trial < rn
                ):
                    accepted = True
                    break
                s *= 0.5
            if accepted:
                break
            if not jac_cache.fresh:
                jac_cache.lu = None  # stale direction failed: refresh first
            elif jac_cache.mu < 1e4:
                jac_cache.mu = max(16 * jac_cache.mu, 1e-4)
                jac_cache.lu = None
            else:
                break

        report.iterations = it + 1
        if config.backtracking and not accepted:
            report.message = "line search stalled: no residual decrease"
            break
        contraction = rn_trial / rn if rn > 0 else 0.0
        psi, r_full, det, rn = trial, r_trial, det_trial, rn_trial
        frac_prev = frac
        report.residual_history.append(rn)
        report.constraint_history.append(abs(cvec @ psi.dofs - gamma))
        jac_cache.mu *= 0.5  # relax the shift as steps succeed
        if jac_cache.mu < 1e-6:
            jac_cache.mu = 0.0
        slow = 0.25 if jac_cache.mu == 0.0 else 0.75
        if contraction > slow and not jac_cache.fresh:
            jac_cache.lu = None  # too slow with the stale operator
    else:
        report.message = f"no convergence within {config.max_iters} iterations"

    if not report.converged and rn <= attainable_tol(psi):
        report.converged = True
    report.constraint_residual = abs(cvec @ psi.dofs - gamma)
    return psi, report


def fixed_point_step(w: C1Field, alpha, config: MASolverConfig,
                     bdry: BoundaryData | None = None, gamma: float = 0.0,
                     linearize_at: C1Field | None = None) -> C1Field:
    """One application of the contraction map behind the fixed-point scheme.

    The linearized operator is frozen at ``linearize_at`` (default: w, in
    which case the step coincides with an undamped Newton step).  Fixed
    points solve the discrete Monge-Ampere problem.
    """
    if bdry is None:
        bdry = BoundaryData.default()
    mesh = w.mesh
    eps, n = config.eps, config.n_quad
    free = c1_free_dofs(mesh)
    cvec = asm.mean_vector(mesh, n)
    load = ma_load(mesh, alpha, eps, bdry, n)
    r_full, _ = _residual_full(mesh, w, load, eps, n)
    e, pin = _kernel_and_pin(mesh)
    B = asm.assemble_B(mesh, linearize_at if linearize_at is not None else w, eps, n)
    lu = KernelBorderedLU(asm.restrict(B, free), cvec[free], e, pin, symmetric=True)
    delta, _ = lu.solve(r_full[free], gamma - cvec @ w.dofs)
    out = w.copy()
    out.dofs[free] += delta
    return out
