"""Time loop: alternate Monge-Ampere solves and characteristic transport.

Initialization interpolates (or L2-projects) the initial density and
solves the potential once; every step then advances the density along
the characteristics of the current velocity and re-solves the potential
from the new density, warm-starting the Newton iteration.  The state at
index m always carries the matched pair (psi_m, alpha_m) at time m*dt.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import assembly as asm
from .fields import C1Field, LagrangeField, w_boundary_dofs
from .ma_solver import (BoundaryData, JacobianCache, MASolveReport,
                        MASolverConfig, newton_solve)
from .mesh import Mesh
from .mms import ManufacturedProblem
from .transport import transport_step

__all__ = ["SimConfig", "SimState", "initialize", "step", "run"]


class SimulationError(RuntimeError):
    """Raised when a step cannot be completed (solver non-convergence)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SimConfig:
    """Full description of one run."""

    problem: ManufacturedProblem
    nx: int
    eps: float = 0.01
    dt: float = 0.001
    t_final: float = 0.1
    ny: int | None = None
    degree: int = 3
    n_quad: int = 4
    transport_variant: str = "projection"
    foot_policy: str = "clamp"
    alpha0_mode: str = "interpolate"  # "interpolate" | "project"
    snapshot_times: tuple = ()
    solver: MASolverConfig | None = None
    cold_start_stages: int = 4  # load-continuation stages for the t=0 solve

    def __post_init__(self):
        if self.ny is None:
            self.ny = self.nx
        if self.dt <= 0 or self.t_final < 0:
            raise ValueError("need dt > 0 and t_final >= 0")
        if self.alpha0_mode not in ("interpolate", "project"):
            raise ValueError(f"unknown alpha0 mode {self.alpha0_mode!r}")
        if abs(self.n_steps * self.dt - self.t_final) > 1e-9 * max(self.t_final, self.dt):
            raise ValueError(
                f"dt={self.dt} does not divide t_final={self.t_final}"
            )
        if self.solver is None:
            self.solver = MASolverConfig(eps=self.eps, n_quad=self.n_quad)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def build_mesh(self) -> Mesh:
        return Mesh(self.problem.domain, self.nx, self.ny)

    def boundary_data(self, t: float) -> BoundaryData:
        return BoundaryData(
            neumann=self.problem.neumann(t),
            flux=self.problem.flux_at(t),
        )


@dataclass
class SimState:
    """One time level: the matched pair (psi_m, alpha_m) at t = m*dt."""

    m: int
    t: float
    psi: C1Field
    alpha: LagrangeField
    report: MASolveReport = field(default_factory=MASolveReport)


def _jac_cache(mesh) -> JacobianCache:
    """Per-mesh factorization reuse; reset at the start of every run."""
    return mesh._cache.setdefault("sim_jac_cache", JacobianCache())


def _project_alpha0(mesh, k, alpha0, n):
    """L2 projection of the initial density onto the Lagrange space with
    its boundary values interpolated (matching the transport space)."""
    from .fields import w_node_coords
    from .transport import _mass_solver

    rhs = asm.volume_load_w(mesh, k, alpha0, n)
    bdofs = w_boundary_dofs(mesh, k)
    solver = _mass_solver(mesh, k, n)
    xy = w_node_coords(mesh, k)[bdofs]
    out = np.zeros(rhs.size)
    out[bdofs] = np.asarray(alpha0(xy[:, 0], xy[:, 1]), dtype=float)
    mask = np.ones(rhs.size, dtype=bool)
    mask[bdofs] = False
    out[mask] = solver.solve_interior(rhs - solver.boundary_moment(out))
    return LagrangeField(mesh, k, out)


def initialize(config: SimConfig) -> SimState:
    """Interpolate the initial density and solve the potential at t=0.

    The cold start ramps the density through a few continuation stages:
    the regularized problem has spurious nonlinear branches, and following
    the trivial-load branch lands the Newton iteration on the physical
    (convex-core) solution.
    """
    mesh = config.build_mesh()
    mesh._cache["sim_jac_cache"] = JacobianCache()  # fresh per run
    prob = config.problem
    if config.alpha0_mode == "project":
        alpha = _project_alpha0(mesh, config.degree, prob.alpha0, config.n_quad)
    else:
        alpha = LagrangeField.interpolate(mesh, config.degree, prob.alpha0)

    bdry = config.boundary_data(0.0)
    gamma = prob.mean_at(0.0)
    guess = None
    stages = config.cold_start_stages if np.any(alpha.dofs) else 0
    for s in np.linspace(0.0, 1.0, stages + 1)[:-1]:
        stage = LagrangeField(mesh, config.degree, s * alpha.dofs)
        guess, rep = newton_solve(stage, config.solver, bdry=bdry,
                                  gamma=gamma, guess=guess, mesh=mesh,
                                  jac_cache=_jac_cache(mesh))
        if not rep.converged:
            raise SimulationError(
                f"continuation stage s={s:g} failed at t=0: {rep.message}", rep
            )
    psi, report = newton_solve(alpha, config.solver, bdry=bdry,
                               gamma=gamma, guess=guess, mesh=mesh,
                               jac_cache=_jac_cache(mesh))
    if not report.converged:
        raise SimulationError(
            f"Monge-Ampere solve failed at t=0: {report.message}", report
        )
    return SimState(0, 0.0, psi, alpha, report)


def step(state: SimState, config: SimConfig) -> SimState:
    """One step: transport the density, then re-solve the potential."""
    prob = config.problem
    t_next = (state.m + 1) * config.dt
    alpha = transport_step(
        state.alpha, state.psi, config.dt,
        g_dirichlet=prob.g_dirichlet_at(t_next),
        source=prob.source_at(t_next),
        policy=config.foot_policy,
        variant=config.transport_variant,
        n_quad=config.n_quad,
        alpha0=prob.alpha0,
    )
    psi, report = newton_solve(
        alpha, config.solver, bdry=config.boundary_data(t_next),
        gamma=prob.mean_at(t_next), guess=state.psi,
        jac_cache=_jac_cache(state.psi.mesh),
    )
    if not report.converged:
        raise SimulationError(
            f"Monge-Ampere solve failed at t={t_next:g} (step {state.m + 1}): "
            f"{report.message}",
            report,
        )
    return SimState(state.m + 1, t_next, psi, alpha, report)


def run(config: SimConfig, snapshot_cb: Callable | None = None):
    """Run the full time loop; returns (final state, snapshot states).

    Snapshots are taken at the time levels closest to the requested
    times; the optional callback receives each snapshot as it is made.
    """
    state = initialize(config)
    n_steps = config.n_steps
    want = sorted(set(
        min(max(int(round(ts / config.dt)), 0), n_steps)
        for ts in config.snapshot_times
    ))
    snapshots = []

    def maybe_snapshot(s):
        if want and s.m == want[0]:
            want.pop(0)
            snapshots.append(s)
            if snapshot_cb is not None:
                snapshot_cb(s)

    maybe_snapshot(state)
    for _ in range(n_steps):
        state = step(state, config)
        maybe_snapshot(state)
    return state, snapshots
