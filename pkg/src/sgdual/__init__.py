"""Finite element simulator for semigeostrophic flow in dual variables.

The flow is posed as a coupled Monge-Ampere/transport system for a
convex potential and a transported density.  The fully nonlinear
Monge-Ampere equation is regularized by a small bilaplacian term and
discretized with C1-conforming Bogner-Fox-Schmit elements; the transport
equation advances along discrete characteristics with an L2 projection
(or positivity-preserving nodal re-interpolation) onto a Lagrange space.
"""

from .mesh import Domain, Mesh, build_mesh
from .fields import C1Field, LagrangeField
from .ma_solver import BoundaryData, MASolverConfig, newton_solve, fixed_point_step
from .mms import (
    ErrorReport,
    ManufacturedProblem,
    convergence_rate,
    error_report,
    test1_problem,
    test2_problem,
    test3_problem,
)
from .simulation import SimConfig, SimState, initialize, run, step
from .transport import transport_step, velocity_at

__version__ = "0.1.0"

__all__ = [
    "Domain", "Mesh", "build_mesh",
    "C1Field", "LagrangeField",
    "BoundaryData", "MASolverConfig", "newton_solve", "fixed_point_step",
    "ManufacturedProblem", "ErrorReport", "convergence_rate", "error_report",
    "test1_problem", "test2_problem", "test3_problem",
    "SimConfig", "SimState", "initialize", "step", "run",
    "transport_step", "velocity_at",
    "__version__",
]
