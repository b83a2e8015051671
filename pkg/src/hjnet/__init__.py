"""Viscous Hamilton-Jacobi, Fokker-Planck and quasi-stationary mean field game solvers on metric networks."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    DisconnectedGraph,
    HJNetError,
    InvariantViolation,
    KirchhoffWeightSumViolation,
    NonMonotoneScheme,
    SolverFailure,
)
from .network import Edge, GridFunction, Mesh, Network, build_network, load_network  # noqa: F401
