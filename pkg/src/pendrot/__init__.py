"""Variational tools for the a-priori unstable pendulum-rotator Lagrangian."""

from .errors import (
    ConfigError,
    DegenerateConfiguration,
    InfeasibleLevel,
    InternalError,
    InvalidInput,
    InvalidNeighborhood,
    OptimizationFailure,
    ParseError,
    PendrotError,
    UnsupportedVersion,
)
from .model import (
    AdjustedSpeed,
    CouplingFunction,
    CouplingTerm,
    SystemParams,
    el_residual,
    grad_potential,
    hess_potential,
    lagrangian_density,
    potential,
    validate_assumptions,
)
from .trajectory import BoundaryCondition, Trajectory

__version__ = "0.1.0"
