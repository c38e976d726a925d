"""Interaction-quench dynamics of a trapped 1D Bose gas.

TEBD evolution of the discretized Lieb-Liniger model, local and non-local
two-particle correlations, and a Yang-Yang thermal reference.
"""

from bosequench.errors import (
    ConfigError,
    FitDomainError,
    FrontNotFound,
    InconsistentEnergyBudget,
    InvariantViolation,
    NoSolution,
    QuadratureTooCoarse,
    ResourceLimit,
    SolverDiverged,
    TruncationBudgetExceeded,
)
from bosequench.grid import (
    AdaptiveDensity,
    ContinuumParams,
    LatticeSpec,
    Uniform,
    build_lattice,
    characteristic_scales,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveDensity",
    "ConfigError",
    "ContinuumParams",
    "FitDomainError",
    "FrontNotFound",
    "InconsistentEnergyBudget",
    "InvariantViolation",
    "LatticeSpec",
    "NoSolution",
    "QuadratureTooCoarse",
    "ResourceLimit",
    "SolverDiverged",
    "TruncationBudgetExceeded",
    "Uniform",
    "build_lattice",
    "characteristic_scales",
]
