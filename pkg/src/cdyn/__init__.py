"""Constrained and nonsmooth multibody dynamics: DAE integrators, Moreau-Jean
time stepping and LCP solvers."""
from .core import (MechanicalSystem, SystemState, Trajectory, constraint_residuals,
                   kinetic_energy, total_energy)
from .errors import (AnalysisError, CapacityError, CdynError, ContractError,
                     DerivativeAvailabilityError, InfeasibleError, PackingError,
                     ProjectionFailure, RankDeficiencyError, StepFailure,
                     ToleranceAmbiguityError, UnsupportedOperationError)
from .integrators import IntegratorConfig, ImplicitDae
from .lcp import ContactProblem, LcpSolution, LcpSolverConfig
from .linear_dae import CanonicalBlocks, LinearDae, SourceTerm
from .nonsmooth import NonsmoothConfig

__all__ = [
    "AnalysisError", "CanonicalBlocks", "CapacityError", "CdynError", "ContactProblem",
    "ContractError", "DerivativeAvailabilityError", "ImplicitDae", "InfeasibleError",
    "IntegratorConfig", "LcpSolution", "LcpSolverConfig", "LinearDae", "MechanicalSystem",
    "NonsmoothConfig", "PackingError", "ProjectionFailure", "RankDeficiencyError",
    "SourceTerm", "StepFailure", "SystemState", "ToleranceAmbiguityError", "Trajectory",
    "UnsupportedOperationError", "constraint_residuals", "kinetic_energy", "total_energy",
]
