"""Exception hierarchy shared by all modules."""


class CdynError(Exception):
    """Base class for library errors."""


class ContractError(CdynError, ValueError):
    """Inputs violate a documented precondition (shapes, ranges)."""


class UnsupportedOperationError(CdynError):
    """The system lacks the data required for the requested operation."""


class RankDeficiencyError(CdynError, ArithmeticError):
    """A saddle-point or mass system is singular at the current state."""


class StepFailure(CdynError, RuntimeError):
    """A time step could not be completed.

    ``residual`` holds the last residual norm, ``step`` the index of the
    failing step when known.
    """

    def __init__(self, message, residual=float("nan"), step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class ProjectionFailure(StepFailure):
    """Newton iteration of a manifold projection did not converge."""


class AnalysisError(CdynError):
    """Structural analysis of a DAE failed (e.g. singular pencil)."""


class ToleranceAmbiguityError(AnalysisError):
    """A rank decision falls too close to the tolerance to be trusted."""


class DerivativeAvailabilityError(CdynError):
    """A source term cannot supply the derivative order that is needed."""


class CapacityError(CdynError):
    """Problem is too large for the requested (exhaustive) method."""


class InfeasibleError(CdynError):
    """No candidate satisfies the complementarity conditions."""


class PackingError(CdynError):
    """Rejection sampling could not place all particles."""
