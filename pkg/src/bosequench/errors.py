"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent input parameters."""


class InvariantViolation(RuntimeError):
    """An internal precondition (e.g. gauge position) does not hold."""


class TruncationBudgetExceeded(RuntimeError):
    """Accumulated discarded weight went above the configured budget.

    The partial evolution log is attached as ``log``.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class ResourceLimit(RuntimeError):
    """A dense object would exceed the configured size cap."""


class SolverDiverged(RuntimeError):
    """Iterative solver did not converge; ``history`` holds residuals."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class QuadratureTooCoarse(RuntimeError):
    pass


class NoSolution(ValueError):
    pass


class FitDomainError(ValueError):
    pass


class FrontNotFound(ValueError):
    pass


class InconsistentEnergyBudget(ValueError):
    pass
