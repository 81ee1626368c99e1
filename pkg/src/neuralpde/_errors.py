"""Exception types shared across the package."""


class NumericalFailure(RuntimeError):
    """A solver or integrator failed to meet its accuracy contract."""

    def __init__(self, message, residual=None, piece=None):
        super().__init__(message)
        self.residual = residual
        self.piece = piece


class UnsupportedError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    """A synthesis plan could not reach its tolerance inside the time budget."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ResolutionExceeded(RuntimeError):
    """Trigonometric projection residual stayed too large at the maximum frequency."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class FormatError(ValueError):
    pass
