"""Exception and warning types shared across the package."""


class DroscError(Exception):
    """Base class for solver errors."""


class NotPositiveDefiniteError(DroscError, ValueError):
    pass


class LcpSolveError(DroscError):
    """Raised when an LCP solve fails; carries the best residual reached."""

    def __init__(self, message, best_y=None, best_residual=float("inf")):
        super().__init__(message)
        self.best_y = best_y
        self.best_residual = best_residual


class InfeasibleError(DroscError):
    """The discrete ambiguity set (or a requested subset of it) is empty."""


class ConvergenceWarning(UserWarning):
    pass
