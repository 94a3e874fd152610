"""Exception hierarchy shared across the package."""


class NCELandscapeError(Exception):
    """Base class for all package errors."""


class DomainError(NCELandscapeError, ValueError):
    """An argument lies outside the domain of the operation."""


class QuadratureConvergenceError(NCELandscapeError, ArithmeticError):
    """Adaptive quadrature ran out of subdivisions before meeting tolerance.

    The best estimate and its error estimate are kept on the exception so
    callers can decide whether the partial answer is usable.
    """

    def __init__(self, message, estimate, error):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class SingularHessianError(NCELandscapeError, ArithmeticError):
    """The Hessian is numerically singular (relative pivot below the floor)."""


class AlreadyOptimal(NCELandscapeError):
    """Raised by a normalized step when the gradient is exactly zero."""


class DivergenceError(NCELandscapeError, ArithmeticError):
    """An optimizer produced a non-finite loss or gradient.

    ``trace`` holds the records collected up to the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class UnderflowError(NCELandscapeError, ArithmeticError):
    """A landscape quantity is too small to be represented on a linear scale."""


class ConfigError(NCELandscapeError, ValueError):
    """An experiment configuration could not be parsed or validated."""
