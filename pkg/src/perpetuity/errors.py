"""Exception hierarchy shared by the library and the CLI.

The CLI maps ``ValidationError`` to exit status 2 and every other
``PerpetuityError`` to exit status 3.
"""


class PerpetuityError(Exception):
    """Base class for all library errors."""


class ValidationError(PerpetuityError, ValueError):
    """Malformed descriptor, configuration or argument."""


class NonNegativeDriftError(ValidationError):
    """E[log|X|] >= 0, so the perpetuity series does not converge."""


class DomainError(PerpetuityError, ValueError):
    """Argument outside the region where a quantity is finite or defined."""

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class NoCramerRootError(PerpetuityError):
    """h(s) - 1 never changes sign in the searchable domain."""


class BoundaryRootError(NoCramerRootError):
    """The Cramer root sits on (or numerically at) the edge of the domain."""


class TruncationError(PerpetuityError):
    """A truncated series leaves a remainder larger than allowed."""

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class UnsupportedModelError(PerpetuityError):
    """The requested computation has no implementation for this model kind."""


class DegenerateModelError(PerpetuityError):
    """Zero variance where a normal approximation needs a positive one."""


class GuardLimitError(PerpetuityError):
    """An a.s. finite loop exceeded its step budget."""


class InfeasibleError(PerpetuityError):
    """Requested x is too deep for plain Monte Carlo at this sample size."""

    def __init__(self, message, feasible_log_x_max=None):
        super().__init__(message)
        self.feasible_log_x_max = feasible_log_x_max


class UnstableEstimateError(PerpetuityError):
    """Monte Carlo moment estimate dominated by a handful of samples."""


class BracketError(PerpetuityError):
    """Root bracket could not be established for a noisy curve."""
