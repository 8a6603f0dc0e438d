"""Exception hierarchy shared by the library and the command line."""


class ClusterGofError(Exception):
    """Base class for all errors raised by clustergof."""


class DomainError(ClusterGofError, ValueError):
    """Argument outside the domain of a numerical routine."""


class ConfigurationError(ClusterGofError, ValueError):
    """Tuning parameters or test settings are inconsistent."""


class DataValidationError(ClusterGofError, ValueError):
    """Input data or posterior files fail validation."""


class UnsupportedError(ClusterGofError, NotImplementedError):
    """Requested operation is not available for this family or basis."""


class DegeneratePartitionError(ClusterGofError, ValueError):
    """Equal-probability regions collapse because of atomic posteriors."""


class NumericalError(ClusterGofError, RuntimeError):
    """An iterative routine failed to produce a usable result."""


class EMConvergenceError(NumericalError):
    """No EM start converged; ``best`` holds the best partial fit."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
