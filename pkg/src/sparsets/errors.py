"""Exception types raised across the package."""


class SparsetsError(Exception):
    """Base class for all package errors."""


class ShapeError(SparsetsError, ValueError):
    """Array shapes disagree with a declared slot, mask, or network spec."""


class TapeStateError(SparsetsError, RuntimeError):
    """A tape was used out of order (e.g. backward before forward)."""


class ThresholdError(SparsetsError, ValueError):
    """The mixture prior admits no real sparsification threshold."""


class DivergenceError(SparsetsError, FloatingPointError):
    """Training produced a non-finite energy.

    ``iteration`` is the step at which the failure was detected and
    ``last_params`` the last finite parameter vector (may be None).
    """

    def __init__(self, message, iteration=None, last_params=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_params = last_params


class SingularHessianError(SparsetsError, ArithmeticError):
    """Cholesky of the structure-restricted Hessian failed at max jitter."""


class DataError(SparsetsError, ValueError):
    """Malformed or insufficient data."""


class ConfigError(SparsetsError, ValueError):
    """Invalid run configuration."""


class MetricError(SparsetsError, ValueError):
    """A metric is undefined for the given inputs."""
