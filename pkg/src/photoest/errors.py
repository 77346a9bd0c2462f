"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the region where an operation is defined."""


class NoEmissionError(RuntimeError):
    """A simulated emitter produced no photon within the step cap."""


class FormatError(ValueError):
    """A dataset or model file is malformed or has an unsupported version."""


class AllImpossibleError(ValueError):
    """Every grid point assigns zero likelihood to the data."""


class QuadratureError(RuntimeError):
    """Numerical integration failed to reach the requested accuracy."""


class EigenTrackingError(RuntimeError):
    """The eigenvalue branch through the zero mode cannot be told apart."""


class InsufficientSamplesError(ValueError):
    """Too few estimates were supplied to form a statistic."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


class GridMismatchError(ValueError):
    """Two metric tables were computed on different grids."""


class MissingModelError(ValueError):
    """A neural estimator was requested without a trained model."""
