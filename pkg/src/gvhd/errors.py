"""Exception types shared across the package."""


class GVHDError(Exception):
    """Base class for all package errors."""


class DimensionError(GVHDError, ValueError):
    """Operand or record shapes are incompatible."""


class ContractError(GVHDError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(GVHDError, ValueError):
    """An invalid configuration value or combination."""


class EmptySequenceError(ContractError):
    """A recurrent or convolutional op received zero time steps."""


class IntegrityError(GVHDError):
    """On-disk cohort data disagrees with its manifest."""


class TrainingSetupError(GVHDError):
    """A training split cannot support the requested sampling scheme."""


class UndefinedMetricError(GVHDError, ValueError):
    """A metric is undefined for the given labels (e.g. a single class)."""


class NonFiniteGradientError(GVHDError, FloatingPointError):
    """A gradient contained NaN or Inf."""
