"""Exception types shared across the package."""


class MatteKitError(Exception):
    """Base class for all package errors."""


class ContractError(MatteKitError, ValueError):
    """An operation was called with arguments violating its contract."""


class GenerationError(MatteKitError):
    """Synthetic scene generation could not satisfy the scene spec."""


class AugmentationError(MatteKitError):
    """Augmentation could not produce a valid sample."""


class DatasetError(MatteKitError):
    """Dataset directory or manifest is malformed or incomplete."""


class GuidanceError(MatteKitError, ValueError):
    """Guidance payload is invalid (bad clicks, empty instance, ...)."""


class ShapeError(MatteKitError, ValueError):
    """Tensor spatial size violates a shape requirement."""


class NumericError(MatteKitError):
    """A non-finite value was produced where finite values are required."""


class ConfigError(MatteKitError, ValueError):
    """A configuration value is out of its allowed range."""


class MetricError(MatteKitError, ValueError):
    """Metric computation was requested over an invalid region."""


class ResolutionError(MatteKitError):
    """Input resolution exceeds what an operation supports."""
