"""Exception types raised across the hearing aid core."""


class HaCoreError(Exception):
    """Base class for all errors raised by this package."""


class SpecError(HaCoreError, ValueError):
    """Filter bank parameters that cannot be realized."""


class InvalidBandError(HaCoreError, IndexError):
    """Band index outside ``[0, num_bands)``."""


class ShapeError(HaCoreError, ValueError):
    """Array with the wrong shape for the operation."""


class SampleRateError(HaCoreError, ValueError):
    """Audio sample rate does not match the filter bank design rate."""


class ModelFormatError(HaCoreError, ValueError):
    """Model file that is malformed, truncated, or inconsistent."""


class TrainingError(HaCoreError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConfigError(HaCoreError, ValueError):
    """Run configuration that fails validation."""


class DataError(HaCoreError, ValueError):
    """Input data file (audio, dataset, preferences) that cannot be used."""
