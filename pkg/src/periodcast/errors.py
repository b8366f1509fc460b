"""Exception hierarchy shared by the library and the CLI."""


class PeriodcastError(Exception):
    """Base class for all library errors."""


class ConfigError(PeriodcastError, ValueError):
    """Invalid configuration or hyperparameter (CLI exit code 2)."""


class DataError(PeriodcastError, ValueError):
    """Malformed or unusable input data (CLI exit code 3)."""


class ShapeError(PeriodcastError, ValueError):
    """Tensor shapes do not conform for an operation."""


class NumericError(PeriodcastError, RuntimeError):
    """Non-finite values or failed factorizations (CLI exit code 4)."""
