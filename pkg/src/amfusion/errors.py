"""
Exception hierarchy.

Every error carries a ``category`` that the CLI prints as the first token of
its one-line failure message (``config``, ``io``, ``shape`` or ``numeric``).
"""


class AmfusionError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class ConfigError(AmfusionError):
    """Invalid configuration key, value or architecture invariant."""

    category = "config"


class UsageError(AmfusionError):
    """An API was called in a state it does not support."""

    category = "config"


class DataIOError(AmfusionError):
    """A file or directory could not be read or written."""

    category = "io"


class FormatError(DataIOError):
    """A file was readable but its contents are not in the expected format."""


class ShapeError(AmfusionError, ValueError):
    """Tensor or image dimensions do not fit the operation."""

    category = "shape"


class NumericError(AmfusionError):
    """Non-finite values, failed gradient checks or degenerate numeric input."""

    category = "numeric"

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = dict(details or {})


EXIT_CODES = {
    "config": 2,
    "io": 3,
    "shape": 4,
    "numeric": 5,
    "internal": 1,
}
