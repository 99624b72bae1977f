"""Exception types shared across the package."""


class GvvadError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GvvadError):
    """Invalid arguments, configuration values, or dataset contents."""


class ShapeError(ValidationError):
    """Array shapes do not satisfy an operation's contract."""


class DataFormatError(ValidationError):
    """A data file is malformed, truncated, or fails its integrity check."""
