"""Exception types raised across the toolkit."""


class GilsError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(GilsError, ValueError):
    """Array shapes do not compose."""


class ConfigError(GilsError, ValueError):
    """A configuration value violates its declared range."""


class NumericError(GilsError, ArithmeticError):
    """A non-finite value escaped a computation."""


class InsufficientDataError(GilsError, ValueError):
    pass


class FitError(GilsError, RuntimeError):
    pass


class DataFormatError(GilsError, ValueError):
    """Malformed dataset file."""


class ParseError(DataFormatError):
    pass


class TruncatedDataError(DataFormatError):
    """Binary payload shorter than its header promises."""

    def __init__(self, expected: int, actual: int):
        super().__init__(f"truncated payload: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual
