"""Exception hierarchy shared across the package."""


class BPMFusionError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BPMFusionError, ValueError):
    """An invalid configuration value or an inconsistent combination of values."""


class DimensionError(BPMFusionError, ValueError):
    """Tensor extents do not satisfy an operator's preconditions."""

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class TapeError(BPMFusionError, RuntimeError):
    """Misuse of the autodiff tape (e.g. running backward twice)."""


class NumericalError(BPMFusionError, ArithmeticError):
    """A non-finite loss or a failed gradient check."""


class DataError(BPMFusionError):
    """Malformed or inconsistent subject data."""


class ParseError(DataError, ValueError):
    """A binary container could not be decoded."""


class BadMagicError(ParseError):
    pass


class TruncatedPayloadError(ParseError):
    pass


class ExtentOverflowError(ParseError):
    pass


class RankMismatchError(ParseError):
    pass


class TrailingDataError(ParseError):
    pass
