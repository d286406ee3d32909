"""Exception hierarchy shared by every module."""


class EmisrError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(EmisrError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class FormatError(EmisrError, ValueError):
    """A file does not conform to its binary or text format."""


class IoError(EmisrError, OSError):
    """Reading or writing a file failed."""


class InsufficientDataError(DomainError):
    pass


class DegenerateInputError(DomainError):
    pass


class DegenerateSplitError(DomainError):
    pass


class ShapeError(EmisrError, ValueError):
    pass


class NumericsError(EmisrError, ArithmeticError):
    pass


class StateError(EmisrError, RuntimeError):
    """An object is used before it is ready (unfitted transform, missing checkpoint)."""


class ConfigError(EmisrError, ValueError):
    """Invalid configuration. ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
