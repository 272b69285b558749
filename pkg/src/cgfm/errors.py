"""Exception hierarchy shared by all modules."""


class CGFMError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CGFMError, ValueError):
    pass


class DomainError(CGFMError, ValueError):
    """A scalar argument lies outside the interval an operation is defined on."""


class ShapeError(CGFMError, ValueError):
    pass


class InputError(CGFMError, ValueError):
    pass


class NonFiniteError(CGFMError, FloatingPointError):
    pass


class FormatError(CGFMError, ValueError):
    pass


class VersionError(FormatError):
    pass


class AuxLookupError(CGFMError, LookupError):
    pass


class DimensionError(CGFMError, ValueError):
    pass


class AlignmentError(CGFMError, ValueError):
    pass


class SizingError(CGFMError, ValueError):
    pass


class DegenerateError(CGFMError, ValueError):
    pass


class FingerprintError(CGFMError, ValueError):
    pass


class UnderflowError(CGFMError, FloatingPointError):
    pass


class BudgetError(CGFMError, RuntimeError):
    pass
