"""Exception hierarchy.

``ValidationError`` subclasses signal bad inputs (CLI exit code 1);
``NumericalError`` subclasses signal a computation that could not complete
(CLI exit code 2).
"""


class RotinvError(Exception):
    """Base class for all package errors."""


class ValidationError(RotinvError, ValueError):
    pass


class NumericalError(RotinvError, ArithmeticError):
    pass


class InvalidSelection(ValidationError):
    pass


class RealityViolation(ValidationError):
    pass


class SizeMismatch(ValidationError):
    pass


class InvalidGamma(ValidationError):
    pass


class BasisMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class SchemeMismatch(ValidationError):
    pass


class ZeroReference(ValidationError):
    pass


class DegenerateAngle(ValidationError):
    """Raised by :func:`rotinv.recover.bin_map` when a frequency is zero."""


class ConfigError(ValidationError):
    pass


class FormatError(ValidationError):
    pass


class IterationFailure(NumericalError):
    pass


class RankDeficiency(NumericalError):
    pass


class PlacementFailure(NumericalError):
    pass
