"""Exception types shared across the package."""


class PcdVampError(Exception):
    """Base class for all package errors."""


class InvalidDimensionsError(PcdVampError, ValueError):
    pass


class InvalidShapeError(PcdVampError, ValueError):
    pass


class InvalidParameterError(PcdVampError, ValueError):
    pass


class NumericalFailureError(PcdVampError, ArithmeticError):
    pass


class DegenerateSupportError(PcdVampError):
    """Raised when too few residual coordinates remain to estimate a variance."""


class TheoryViolationError(PcdVampError, AssertionError):
    """A fixed-point iteration broke a property that the analysis guarantees."""


class ParamsFormatError(PcdVampError, ValueError):
    pass


class ConfigError(PcdVampError, ValueError):
    pass
