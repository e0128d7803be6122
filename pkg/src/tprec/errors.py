"""Exception hierarchy shared across the package."""


class TprecError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(TprecError, ValueError):
    """An array argument has an incompatible shape."""


class ArgumentError(TprecError, ValueError):
    """An argument value is invalid (empty lists, unknown names, ...)."""


class DomainError(TprecError, ValueError):
    """A numeric argument lies outside the mathematically valid domain."""


class NumericError(TprecError, ArithmeticError):
    """A computation produced non-finite values or overflowed."""


class ResourceError(TprecError, RuntimeError):
    """A desk-scale guard was exceeded (problem too large for this tool)."""


class ParseError(TprecError, ValueError):
    """An input file could not be parsed."""
