"""Exception hierarchy shared by every module."""


class MvccaError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(MvccaError, ValueError):
    """Inputs have the wrong shape, type, or schema."""


class NumericalError(MvccaError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""
