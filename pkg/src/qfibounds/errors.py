"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes (validation/usage 2, integrity 3, capacity 4).
"""


class QFIError(Exception):
    """Base class for library errors."""


class ValidationError(QFIError, ValueError):
    """Input violates a documented precondition."""


class InsufficientDataError(ValidationError):
    """Too few shadows for the requested U-statistic."""


class CapacityError(QFIError):
    """A dense construction would exceed the configured dimension cap."""


class NumericalIntegrityError(QFIError, ArithmeticError):
    """A numerical invariant (probability mass, monotonicity, ...) broke."""
