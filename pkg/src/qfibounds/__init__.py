"""Bounds on the quantum Fisher information from randomized measurements."""

from .errors import CapacityError, InsufficientDataError, NumericalIntegrityError, QFIError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "InsufficientDataError",
    "NumericalIntegrityError",
    "QFIError",
    "ValidationError",
    "__version__",
]
