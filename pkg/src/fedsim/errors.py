"""Exception hierarchy shared across the simulator."""

from __future__ import annotations


class FedSimError(Exception):
    """Base class for every error raised by fedsim."""


class DimensionMismatchError(FedSimError, ValueError):
    def __init__(self, left: int, right: int, what: str = "vectors"):
        self.left = left
        self.right = right
        super().__init__(f"dimension mismatch between {what}: {left} != {right}")


class DomainError(FedSimError, ValueError):
    """An elementwise operation received an entry outside its domain."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


class DivergenceError(FedSimError, ArithmeticError):
    """Training produced a non-finite value."""


class DataError(FedSimError, ValueError):
    pass


class PartitionError(FedSimError, ValueError):
    pass


class CodecError(FedSimError, ValueError):
    """Malformed compression scheme or corrupt payload."""


class ConfigError(FedSimError, ValueError):
    pass
