from __future__ import annotations


class WrapfitError(Exception):
    """Base class for all wrapfit errors."""


class DomainError(WrapfitError, ValueError):
    pass


class LatticeCapError(WrapfitError, ValueError):
    pass


class NotPositiveDefiniteError(WrapfitError, ValueError):
    pass


class DegenerateSampleError(WrapfitError, ValueError):
    pass


class NumericalUnderflowError(WrapfitError, ArithmeticError):
    pass


class SingularUpdateError(WrapfitError, RuntimeError):
    pass


class ConvergenceError(WrapfitError, RuntimeError):
    pass


class InitializationError(ConvergenceError):
    pass


class ConfigError(WrapfitError, ValueError):
    pass


class IngestError(WrapfitError, ValueError):
    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
