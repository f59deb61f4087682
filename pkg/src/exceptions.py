"""
Errors raised by the inference library.

Everything derives from MagiError. ValidationError covers bad inputs (the CLI exits with code 2), NumericalError covers
failures of the numerics themselves (the CLI exits with code 3).
"""
from typing import Optional


class MagiError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(MagiError):
    """Inputs that do not satisfy a documented precondition."""

    exit_code = 2


class UnknownModelError(ValidationError):
    """A built-in model name that does not exist."""


class DslSyntaxError(ValidationError):
    """A syntax error in an ODE description, with its position in the source."""

    def __init__(self, message: str, line: int, column: int) -> None:
        """Constructor."""
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UndefinedSymbolError(ValidationError):
    """An expression refers to a name that was never declared."""

    def __init__(self, symbol: str, line: int, column: int) -> None:
        """Constructor."""
        super().__init__(f"line {line}, column {column}: undefined symbol '{symbol}'")
        self.symbol = symbol
        self.line = line
        self.column = column


class ConfigError(ValidationError):
    """A run configuration that cannot be used."""


class NumericalError(MagiError):
    """The numerics failed (non-finite values, failed factorizations, ...)."""

    exit_code = 3


class IntegrationError(NumericalError):
    """The numerical integrator produced a non-finite state."""

    def __init__(self, message: str, time: float) -> None:
        """Constructor."""
        super().__init__(f"{message} (at t = {time:.6g})")
        self.time = time


class DslEvaluationError(NumericalError):
    """Evaluating a parsed ODE description produced non-finite values."""


class FactorizationError(NumericalError):
    """A covariance matrix could not be factorized, even with the largest diagonal jitter."""


class BandDivergenceError(NumericalError):
    """The band approximation of a component's GP matrices made the log-posterior non-finite."""

    def __init__(self, component: int, band_size: int, component_name: Optional[str] = None) -> None:
        """Constructor."""
        label = component_name if component_name is not None else str(component)
        super().__init__(
            f"log-posterior is not finite for component {label}; the band approximation (band_size={band_size}) "
            "may have diverged, try a larger band_size"
        )
        self.component = component
        self.band_size = band_size
