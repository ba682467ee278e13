"""Exception types raised across the package."""


class LightrayError(Exception):
    """Base class for all package errors."""


class InvalidExtentError(LightrayError, ValueError):
    pass


class InvalidCountError(LightrayError, ValueError):
    pass


class DimensionMismatchError(LightrayError, ValueError):
    pass


class ZeroDataError(LightrayError, ValueError):
    """A quantity that must be nonzero (data, operator, denominator) is zero."""


class KrylovBreakdown(LightrayError, ArithmeticError):
    """Golub-Kahan recurrence produced a vector of (numerically) zero norm."""

    def __init__(self, step: int, norm: float):
        super().__init__(f"Krylov breakdown at step {step} (norm {norm:.3e})")
        self.step = step
        self.norm = norm


class NumericalError(LightrayError, ArithmeticError):
    pass


class ConfigError(LightrayError, ValueError):
    pass
