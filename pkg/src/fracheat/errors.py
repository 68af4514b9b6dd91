"""Exception types shared across the package."""


class FracHeatError(Exception):
    """Base class for all package errors."""


class DomainError(FracHeatError, ValueError):
    """An argument lies outside the domain of the operation."""


class EllipticityError(DomainError):
    """A coefficient matrix violates the uniform ellipticity bounds."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class QuadratureError(FracHeatError, ArithmeticError):
    """A quadrature did not reach its tolerance within its budget.

    ``partial`` holds the value accumulated so far and ``error`` the
    estimated absolute error at the point of failure.
    """

    def __init__(self, message, partial=float("nan"), error=float("inf")):
        super().__init__(f"{message} (partial={partial!r}, est. error={error!r})")
        self.partial = partial
        self.error = error


class CapacityError(FracHeatError, MemoryError):
    """The requested computation exceeds the configured size budget."""


class NumericError(FracHeatError, ArithmeticError):
    """A dense linear-algebra routine failed."""


class ConfigError(FracHeatError, ValueError):
    """Invalid configuration document; ``lineno`` is 1-based or None."""

    def __init__(self, message, lineno=None):
        loc = f"line {lineno}: " if lineno is not None else ""
        super().__init__(loc + message)
        self.lineno = lineno
        self.reason = message
