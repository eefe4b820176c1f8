"""Exception types shared across the package."""


class TorsionLabError(Exception):
    """Base class for all package errors."""


class ValidationError(TorsionLabError, ValueError):
    """Invalid domain description, mesh or configuration."""


class DomainError(TorsionLabError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class PreconditionError(TorsionLabError, ValueError):
    """Input is well formed but does not satisfy an operation's precondition."""


class SolverError(TorsionLabError, RuntimeError):
    """Linear solver failed to reach the requested residual."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
