"""Exception types shared across the package."""


class DJSError(Exception):
    """Base class for all errors raised by djs."""


class ConfigError(DJSError, ValueError):
    """Invalid configuration or invalid input to a public function."""


class NumericalError(DJSError, ArithmeticError):
    """A numerical routine failed. ``operation`` names the routine."""

    def __init__(self, message, operation=None, **context):
        super().__init__(message)
        self.operation = operation
        self.context = context


class ConvergenceError(NumericalError):
    """An iteration hit its budget. ``residual`` is the last residual seen."""

    def __init__(self, message, operation=None, residual=None, **context):
        super().__init__(message, operation=operation, **context)
        self.residual = residual


class BranchError(NumericalError):
    """A continuation path jumped between solution branches."""
