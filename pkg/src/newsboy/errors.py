"""Exception hierarchy.

Each error family maps onto one CLI exit code (see ``newsboy.cli``).
"""


class NewsboyError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(NewsboyError, ValueError):
    """Invalid parameters or run configuration."""

    exit_code = 2


class DomainError(ConfigError):
    """A numeric argument lies outside the domain of a distribution function."""


class DataError(NewsboyError, ValueError):
    """Malformed, duplicated or insufficient input data."""

    exit_code = 3


class NumericError(NewsboyError, ArithmeticError):
    """A numerical routine failed to converge or to bracket a root."""

    exit_code = 4

    def __init__(self, message, **diagnostics):
        if diagnostics:
            detail = ", ".join(f"{k}={v!r}" for k, v in sorted(diagnostics.items()))
            message = f"{message} ({detail})"
        super().__init__(message)
        self.diagnostics = diagnostics


class NoInteriorSolution(NumericError):
    """The optimality condition has no root in (0, inf); the best allocation is 0."""
