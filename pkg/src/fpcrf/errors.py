"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
file problems with 3 and numeric failures with 4.
"""


class FpcrfError(Exception):
    """Base class for all package errors."""


class ConfigError(FpcrfError, ValueError):
    """Invalid configuration value, optionally tied to a config file line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(FpcrfError, OSError):
    """A file exists but its contents do not follow the expected layout."""


class NumericError(FpcrfError, ArithmeticError):
    """A computation produced non-finite values."""
