"""Exception hierarchy for ffdconv.

Every error carries the process exit code the CLI reports for it.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4


class FFDConvError(Exception):
    """Base exception for all ffdconv errors."""

    exit_code: int = EXIT_USAGE

    def __init__(self, message: str, exit_code: int | None = None, details: dict | None = None):
        super().__init__(message)
        if exit_code is not None:
            self.exit_code = exit_code
        self.details = details or {}


class DimensionError(FFDConvError, ValueError):
    """Shape mismatch between operands; names the offending axis."""

    def __init__(self, message: str, axis: str | int | None = None, details: dict | None = None):
        super().__init__(message, details=details)
        self.axis = axis


class ConfigError(FFDConvError, ValueError):
    """Invalid configuration file, flag or config record."""

    exit_code = EXIT_CONFIG


class DataError(FFDConvError):
    """Missing, malformed or inconsistent file on disk."""

    exit_code = EXIT_IO


class FeatureError(DataError, ValueError):
    """Audio input that cannot be turned into features."""


class CheckpointError(DataError):
    """Checkpoint magic, version or config mismatch."""


class NumericError(FFDConvError, ArithmeticError):
    """Non-finite values, divergence, or a failed gradient check."""

    exit_code = EXIT_NUMERIC
