"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError -> 3,
anything else -> 4.
"""


class GazeIntentError(Exception):
    """Base class for all package errors."""


class ConfigError(GazeIntentError):
    """Invalid configuration or usage."""


class DataError(GazeIntentError):
    """Malformed or inconsistent input data."""


class ShapeError(GazeIntentError):
    """Tensor shape mismatch in a numeric operation."""
