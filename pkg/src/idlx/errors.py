"""Error taxonomy shared across the package.

The CLI maps these onto process exit codes: UsageError -> 1,
DataError/ConfigError -> 2, NumericError -> 3.
"""


class IdlxError(Exception):
    """Base class for all package errors."""


class UsageError(IdlxError):
    """The caller violated an API contract (bad arguments, bad shapes)."""


class DataError(IdlxError):
    """Input data is unreadable, inconsistent, or insufficient."""


class ConfigError(DataError):
    """A configuration value or file is invalid."""


class NumericError(IdlxError):
    """A computation produced non-finite or otherwise unusable numbers."""
