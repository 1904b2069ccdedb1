"""Exception hierarchy. The CLI maps these onto exit codes:
config/usage -> 2, data/IO -> 3, numeric failure -> 4.
"""


class UplmError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(UplmError):
    """Invalid configuration value or inconsistent option combination."""


class DataError(UplmError):
    """Bad input data: corpus files, typology tables, checkpoints."""


class CheckpointError(DataError):
    """Unreadable or corrupted checkpoint file."""


class LayoutMismatchError(DataError):
    """Checkpoint parameter layout does not match the expected one."""


class NumericError(UplmError):
    """Non-finite value or diverged optimization."""
