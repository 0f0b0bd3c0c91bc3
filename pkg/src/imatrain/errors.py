"""Exception types shared across the package.

The CLI maps these onto exit codes (config -> 2, data -> 3, numeric -> 4);
everything else is an ordinary ValueError.
"""


class ConfigError(Exception):
    """Bad run configuration: unknown key, missing required value, bad type."""


class DataError(Exception):
    """Malformed dataset or checkpoint file, or an empty dataset."""


class CheckpointError(DataError):
    """Checkpoint file does not parse; message names the offending line."""


class NumericError(Exception):
    """Non-finite values where finite arithmetic is required."""
