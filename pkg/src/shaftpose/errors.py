"""Exception hierarchy shared across the package.

The service layer maps these onto HTTP statuses and the CLI onto exit
codes: user/config errors exit 1, numeric failures exit 2.
"""


class ShaftPoseError(Exception):
    """Base class for all package errors."""


class ConfigError(ShaftPoseError):
    """Invalid configuration, arguments, or input files."""


class DatasetError(ConfigError):
    """Missing, corrupt, or schema-incompatible dataset artifacts."""


class CheckpointError(ConfigError):
    """Unreadable checkpoint or architecture mismatch."""


class NumericError(ShaftPoseError):
    """Non-finite values or a failed numeric verification."""


class GenerationError(ShaftPoseError):
    """Sample generation exhausted its retry budget (a config problem)."""
