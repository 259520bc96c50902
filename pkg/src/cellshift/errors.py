"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError and its
subclasses -> 3, NumericError -> 4.
"""


class CellShiftError(Exception):
    """Base class for all package errors."""


class ShapeError(CellShiftError):
    """Tensor extents do not line up for the requested operation."""


class ArgumentError(CellShiftError):
    """An argument violates an operation's preconditions."""


class ConfigError(CellShiftError):
    """A configuration value is invalid or inconsistent."""


class DataError(CellShiftError):
    """A dataset, manifest, or shard is unusable."""


class ConditionLookupError(DataError):
    """A condition id or key is unknown to the manifest or model."""


class IngestionError(DataError):
    """Input data violates a structural invariant."""


class CorruptShardError(DataError):
    """A shard file failed its checksum or header validation."""


class SamplingError(DataError):
    """A training batch cannot be drawn from the store."""


class CheckpointError(CellShiftError):
    """A checkpoint is malformed or does not match the model config."""


class NumericError(CellShiftError):
    """A computation produced non-finite values."""
