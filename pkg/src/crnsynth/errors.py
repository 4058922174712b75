"""Exception types shared across the toolkit."""


class CrnError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(CrnError, ValueError):
    """Tensor shapes or resolutions do not line up."""


class BoundsError(CrnError, ValueError):
    """A label or index falls outside its declared range."""


class InvariantError(CrnError, ValueError):
    """A structural invariant (e.g. partition of unity) is violated."""


class SchemaError(CrnError, ValueError):
    """A manifest, archive, or config does not match its schema."""


class ConfigError(CrnError, ValueError):
    """A run configuration is invalid (unknown key, bad value)."""


class ManifestError(CrnError, ValueError):
    """A dataset or condition manifest references missing data."""


class CapacityError(CrnError, ValueError):
    """A requested resolution exceeds an architecture's configured maximum."""


class DegenerateStatisticsError(CrnError, ValueError):
    """Running statistics are unusable (zero or negative means)."""


class TrainingDivergedError(CrnError, RuntimeError):
    """The training loss became non-finite."""


class DuplicateResponseError(CrnError, ValueError):
    """A (session, trial) pair was answered twice."""


class UnknownTrialError(CrnError, KeyError):
    """A response references a trial id that is not in the batch."""


class EmptyResultError(CrnError, ValueError):
    """Aggregation was requested but no usable responses exist."""
