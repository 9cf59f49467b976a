"""Exception taxonomy. The CLI maps these onto exit codes (see cli.main)."""


class FusioncastError(Exception):
    """Base class for all package errors."""


class ConfigError(FusioncastError):
    """Invalid configuration or usage (CLI exit code 2)."""


class GridFormatError(FusioncastError):
    """Malformed RGS payload: bad magic, truncation, trailing bytes (exit 3)."""


class ConsistencyError(FusioncastError):
    """Data disagrees with its metadata, or a manifest references bad indices (exit 3)."""


class AlignmentError(FusioncastError):
    """Two series that must share shape/timestamps do not (exit 3)."""


class StateError(FusioncastError):
    """Normalization-state misuse: double normalize, denormalize raw data (exit 3)."""


class DegenerateScaleError(FusioncastError):
    """Normalization statistic cannot be fit (all-zero training data) (exit 3)."""


class CheckpointError(FusioncastError):
    """Corrupt or mismatched checkpoint (exit 3)."""


class NumericalError(FusioncastError):
    """Non-finite loss or gradients during training (exit 4)."""
