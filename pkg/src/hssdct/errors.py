"""Exception hierarchy shared by every module.

Each category maps to one CLI exit code (see cli.py), so raising the right
class is part of the public contract, not just style.
"""


class HssdctError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HssdctError):
    """Shape or geometry mismatch. Message names expected vs actual."""


class ConfigError(HssdctError):
    """Invalid configuration value, unknown key, or unsupported option."""


class UsageError(HssdctError):
    """API misuse: wrong call sequence, non-scalar loss, missing gradient."""


class FormatError(HssdctError):
    """Malformed file on disk. Message names the byte offset where parsing failed."""


class CheckpointError(HssdctError):
    """Checkpoint does not match the parameter store it is being loaded into."""


class MetricError(HssdctError):
    """Metric undefined for the given inputs (e.g. a zero band mean in ERGAS)."""


class BenchError(HssdctError):
    """Benchmark could not produce trustworthy numbers (e.g. timer resolution)."""


class TrainingAborted(HssdctError):
    """Training stopped because the loss became non-finite. Message names the step."""
