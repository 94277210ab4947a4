"""Exception hierarchy shared by all modules."""


class MaskRefError(Exception):
    """Base class for every error raised by this package."""


class ContractError(MaskRefError, ValueError):
    """An input violates a documented precondition (shape, range, dtype)."""


class UnsatisfiableShapeError(MaskRefError):
    """Shape parameters are degenerate, e.g. all radii collapse to zero."""


class MonotonicityError(MaskRefError, RuntimeError):
    """Raster area decreased while the scale increased during bisection."""


class AdjustmentError(MaskRefError):
    """Exact area could not be reached without breaking connectivity."""


class GenerationError(MaskRefError):
    """Mask generation gave up after exhausting its retry budget."""


class SegmentationError(MaskRefError):
    """Segmentation produced an empty foreground."""


class ConfigurationError(MaskRefError):
    """Incompatible checkpoint, codec or sampler configuration."""


class TrainingError(MaskRefError, RuntimeError):
    """Training diverged (non-finite loss)."""
