"""Exception hierarchy shared across the pipeline.

Everything raised on purpose derives from FragVqaError so the CLI can map
failures to exit codes without enumerating modules.
"""


class FragVqaError(Exception):
    """Base class for all pipeline errors."""


class FormatError(FragVqaError):
    """Malformed input data (wrong byte count, bad sidecar, bad header)."""


class ShapeError(FragVqaError):
    """Operands with incompatible dimensions or channel counts."""


class SizeError(FragVqaError):
    """Input too small for the requested operation."""


class CapacityError(FragVqaError):
    """More items requested than the source can provide."""


class BoundsError(FragVqaError):
    """A patch position falls outside its source."""


class InsufficientDataError(FragVqaError):
    """Too few frames, samples, or pairs to proceed."""


class ConfigError(FragVqaError):
    """Invalid configuration or unknown mode."""


class LayoutError(FragVqaError):
    """Feature layouts that should match do not."""


class BackboneSpecError(FragVqaError):
    """Declared backbone taps or dimensions disagree with the loaded model."""


class LoadError(FragVqaError):
    """A weights, checkpoint, or cache file could not be loaded."""


class UndefinedCorrelationError(FragVqaError):
    """Correlation requested on data with zero variance."""


class DivergenceError(FragVqaError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, lr: float):
        super().__init__(f"non-finite loss at epoch {epoch} (lr={lr})")
        self.epoch = epoch
        self.lr = lr
