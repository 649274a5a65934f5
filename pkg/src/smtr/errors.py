"""Exception hierarchy shared across the package."""


class SmtrError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SmtrError):
    """Tensor shapes do not satisfy an operation's contract."""


class ConfigError(SmtrError):
    """Invalid model or training configuration."""


class VocabError(SmtrError):
    """Character or class index outside the vocabulary."""


class LabelError(SmtrError):
    """Text cannot be turned into training labels (empty, special chars...)."""


class TrainingError(SmtrError):
    """Optimizer/training-loop failure (missing grads, divergence...)."""


class DegenerateBatchError(TrainingError):
    """A batch contains no valid loss terms."""


class ScheduleExhaustedError(SmtrError):
    """LR schedule queried past its configured total step count."""


class RenderError(SmtrError):
    """Text cannot be rendered (missing glyph, bad geometry)."""


class CorpusSpecError(SmtrError):
    """Infeasible corpus specification."""


class CheckpointError(SmtrError):
    """Malformed or incompatible checkpoint file."""


class SliceError(SmtrError):
    """Image too narrow to slice for inference augmentation."""


class HarnessError(SmtrError):
    """Benchmark harness misuse (mismatched lists, bad buckets)."""
