"""
Error taxonomy shared by every module.
"""
from typing import Optional, Sequence, Tuple


class PeftError(Exception):
    """Base class for all toolkit errors."""


# ============================================================================
# Numerics
# ============================================================================

class DimensionError(PeftError):
    """Operand shapes do not conform to an operation's shape rule."""

    def __init__(self, op: str, shapes: Sequence[Tuple[int, ...]], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        message = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ContractError(PeftError):
    """A caller broke an operation's precondition."""


class TapeError(PeftError):
    """A tensor is not part of the computation tape it was expected on."""


class DeterminismError(PeftError):
    """A loss builder returned different values for identical parameters."""


# ============================================================================
# Model / configuration
# ============================================================================

class InputError(PeftError):
    """Model input is empty, too short or too long."""


class ConfigError(PeftError):
    """Configuration is inconsistent with the model or the method."""


# ============================================================================
# Training / metrics
# ============================================================================

class LabelError(PeftError):
    """Labels or targets are outside their allowed range."""


class ScoreError(PeftError):
    """A score cannot be computed from the given vectors."""


class MetricError(PeftError):
    """A metric is undefined for the given inputs."""


class TrialCompositionError(MetricError):
    """Verification trials lack target or non-target entries."""


class DivergenceError(PeftError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: Optional[float] = None):
        self.step = step
        self.loss = loss
        super().__init__(f"Loss diverged at step {step} (loss={loss})")


class ConfinementError(PeftError):
    """A frozen parameter carries a gradient."""


class SnapshotCorruptionError(PeftError):
    """A frozen-parameter snapshot does not match the model it was taken from."""


class FrozenDriftError(PeftError):
    """Frozen parameters changed during training."""

    def __init__(self, groups: Sequence[str]):
        self.groups = list(groups)
        super().__init__(f"Frozen parameters drifted in groups: {', '.join(self.groups)}")


# ============================================================================
# Datasets
# ============================================================================

class DatasetError(PeftError):
    """Base class for dataset ingestion errors."""


class EmptyDatasetError(DatasetError):
    """The manifest lists no records."""


class MissingFileError(DatasetError):
    """A manifest path does not resolve to a file."""


class HeaderError(DatasetError):
    """A feature file has a corrupted or truncated header."""


class ShapeMismatchError(DatasetError):
    """A feature file's payload disagrees with its header or with its peers."""


class DuplicatePathError(DatasetError):
    """The same feature path is listed more than once."""


class LabelRangeError(DatasetError):
    """A label lies outside the class range."""


class ManifestFormatError(DatasetError):
    """A manifest line is not a valid record."""
