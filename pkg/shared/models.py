"""
Shared Pydantic models for configuration files, reports and ledgers.
"""
from pydantic import BaseModel, Field, ConfigDict, model_validator
from typing import Optional, List, Dict, Any, Tuple
from enum import Enum
from pathlib import Path

from .config import settings


class BackboneKind(str, Enum):
    """Pre-trained pipeline family."""
    AST_LIKE = "ast_like"
    W2V2_LIKE = "w2v2_like"


class Precision(str, Enum):
    """Floating-point precision of model parameters."""
    FLOAT32 = "float32"
    FLOAT64 = "float64"


class TuningMethod(str, Enum):
    """Transfer strategies."""
    FT = "FT"
    LP = "LP"
    IP = "IP"
    EP = "EP"
    ADAPTER = "Adapter"
    IPET = "IPET"


class LossKind(str, Enum):
    """Training objectives."""
    CROSS_ENTROPY = "cross_entropy"
    MULTILABEL_BCE = "multilabel_bce"


class TaskKind(str, Enum):
    """Evaluation protocol of a task."""
    CLASSIFICATION = "classification"
    MULTILABEL = "multilabel"
    VERIFICATION = "verification"


class TaskFamily(str, Enum):
    """Synthetic stand-ins for the downstream benchmarks."""
    SEC_LIKE = "sec_like"
    MGC_LIKE = "mgc_like"
    KS_LIKE = "ks_like"
    SV_LIKE = "sv_like"


class InputKind(str, Enum):
    """Raw input representation."""
    SPECTROGRAM = "spectrogram"
    WAVEFORM = "waveform"


class Split(str, Enum):
    """Dataset partitions."""
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


class MetricName(str, Enum):
    """Task metrics."""
    ACCURACY = "accuracy"
    MAP = "mAP"
    EER = "EER"


METRIC_FOR_TASK = {
    TaskKind.CLASSIFICATION: MetricName.ACCURACY,
    TaskKind.MULTILABEL: MetricName.MAP,
    TaskKind.VERIFICATION: MetricName.EER,
}


# ============================================================================
# Configuration Models
# ============================================================================

class BackboneConfig(BaseModel):
    """Architectural hyperparameters of a miniature AST-like or W2V2-like encoder."""
    model_config = ConfigDict(extra="forbid")

    kind: BackboneKind
    depth: int = Field(ge=0)
    width: int = Field(ge=1)
    mlp_hidden: int = Field(ge=1)
    num_heads: int = Field(ge=1)
    patch_size: Optional[Tuple[int, int]] = None
    conv_stack: Optional[List[Tuple[int, int, int]]] = None
    max_sequence: int = Field(ge=1)
    seed: int = 0
    input_shape: Optional[Tuple[int, ...]] = None
    dtype: Precision = Precision.FLOAT32

    @model_validator(mode="after")
    def check_architecture(self) -> "BackboneConfig":
        if self.width % self.num_heads != 0:
            raise ValueError(f"width {self.width} is not divisible by num_heads {self.num_heads}")
        if self.kind == BackboneKind.AST_LIKE:
            if self.patch_size is None:
                raise ValueError("ast_like backbone requires patch_size")
            if min(self.patch_size) < 1:
                raise ValueError(f"patch_size must be positive, got {self.patch_size}")
            if self.input_shape is not None and len(self.input_shape) != 2:
                raise ValueError("ast_like input_shape must be (bins, frames)")
        else:
            if not self.conv_stack:
                raise ValueError("w2v2_like backbone requires a non-empty conv_stack")
            for layer in self.conv_stack:
                if min(layer) < 1:
                    raise ValueError(f"conv layer (channels, kernel, stride) must be positive, got {layer}")
            if self.input_shape is not None and len(self.input_shape) != 1:
                raise ValueError("w2v2_like input_shape must be (samples,)")
        if self.input_shape is not None and min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be positive, got {self.input_shape}")
        return self

    @property
    def head_input_width(self) -> int:
        """Head input width: class token for ast_like, mean plus std pooling for w2v2_like."""
        return self.width if self.kind == BackboneKind.AST_LIKE else 2 * self.width

    @property
    def context_capacity(self) -> int:
        """Largest number of rows a single encoder layer attends over."""
        return self.max_sequence + 1


class TuningSpec(BaseModel):
    """Which transfer strategy is active and its hyperparameters."""
    model_config = ConfigDict(extra="forbid")

    method: TuningMethod
    k: int = Field(default_factory=lambda: settings.default_prompt_count, ge=0)
    h: int = Field(default_factory=lambda: settings.default_adapter_hidden, ge=0)
    s: float = Field(default_factory=lambda: settings.default_adapter_scale, gt=0.0)
    ip_len: int = Field(default_factory=lambda: settings.default_input_prompt_len, ge=0)
    adapter_bias: bool = True

    @model_validator(mode="after")
    def check_method_fields(self) -> "TuningSpec":
        if self.uses_prompts and self.k < 1:
            raise ValueError(f"{self.method.value} requires k >= 1")
        if self.uses_adapters and self.h < 1:
            raise ValueError(f"{self.method.value} requires h >= 1")
        if self.uses_input_prompt and self.ip_len < 1:
            raise ValueError("IP requires ip_len >= 1")
        return self

    @property
    def uses_prompts(self) -> bool:
        return self.method in (TuningMethod.EP, TuningMethod.IPET)

    @property
    def uses_adapters(self) -> bool:
        return self.method in (TuningMethod.ADAPTER, TuningMethod.IPET)

    @property
    def uses_input_prompt(self) -> bool:
        return self.method == TuningMethod.IP


class TrainConfig(BaseModel):
    """Optimization settings of one training run."""
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=1, ge=0)
    batch_size: int = Field(default_factory=lambda: settings.default_batch_size, ge=1)
    learning_rate: Optional[float] = Field(default=None, gt=0.0)
    seed: int = 0
    loss: Optional[LossKind] = None
    task: Optional[TaskKind] = None
    max_steps: Optional[int] = Field(default=None, ge=0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    epsilon: float = Field(default=1e-8, gt=0.0)

    @model_validator(mode="after")
    def check_loss_matches_task(self) -> "TrainConfig":
        if self.loss is not None and self.task is not None:
            if (self.loss == LossKind.MULTILABEL_BCE) != (self.task == TaskKind.MULTILABEL):
                raise ValueError(f"loss {self.loss.value} does not fit task {self.task.value}")
        return self

    def resolved_loss(self, task: TaskKind) -> LossKind:
        """Loss used for a task when none is configured."""
        if self.loss is not None:
            return self.loss
        return LossKind.MULTILABEL_BCE if task == TaskKind.MULTILABEL else LossKind.CROSS_ENTROPY

    def resolved_learning_rate(self, method: TuningMethod) -> float:
        """Configured learning rate, or the method's default."""
        if self.learning_rate is not None:
            return self.learning_rate
        if method == TuningMethod.FT:
            return settings.ft_learning_rate
        return settings.peft_learning_rate


class TaskSpec(BaseModel):
    """Synthetic task definition."""
    model_config = ConfigDict(extra="forbid")

    family: TaskFamily
    num_classes: int = Field(ge=2)
    samples_per_class: int = Field(ge=1)
    test_per_class: int = Field(default=4, ge=1)
    valid_per_class: int = Field(default=0, ge=0)
    input_kind: InputKind
    spectrogram_shape: Optional[Tuple[int, int]] = None
    waveform_length: Optional[int] = Field(default=None, ge=1)
    noise: float = Field(default=0.1, ge=0.0)
    seed: int = 0
    labels_per_sample: int = Field(default=1, ge=1)
    num_trials: int = Field(default=32, ge=2)

    @model_validator(mode="after")
    def check_task(self) -> "TaskSpec":
        if self.input_kind == InputKind.SPECTROGRAM:
            if self.spectrogram_shape is None or min(self.spectrogram_shape) < 1:
                raise ValueError("spectrogram tasks require a positive spectrogram_shape")
        elif self.waveform_length is None:
            raise ValueError("waveform tasks require waveform_length")
        if self.labels_per_sample > 1:
            if self.family != TaskFamily.SEC_LIKE:
                raise ValueError("multi-label samples are only defined for sec_like tasks")
            if self.labels_per_sample > self.num_classes:
                raise ValueError("labels_per_sample exceeds num_classes")
        if self.family == TaskFamily.SV_LIKE and self.test_per_class < 2:
            raise ValueError("sv_like tasks need at least 2 test utterances per speaker")
        return self

    @property
    def task_kind(self) -> TaskKind:
        if self.family == TaskFamily.SV_LIKE:
            return TaskKind.VERIFICATION
        if self.labels_per_sample > 1:
            return TaskKind.MULTILABEL
        return TaskKind.CLASSIFICATION

    @property
    def input_shape(self) -> Tuple[int, ...]:
        if self.input_kind == InputKind.SPECTROGRAM:
            return tuple(self.spectrogram_shape)
        return (self.waveform_length,)


class ManifestRecord(BaseModel):
    """One line of a JSON-lines dataset manifest."""
    model_config = ConfigDict(extra="forbid")

    path: str
    label: Optional[int] = None
    labels: Optional[List[int]] = None
    speaker: Optional[int] = None
    split: Split

    @model_validator(mode="after")
    def check_single_target(self) -> "ManifestRecord":
        present = [f for f in ("label", "labels", "speaker") if getattr(self, f) is not None]
        if len(present) != 1:
            raise ValueError(f"record must carry exactly one of label, labels, speaker (got {present})")
        return self


class ExperimentConfig(BaseModel):
    """Full experiment definition consumed by the CLI."""
    model_config = ConfigDict(extra="forbid")

    backbone: BackboneConfig
    tuning: TuningSpec
    task: Optional[TaskSpec] = None
    manifest: Optional[str] = None
    train: TrainConfig = Field(default_factory=TrainConfig)
    output: Optional[str] = None

    @model_validator(mode="after")
    def check_experiment(self) -> "ExperimentConfig":
        if (self.task is None) == (self.manifest is None):
            raise ValueError("exactly one of task or manifest must be given")
        if self.manifest is not None and not Path(self.manifest).is_file():
            raise ValueError(f"manifest not found: {self.manifest}")
        if self.task is not None:
            expected = (
                InputKind.SPECTROGRAM
                if self.backbone.kind == BackboneKind.AST_LIKE
                else InputKind.WAVEFORM
            )
            if self.task.input_kind != expected:
                raise ValueError(
                    f"{self.backbone.kind.value} backbone cannot ingest {self.task.input_kind.value} input"
                )
            if self.backbone.input_shape is None:
                self.backbone.input_shape = self.task.input_shape
            elif tuple(self.backbone.input_shape) != self.task.input_shape:
                raise ValueError(
                    f"backbone input_shape {self.backbone.input_shape} != task input {self.task.input_shape}"
                )
            if self.train.task is not None and self.train.task != self.task.task_kind:
                raise ValueError(
                    f"train.task {self.train.task.value} does not match task {self.task.task_kind.value}"
                )
        return self


# ============================================================================
# Ledgers and Reports
# ============================================================================

class LedgerGroup(BaseModel):
    """Parameter count of one named group."""
    name: str
    count: int = Field(ge=0)
    trainable: bool


class ParamLedger(BaseModel):
    """Per-group parameter accounting split into trainable and frozen."""
    groups: List[LedgerGroup]
    total_trainable: int
    total_frozen: int
    trainable_percent: float

    @classmethod
    def from_groups(cls, groups: List[LedgerGroup]) -> "ParamLedger":
        trainable = sum(g.count for g in groups if g.trainable)
        frozen = sum(g.count for g in groups if not g.trainable)
        total = trainable + frozen
        percent = 100.0 * trainable / total if total else 0.0
        return cls(
            groups=groups,
            total_trainable=trainable,
            total_frozen=frozen,
            trainable_percent=percent
        )

    @property
    def total(self) -> int:
        return self.total_trainable + self.total_frozen

    def group(self, name: str) -> LedgerGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)


class GradientCheckEntry(BaseModel):
    """Finite-difference comparison for one parameter tensor."""
    name: str
    max_relative_deviation: float
    status: str  # "ok", "flagged" or "not_trainable"


class GradientCheckReport(BaseModel):
    """Result of a finite-difference gradient check."""
    step: float
    tolerance: float
    entries: List[GradientCheckEntry]

    @property
    def passed(self) -> bool:
        return all(e.status != "flagged" for e in self.entries)

    @property
    def max_deviation(self) -> float:
        return max((e.max_relative_deviation for e in self.entries), default=0.0)


class FrozenCheckReport(BaseModel):
    """Bitwise comparison of frozen parameters against their snapshot."""
    passed: bool
    checked: int
    drifted_groups: List[str] = []
    drifted_parameters: List[str] = []


class TrialReport(BaseModel):
    """Outcome of one training trial."""
    config: Dict[str, Any] = {}
    method: TuningMethod
    ledger: ParamLedger
    epoch_losses: List[float] = []
    step_losses: List[float] = []
    train_accuracy: List[float] = []
    metric_name: MetricName
    metric_value: float
    steps: int
    steps_to_full_train_accuracy: Optional[int] = None
    frozen_check: FrozenCheckReport
    seed: int
    wall_clock_seconds: float = 0.0


class SweepRow(BaseModel):
    """One point of a parameter-scaling curve."""
    value: int
    trainable_params: int
    metric: float
