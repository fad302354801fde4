"""
Synthetic desk-scale tasks: class templates plus white noise.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from shared.errors import DatasetError
from shared.models import InputKind, Split, TaskKind, TaskSpec
from numerics.rng import make_rng

logger = logging.getLogger(__name__)

Label = Union[int, Tuple[int, ...]]
Trial = Tuple[int, int, bool]


@dataclass(frozen=True)
class Example:
    """One input with its class id, speaker id, or tuple of class ids."""
    features: np.ndarray
    label: Label
    split: Split


@dataclass
class Dataset:
    """
    Examples of one task, in a fixed order.

    Verification trials index into `split(Split.TEST)`.
    """
    examples: List[Example]
    num_classes: int
    task_kind: TaskKind
    input_kind: InputKind
    trials: List[Trial] = field(default_factory=list)
    templates: Optional[np.ndarray] = None

    def split(self, which: Split) -> List[Example]:
        return [e for e in self.examples if e.split == which]

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.examples[0].features.shape)

    def __len__(self) -> int:
        return len(self.examples)

    def checksum(self) -> str:
        """sha256 over features, labels and splits."""
        digest = hashlib.sha256()
        for e in self.examples:
            digest.update(np.ascontiguousarray(e.features, dtype="<f4").tobytes())
            digest.update(repr(e.label).encode())
            digest.update(e.split.value.encode())
        return digest.hexdigest()


def class_templates(num_classes: int, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """
    Per-class patterns with unit-variance entries.

    When the input has at least as many entries as there are classes the
    templates are mutually orthogonal.
    """
    size = int(np.prod(shape))
    gaussian = rng.standard_normal((size, num_classes))
    if num_classes <= size:
        q, _ = np.linalg.qr(gaussian)
        patterns = q.T * np.sqrt(size)
    else:
        patterns = gaussian.T
    return patterns.reshape((num_classes,) + tuple(shape))


def build_trials(speakers: Sequence[int], num_trials: int, rng: np.random.Generator) -> List[Trial]:
    """
    Balanced target / non-target trial pairs over utterance indices.

    Raises:
        DatasetError: no speaker has two utterances, or fewer than two speakers
    """
    speakers = np.asarray(speakers)
    by_speaker = {int(s): np.flatnonzero(speakers == s) for s in np.unique(speakers)}
    repeat_speakers = [s for s, idx in by_speaker.items() if idx.size >= 2]
    if not repeat_speakers:
        raise DatasetError("verification trials need a speaker with at least two test utterances")
    if len(by_speaker) < 2:
        raise DatasetError("verification trials need at least two speakers")

    num_targets = num_trials // 2
    trials: List[Trial] = []
    for _ in range(num_targets):
        s = repeat_speakers[rng.integers(len(repeat_speakers))]
        i, j = rng.choice(by_speaker[s], size=2, replace=False)
        trials.append((int(i), int(j), True))
    ids = sorted(by_speaker)
    for _ in range(num_trials - num_targets):
        a, b = rng.choice(len(ids), size=2, replace=False)
        i = rng.choice(by_speaker[ids[a]])
        j = rng.choice(by_speaker[ids[b]])
        trials.append((int(i), int(j), False))
    return trials


def _draw_label(spec: TaskSpec, anchor: int, rng: np.random.Generator) -> Label:
    if spec.labels_per_sample == 1:
        return anchor
    others = np.array([c for c in range(spec.num_classes) if c != anchor])
    extra = rng.choice(others, size=spec.labels_per_sample - 1, replace=False)
    return tuple(sorted([anchor, *(int(c) for c in extra)]))


def generate_task(spec: TaskSpec) -> Dataset:
    """
    Generate a deterministic in-memory dataset for a task.

    Each sample is its class template (the sum of its classes' templates for
    multi-label samples) plus `noise` times white Gaussian noise. sv_like
    tasks also get balanced trials over the test split.
    """
    rng = make_rng(spec.seed, 3)
    shape = spec.input_shape
    templates = class_templates(spec.num_classes, shape, rng)

    counts = [
        (Split.TRAIN, spec.samples_per_class),
        (Split.VALID, spec.valid_per_class),
        (Split.TEST, spec.test_per_class),
    ]
    examples: List[Example] = []
    for split, per_class in counts:
        for c in range(spec.num_classes):
            for _ in range(per_class):
                label = _draw_label(spec, c, rng)
                classes = label if isinstance(label, tuple) else (label,)
                clean = templates[list(classes)].sum(axis=0)
                noisy = clean + spec.noise * rng.standard_normal(shape)
                examples.append(Example(features=noisy.astype(np.float32), label=label, split=split))

    dataset = Dataset(
        examples=examples,
        num_classes=spec.num_classes,
        task_kind=spec.task_kind,
        input_kind=spec.input_kind,
        templates=templates.astype(np.float32),
    )
    if spec.task_kind == TaskKind.VERIFICATION:
        speakers = [e.label for e in dataset.split(Split.TEST)]
        dataset.trials = build_trials(speakers, spec.num_trials, rng)

    logger.info(
        f"Generated {spec.family.value} task: {spec.num_classes} classes, "
        f"{len(examples)} examples, {len(dataset.trials)} trials"
    )
    return dataset
