"""
JSON-lines manifests over on-disk feature files.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import ValidationError

from shared.errors import (
    DuplicatePathError,
    EmptyDatasetError,
    LabelRangeError,
    ManifestFormatError,
    MissingFileError,
    ShapeMismatchError,
)
from shared.models import InputKind, ManifestRecord, Split, TaskKind
from numerics.rng import make_rng
from .features import FEATURE_SUFFIX, read_features, write_features
from .synthetic import Dataset, Example, build_trials

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"

_TARGET_FIELD = {
    "label": TaskKind.CLASSIFICATION,
    "labels": TaskKind.MULTILABEL,
    "speaker": TaskKind.VERIFICATION,
}


def _parse_records(manifest_path: Path) -> List[ManifestRecord]:
    records = []
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(ManifestRecord.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as e:
            raise ManifestFormatError(f"{manifest_path}:{lineno}: invalid record: {e}") from e
    return records


def _target_field(record: ManifestRecord) -> str:
    return next(f for f in _TARGET_FIELD if getattr(record, f) is not None)


def load_dataset(
    manifest_path: Union[str, Path],
    num_classes: Optional[int] = None,
    num_trials: int = 32,
    trial_seed: int = 0
) -> Dataset:
    """
    Load every feature file a manifest lists.

    Paths are resolved relative to the manifest's directory.

    Args:
        manifest_path: JSON-lines manifest
        num_classes: Expected class count; inferred as max label + 1 when omitted
        num_trials: Verification trials to build over the test split
        trial_seed: Seed for trial construction

    Returns:
        Dataset in manifest order

    Raises:
        EmptyDatasetError, ManifestFormatError, DuplicatePathError,
        MissingFileError, HeaderError, ShapeMismatchError, LabelRangeError
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFileError(f"manifest not found: {manifest_path}")
    records = _parse_records(manifest_path)
    if not records:
        raise EmptyDatasetError(f"{manifest_path} lists no records")

    fields = {_target_field(r) for r in records}
    if len(fields) != 1:
        raise ManifestFormatError(f"{manifest_path} mixes target fields {sorted(fields)}")
    target = fields.pop()
    task_kind = _TARGET_FIELD[target]

    seen: Dict[str, Split] = {}
    examples: List[Example] = []
    shape = None
    root = manifest_path.parent
    for record in records:
        if record.path in seen:
            raise DuplicatePathError(
                f"{record.path} listed twice (splits {seen[record.path].value} and {record.split.value})"
            )
        seen[record.path] = record.split
        file_path = root / record.path
        if not file_path.is_file():
            raise MissingFileError(f"feature file not found: {file_path}")
        features = read_features(file_path)
        if shape is None:
            shape = features.shape
        elif features.shape != shape:
            raise ShapeMismatchError(f"{file_path}: shape {features.shape} differs from {shape}")
        value = getattr(record, target)
        label = tuple(sorted(value)) if target == "labels" else value
        examples.append(Example(features=features, label=label, split=record.split))

    all_ids = [c for e in examples for c in (e.label if isinstance(e.label, tuple) else (e.label,))]
    if not all_ids:
        raise LabelRangeError(f"{manifest_path}: no labels")
    if min(all_ids) < 0:
        raise LabelRangeError(f"{manifest_path}: negative label {min(all_ids)}")
    if num_classes is None:
        num_classes = max(all_ids) + 1
    elif max(all_ids) >= num_classes:
        raise LabelRangeError(f"{manifest_path}: label {max(all_ids)} outside [0, {num_classes})")
    if num_classes < 2:
        raise LabelRangeError(f"{manifest_path}: need at least 2 classes, found {num_classes}")

    if len(shape) == 2:
        input_kind = InputKind.SPECTROGRAM
    elif len(shape) == 1:
        input_kind = InputKind.WAVEFORM
    else:
        raise ShapeMismatchError(f"{manifest_path}: features must be 1-D or 2-D, got {shape}")

    dataset = Dataset(examples=examples, num_classes=num_classes, task_kind=task_kind, input_kind=input_kind)
    if task_kind == TaskKind.VERIFICATION:
        speakers = [e.label for e in dataset.split(Split.TEST)]
        dataset.trials = build_trials(speakers, num_trials, make_rng(trial_seed, 4))
    logger.info(f"Loaded {len(examples)} examples ({task_kind.value}, {num_classes} classes) from {manifest_path}")
    return dataset


def write_dataset(dataset: Dataset, directory: Union[str, Path]) -> Path:
    """
    Write feature files and a manifest for a dataset.

    Returns:
        Path of the written manifest
    """
    directory = Path(directory)
    target = next(f for f, kind in _TARGET_FIELD.items() if kind == dataset.task_kind)
    lines = []
    for i, example in enumerate(dataset.examples):
        relative = f"features/{example.split.value}_{i:05d}{FEATURE_SUFFIX}"
        write_features(directory / relative, example.features)
        value = list(example.label) if target == "labels" else example.label
        record = ManifestRecord(path=relative, split=example.split, **{target: value})
        lines.append(json.dumps(record.model_dump(mode="json", exclude_none=True), sort_keys=True))
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(lines)} records to {manifest_path}")
    return manifest_path
