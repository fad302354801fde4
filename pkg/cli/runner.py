"""
Experiment runner: builds data and model, attaches a method, trains and reports.
"""
import asyncio
import csv
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

from shared.config import settings
from shared.errors import ConfigError
from shared.models import (
    BackboneKind,
    ExperimentConfig,
    InputKind,
    ParamLedger,
    SweepRow,
    TrialReport,
    TuningSpec,
)
from backbone.model import build_model
from tuning.attach import attach
from tuning.frozen import snapshot_parameters
from tuning.ledger import ledger_for_config
from data.manifest import load_dataset
from data.synthetic import Dataset, generate_task
from training.trainer import train

logger = logging.getLogger(__name__)

SWEEP_HEADER = ["value", "trainable_params", "metric"]

# Methods each sweep axis applies to
SWEEP_AXES = {
    "k": ("EP", "IPET"),
    "h": ("Adapter", "IPET"),
}


# ============================================================================
# Configuration
# ============================================================================

def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """
    Parse and validate an experiment config file.

    A relative manifest path is resolved against the config file's directory.

    Raises:
        ConfigError: the file is missing or not JSON
        pydantic.ValidationError: a field is missing, unknown or out of range
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    manifest = raw.get("manifest")
    if isinstance(manifest, str) and not Path(manifest).is_absolute():
        raw["manifest"] = str(path.parent / manifest)
    return ExperimentConfig.model_validate(raw)


def resolve_seed(config: ExperimentConfig, seed: Optional[int] = None) -> int:
    """Experiment seed: explicit argument, then PEFT_SEED, then the config file."""
    if seed is not None:
        return seed
    if settings.seed is not None:
        return settings.seed
    return config.train.seed


def build_dataset(config: ExperimentConfig) -> Dataset:
    """Generate the synthetic task or load the manifest, checking it fits the backbone."""
    if config.task is not None:
        return generate_task(config.task)
    data = load_dataset(config.manifest)
    expected = InputKind.SPECTROGRAM if config.backbone.kind == BackboneKind.AST_LIKE else InputKind.WAVEFORM
    if data.input_kind != expected:
        raise ConfigError(f"{config.backbone.kind.value} backbone cannot ingest {data.input_kind.value} features")
    return data


def _backbone_for(config: ExperimentConfig, data: Dataset):
    backbone = config.backbone
    if backbone.input_shape is None:
        backbone = backbone.model_copy(update={"input_shape": data.input_shape})
    return backbone


# ============================================================================
# Operations
# ============================================================================

def run_experiment(config: ExperimentConfig, seed: Optional[int] = None) -> TrialReport:
    """
    Build, attach, train and evaluate one trial.

    Args:
        config: Validated experiment
        seed: Seed override for initialization of added parameters and shuffling

    Returns:
        TrialReport whose config echoes the experiment with the effective seed
    """
    seed = resolve_seed(config, seed)
    train_cfg = config.train.model_copy(update={"seed": seed})
    data = build_dataset(config)
    backbone_config = _backbone_for(config, data)

    logger.info(f"Running {config.tuning.method.value} trial with seed {seed}")
    model = build_model(backbone_config, data.num_classes)
    tuned, mask = attach(model, config.tuning, seed=seed)
    snapshot = snapshot_parameters(tuned, mask)
    report = train(tuned, config.tuning, data, train_cfg, snapshot=snapshot)

    echo = config.model_copy(update={"backbone": backbone_config, "train": train_cfg})
    return report.model_copy(update={"config": echo.model_dump(mode="json")})


def ledger_for_experiment(config: ExperimentConfig) -> ParamLedger:
    """Parameter ledger of an experiment without building or training a model."""
    if config.task is not None:
        return ledger_for_config(config.backbone, config.tuning, config.task.num_classes)
    data = build_dataset(config)
    return ledger_for_config(_backbone_for(config, data), config.tuning, data.num_classes)


def _sweep_configs(config: ExperimentConfig, axis: str, values: Sequence[int]) -> List[ExperimentConfig]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    if config.tuning.method.value not in SWEEP_AXES[axis]:
        raise ConfigError(f"axis {axis} does not apply to method {config.tuning.method.value}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    configs = []
    for value in values:
        tuning = TuningSpec.model_validate({**config.tuning.model_dump(), axis: value})
        configs.append(config.model_copy(update={"tuning": tuning}))
    return configs


async def _run_trial(config: ExperimentConfig, seed: int, value: int, semaphore: asyncio.Semaphore) -> SweepRow:
    async with semaphore:
        logger.info(f"Sweep trial {value} started")
        report = await asyncio.wait_for(
            asyncio.to_thread(run_experiment, config, seed),
            timeout=settings.trial_timeout_seconds
        )
        logger.info(f"Sweep trial {value} finished: {report.metric_name.value} {report.metric_value:.4f}")
        return SweepRow(value=value, trainable_params=report.ledger.total_trainable, metric=report.metric_value)


async def sweep_async(
    config: ExperimentConfig,
    axis: str,
    values: Sequence[int],
    seed: Optional[int] = None
) -> List[SweepRow]:
    """Run one trial per axis value concurrently; rows keep the input order."""
    configs = _sweep_configs(config, axis, values)
    seed = resolve_seed(config, seed)
    semaphore = asyncio.Semaphore(settings.sweep_workers)
    return list(await asyncio.gather(
        *(_run_trial(c, seed, v, semaphore) for c, v in zip(configs, values))
    ))


def sweep(config: ExperimentConfig, axis: str, values: Sequence[int], seed: Optional[int] = None) -> List[SweepRow]:
    """Synchronous wrapper around `sweep_async`."""
    return asyncio.run(sweep_async(config, axis, values, seed))


# ============================================================================
# Output
# ============================================================================

def report_json(report: TrialReport) -> str:
    """Serialize a report with sorted keys and two-space indentation."""
    return json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def write_report(report: TrialReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_json(report), encoding="utf-8")
    logger.info(f"Wrote report to {path}")
    return path


def write_sweep_csv(rows: Sequence[SweepRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow([row.value, row.trainable_params, repr(row.metric)])
    logger.info(f"Wrote {len(rows)} sweep rows to {path}")
    return path
