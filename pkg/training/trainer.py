"""
Training loop: forward, loss, backward and Adam over shuffled mini-batches.
"""
import logging
import math
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np

from shared.errors import ConfigError, DivergenceError, EmptyDatasetError, FrozenDriftError
from shared.models import (
    METRIC_FOR_TASK,
    LossKind,
    Split,
    TaskKind,
    TrainConfig,
    TrialReport,
    TuningSpec,
)
from numerics import ops
from numerics.autograd import backward
from numerics.rng import make_rng
from numerics.tensor import ComputationTape
from metrics.classification import accuracy, mean_average_precision, predict_classes
from metrics.verification import equal_error_rate
from tuning.attach import TunedModel
from tuning.frozen import Snapshot, assert_frozen, snapshot_parameters
from tuning.ledger import count_params
from data.synthetic import Dataset, Example
from .losses import compute_loss
from .optimizer import OptimizerState, adam_step
from .verification import score_trials, speaker_embedding

logger = logging.getLogger(__name__)


def _targets(batch: Sequence[Example], loss: LossKind, num_classes: int) -> np.ndarray:
    if loss == LossKind.MULTILABEL_BCE:
        hot = np.zeros((len(batch), num_classes))
        for row, example in enumerate(batch):
            hot[row, list(example.label)] = 1.0
        return hot
    return np.array([example.label for example in batch], dtype=np.int64)


def _logits(model: TunedModel, batch: Sequence[Example]):
    return ops.concat_rows(*(model.forward(e.features) for e in batch))


def predict_logits(model: TunedModel, examples: Sequence[Example]) -> np.ndarray:
    """Untaped logits (N x C) for a list of examples."""
    return np.concatenate([model.forward(e.features).data for e in examples], axis=0)


def train_accuracy(model: TunedModel, examples: Sequence[Example]) -> float:
    predictions = predict_classes(predict_logits(model, examples))
    return accuracy(predictions, [e.label for e in examples])


def evaluate(model: TunedModel, data: Dataset) -> Tuple[str, float]:
    """
    Metric of the task on its test split.

    Returns:
        Tuple of (metric name, value)
    """
    test = data.split(Split.TEST)
    if not test:
        raise EmptyDatasetError("the dataset has no test split to evaluate on")
    metric = METRIC_FOR_TASK[data.task_kind]
    if data.task_kind == TaskKind.CLASSIFICATION:
        return metric.value, train_accuracy(model, test)
    if data.task_kind == TaskKind.MULTILABEL:
        scores = predict_logits(model, test)
        return metric.value, mean_average_precision(scores, _targets(test, LossKind.MULTILABEL_BCE, data.num_classes))
    embeddings = [speaker_embedding(model, e.features) for e in test]
    return metric.value, equal_error_rate(score_trials(embeddings, data.trials))


def train_step(model: TunedModel, optimizer: OptimizerState, batch: Sequence[Example], loss_kind: LossKind) -> float:
    """
    One optimizer step on a mini-batch.

    Raises:
        DivergenceError: the batch loss is not finite (no update is applied)
    """
    for p in model.trainable_parameters().values():
        p.zero_grad()
    tape = ComputationTape()
    with tape.recording():
        loss = compute_loss(loss_kind, _logits(model, batch), _targets(batch, loss_kind, model.num_classes))
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(optimizer.step_count + 1, value)
    backward(tape, loss)
    adam_step(optimizer)
    return value


def train(
    model: TunedModel,
    spec: TuningSpec,
    data: Dataset,
    cfg: TrainConfig,
    snapshot: Optional[Snapshot] = None
) -> TrialReport:
    """
    Train the attached parameters and evaluate on the test split.

    Args:
        model: Model with a transfer strategy attached
        spec: The attached method
        data: Dataset whose task kind decides loss and metric
        cfg: Epochs, batch size, learning rate, seed
        snapshot: Frozen-parameter snapshot to verify against; taken over the
            freeze mask when omitted

    Returns:
        TrialReport with loss curves, ledger, metric and frozen check

    Raises:
        ConfigError: the task, loss or class count do not fit the model
        DivergenceError: a non-finite loss, carrying its step index
        FrozenDriftError: a frozen parameter changed
    """
    task = data.task_kind
    if cfg.task is not None and cfg.task != task:
        raise ConfigError(f"train config targets {cfg.task.value} but the data is {task.value}")
    loss_kind = cfg.resolved_loss(task)
    if (loss_kind == LossKind.MULTILABEL_BCE) != (task == TaskKind.MULTILABEL):
        raise ConfigError(f"loss {loss_kind.value} does not fit a {task.value} task")
    if model.num_classes != data.num_classes:
        raise ConfigError(f"model head has {model.num_classes} outputs, the data {data.num_classes} classes")
    train_set = data.split(Split.TRAIN)
    if not train_set:
        raise EmptyDatasetError("the dataset has no training examples")

    mask = model.freeze_mask
    if snapshot is None:
        snapshot = snapshot_parameters(model, mask)
    learning_rate = cfg.resolved_learning_rate(spec.method)
    optimizer = OptimizerState(model.parameters(), learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    rng = make_rng(cfg.seed, 2)
    tracks_accuracy = task != TaskKind.MULTILABEL

    epoch_losses: List[float] = []
    step_losses: List[float] = []
    accuracies: List[float] = []
    steps_to_full = None
    if tracks_accuracy and train_accuracy(model, train_set) == 1.0:
        steps_to_full = 0

    started = time.perf_counter()
    for epoch in range(cfg.epochs):
        if cfg.max_steps is not None and optimizer.step_count >= cfg.max_steps:
            break
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and optimizer.step_count >= cfg.max_steps:
                break
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            losses.append(train_step(model, optimizer, batch, loss_kind))
            logger.debug(f"step {optimizer.step_count}: loss {losses[-1]:.6f}")
        step_losses.extend(losses)
        epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))

        message = f"Epoch {epoch + 1}/{cfg.epochs}: loss {epoch_losses[-1]:.6f}"
        if tracks_accuracy:
            accuracies.append(train_accuracy(model, train_set))
            if steps_to_full is None and accuracies[-1] == 1.0:
                steps_to_full = optimizer.step_count
            message += f", train accuracy {accuracies[-1]:.4f}"
        logger.info(message)
    elapsed = time.perf_counter() - started

    metric_name, metric_value = evaluate(model, data)
    frozen_check = assert_frozen(model, mask, snapshot)
    if not frozen_check.passed:
        raise FrozenDriftError(frozen_check.drifted_groups)

    logger.info(
        f"{spec.method.value}: {metric_name} {metric_value:.4f} after {optimizer.step_count} steps"
    )
    return TrialReport(
        config={"tuning": spec.model_dump(mode="json"), "train": cfg.model_dump(mode="json")},
        method=spec.method,
        ledger=count_params(model, spec),
        epoch_losses=epoch_losses,
        step_losses=step_losses,
        train_accuracy=accuracies,
        metric_name=metric_name,
        metric_value=metric_value,
        steps=optimizer.step_count,
        steps_to_full_train_accuracy=steps_to_full,
        frozen_check=frozen_check,
        seed=cfg.seed,
        wall_clock_seconds=elapsed,
    )
