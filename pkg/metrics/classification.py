"""
Accuracy and mean average precision.
"""
import logging
import math
from typing import Dict, List, Tuple

import numpy as np

from shared.errors import InputError, MetricError

logger = logging.getLogger(__name__)


def predict_classes(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    logits = np.asarray(logits)
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    return np.argmax(logits, axis=1)


def accuracy(predictions, labels) -> float:
    """
    Fraction of predictions equal to their labels.

    Raises:
        InputError: empty input or length mismatch
    """
    predictions = np.asarray(predictions).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if predictions.size == 0:
        raise InputError("accuracy of an empty batch is undefined")
    if predictions.size != labels.size:
        raise InputError(f"{predictions.size} predictions for {labels.size} labels")
    return int(np.count_nonzero(predictions == labels)) / predictions.size


def average_precision_per_class(scores, targets) -> Tuple[Dict[int, float], List[int]]:
    """
    Non-interpolated average precision per class.

    Samples are ranked by descending score, ties broken by ascending sample
    index; AP is the mean of precision@rank over the positive ranks.

    Returns:
        Tuple of (class index -> AP, classes skipped for having no positives)
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.ndim != 2:
        raise InputError(f"scores {scores.shape} and targets {targets.shape} must be equal B x C matrices")
    if not np.all((targets == 0) | (targets == 1)):
        raise InputError("targets must be binary")
    if not targets.any():
        raise MetricError("mAP is undefined when no class has a positive target")

    per_class: Dict[int, float] = {}
    skipped: List[int] = []
    for c in range(scores.shape[1]):
        column = targets[:, c]
        if not column.any():
            skipped.append(c)
            continue
        order = np.argsort(-scores[:, c], kind="stable")
        hits = 0
        precisions = []
        for rank, index in enumerate(order, start=1):
            if column[index]:
                hits += 1
                precisions.append(hits / rank)
        per_class[c] = math.fsum(precisions) / len(precisions)
    return per_class, skipped


def mean_average_precision(scores, targets) -> float:
    """Macro average of per-class AP over classes with at least one positive."""
    per_class, skipped = average_precision_per_class(scores, targets)
    if skipped:
        logger.warning(f"mAP skipped {len(skipped)} classes without positives: {skipped}")
    return math.fsum(per_class.values()) / len(per_class)
