"""
Training objectives over batched logits.
"""
import numpy as np

from shared.errors import LabelError
from shared.models import LossKind
from numerics.ops import TensorLike, forward_op
from numerics.tensor import Tensor


def cross_entropy(logits: TensorLike, labels) -> Tensor:
    """
    Mean over the batch of -log softmax(logits)[label].

    Args:
        logits: B x C scores
        labels: B integer class ids in [0, C)

    Raises:
        LabelError: a label is outside [0, C) or not an integer
    """
    labels = np.asarray(labels)
    if labels.dtype.kind == "f":
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise LabelError(f"class ids must be integers, got {labels.tolist()}")
        labels = labels.astype(np.int64)
    return forward_op("cross_entropy", [logits], labels=labels)


def multilabel_bce(logits: TensorLike, targets) -> Tensor:
    """Mean over all B x C entries of the sigmoid binary cross-entropy."""
    return forward_op("sigmoid_bce", [logits], targets=np.asarray(targets))


def compute_loss(kind: LossKind, logits: TensorLike, targets) -> Tensor:
    if kind == LossKind.MULTILABEL_BCE:
        return multilabel_bce(logits, targets)
    return cross_entropy(logits, targets)
