"""
Reverse-mode differentiation over a ComputationTape.
"""
import logging
from typing import Dict

import numpy as np

from shared.errors import ContractError, TapeError
from .tensor import ComputationTape, Tensor

logger = logging.getLogger(__name__)


def backward(tape: ComputationTape, loss: Tensor) -> None:
    """
    Propagate d(loss)/d(leaf) into the `grad` slot of every trainable leaf.

    Operations are replayed in exact reverse recording order. Gradients
    accumulate into leaves; frozen leaves and intermediates never receive one.

    Args:
        tape: Tape the loss was recorded on
        loss: Single-element tensor produced by the tape

    Raises:
        ContractError: loss is not a scalar
        TapeError: loss was not produced on this tape
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise TapeError("loss was not produced by an operation on this tape")

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        upstream = pending.pop(id(entry.output), None)
        if upstream is None:
            continue
        input_grads = entry.backward(upstream)
        for tensor, grad in zip(entry.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                tensor.accumulate_grad(grad)
            else:
                key = id(tensor)
                pending[key] = pending[key] + grad if key in pending else grad
    logger.debug(f"Backward pass replayed {len(tape)} operations")
