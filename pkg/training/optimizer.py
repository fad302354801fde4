"""
Adam with bias correction, confined to trainable parameters.
"""
import logging
from typing import Dict, Mapping, Optional

import numpy as np

from shared.errors import ConfinementError
from numerics.tensor import Tensor

logger = logging.getLogger(__name__)


class OptimizerState:
    """
    Moment accumulators for every trainable parameter.

    Parameters whose `requires_grad` is False at construction are frozen for
    the lifetime of the state: they get no accumulators and are never written.
    """

    def __init__(
        self,
        parameters: Mapping[str, Tensor],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8
    ):
        self.parameters = dict(parameters)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}
        for name, p in self.parameters.items():
            if p.requires_grad:
                self.first_moment[name] = np.zeros_like(p.data)
                self.second_moment[name] = np.zeros_like(p.data)
        self.frozen = frozenset(n for n in self.parameters if n not in self.first_moment)


def _collect_gradients(state: OptimizerState) -> Dict[str, np.ndarray]:
    grads = {}
    for name, p in state.parameters.items():
        if name in state.frozen:
            if p.grad is not None:
                raise ConfinementError(f"frozen parameter {name} carries a gradient")
            continue
        grads[name] = p.grad
    return grads


def adam_step(state: OptimizerState, grads: Optional[Mapping[str, Optional[np.ndarray]]] = None) -> int:
    """
    Apply one bias-corrected Adam update in place.

    Args:
        state: Optimizer state owning the parameters
        grads: Gradients by parameter name; defaults to each parameter's
            `grad` slot. A trainable parameter without a gradient is updated
            with a zero gradient.

    Returns:
        The new step count

    Raises:
        ConfinementError: a gradient is supplied for a frozen parameter
    """
    if grads is None:
        grads = _collect_gradients(state)
    else:
        leaked = sorted(n for n, g in grads.items() if g is not None and n in state.frozen)
        if leaked:
            raise ConfinementError(f"gradients supplied for frozen parameters: {leaked}")
        unknown = sorted(n for n in grads if n not in state.parameters)
        if unknown:
            raise ConfinementError(f"gradients supplied for unknown parameters: {unknown}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t

    for name in state.first_moment:
        p = state.parameters[name]
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.data.dtype).reshape(p.shape)
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return t
