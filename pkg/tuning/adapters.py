"""
Bottleneck adapters added residually inside each encoder layer.
"""
from dataclasses import dataclass
from typing import List, Optional

from shared.errors import DimensionError
from numerics.tensor import Tensor
from numerics import ops


@dataclass
class AdapterLayer:
    """Adapter parameters of one encoder layer."""
    down_weight: Tensor  # d x h
    up_weight: Tensor  # h x d
    down_bias: Optional[Tensor] = None  # h
    up_bias: Optional[Tensor] = None  # d
    scale: float = 0.1


@dataclass
class AdapterWeights:
    """One adapter per encoder layer."""
    layers: List[AdapterLayer]


def adapter_forward(block: Tensor, adapter: AdapterLayer) -> Tensor:
    """
    A = s * (ReLU(B W_down + b_down) W_up + b_up)

    Args:
        block: m x d output of the attention sub-block (B)
        adapter: Parameters of this layer's adapter

    Returns:
        m x d adapted feature (A)
    """
    if block.shape[1] != adapter.down_weight.shape[0] or adapter.up_weight.shape[1] != block.shape[1]:
        raise DimensionError(
            "adapter_forward",
            [block.shape, adapter.down_weight.shape, adapter.up_weight.shape]
        )
    hidden = ops.relu(ops.linear(block, adapter.down_weight, adapter.down_bias))
    return ops.scale(ops.linear(hidden, adapter.up_weight, adapter.up_bias), adapter.scale)
