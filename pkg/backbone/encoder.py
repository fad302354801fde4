"""
Pre-norm transformer encoder layer with an optional residual adapter branch.
"""
import math
from dataclasses import dataclass
from typing import Optional

from shared.errors import DimensionError
from numerics.tensor import Tensor
from numerics import ops
from tuning.adapters import AdapterLayer, adapter_forward
from .frontends import TokenSequence


@dataclass
class EncoderLayerParams:
    """Weights of one encoder layer (all weights laid out input x output)."""
    norm1_gamma: Tensor
    norm1_beta: Tensor
    query_weight: Tensor
    query_bias: Tensor
    key_weight: Tensor
    key_bias: Tensor
    value_weight: Tensor
    value_bias: Tensor
    out_weight: Tensor
    out_bias: Tensor
    norm2_gamma: Tensor
    norm2_beta: Tensor
    fc1_weight: Tensor
    fc1_bias: Tensor
    fc2_weight: Tensor
    fc2_bias: Tensor
    num_heads: int

    @property
    def width(self) -> int:
        return self.query_weight.shape[0]


def attention(x: Tensor, p: EncoderLayerParams) -> Tensor:
    """Multi-head scaled dot-product self-attention over the rows of x."""
    width = p.width
    head_dim = width // p.num_heads
    queries = ops.linear(x, p.query_weight, p.query_bias)
    keys = ops.linear(x, p.key_weight, p.key_bias)
    values = ops.linear(x, p.value_weight, p.value_bias)

    out = None
    for head in range(p.num_heads):
        lo, hi = head * head_dim, (head + 1) * head_dim
        q = ops.columns(queries, lo, hi)
        k = ops.columns(keys, lo, hi)
        v = ops.columns(values, lo, hi)
        weights = ops.softmax_rows(ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / math.sqrt(head_dim)))
        # concat(heads) @ W_o == sum_h head_h @ W_o[rows of h]
        contribution = ops.matmul(ops.matmul(weights, v), ops.slice_rows(p.out_weight, lo, hi))
        out = contribution if out is None else ops.add(out, contribution)
    return ops.add(out, p.out_bias)


def mlp(x: Tensor, p: EncoderLayerParams) -> Tensor:
    return ops.linear(ops.gelu(ops.linear(x, p.fc1_weight, p.fc1_bias)), p.fc2_weight, p.fc2_bias)


def encoder_block(x: Tensor, p: EncoderLayerParams, adapter: Optional[AdapterLayer] = None) -> Tensor:
    """
    B = Att(Norm(x)) + x
    out = MLP(Norm(B)) + B + A,  A = adapter(B) or 0
    """
    if x.shape[1] != p.width:
        raise DimensionError("encoder_layer", [x.shape, p.query_weight.shape], "sequence width != d")
    block = ops.add(attention(ops.layer_norm(x, p.norm1_gamma, p.norm1_beta), p), x)
    out = ops.add(mlp(ops.layer_norm(block, p.norm2_gamma, p.norm2_beta), p), block)
    if adapter is not None:
        out = ops.add(out, adapter_forward(block, adapter))
    return out


def encoder_layer(
    seq: TokenSequence,
    layer_params: EncoderLayerParams,
    adapter: Optional[AdapterLayer] = None
) -> TokenSequence:
    """Run one encoder layer; sequence length is preserved."""
    return seq.replace(encoder_block(seq.tokens, layer_params, adapter), seq.layer_index + 1)
