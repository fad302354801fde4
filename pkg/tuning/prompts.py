"""
Embedding prompts: learnable rows concatenated in front of every encoder
layer's input and stripped from its output.
"""
from dataclasses import dataclass
from typing import List, Optional

from shared.errors import ConfigError, DimensionError
from numerics.tensor import Tensor
from numerics import ops
from backbone.encoder import EncoderLayerParams, encoder_block
from backbone.frontends import TokenSequence
from .adapters import AdapterLayer


@dataclass
class PromptBank:
    """One k x d prompt matrix per encoder layer."""
    prompts: List[Tensor]

    @property
    def count(self) -> int:
        return self.prompts[0].shape[0] if self.prompts else 0

    def __len__(self) -> int:
        return len(self.prompts)

    def __getitem__(self, layer: int) -> Tensor:
        return self.prompts[layer]


def ep_layer_forward(
    seq: TokenSequence,
    prompt: Optional[Tensor],
    layer: EncoderLayerParams,
    adapter: Optional[AdapterLayer] = None,
    capacity: Optional[int] = None
) -> TokenSequence:
    """
    [_, x^{i+1}, E^{i+1}] = f^i([R^i, x^i, E^i])

    The k leading output rows (processed prompts) are discarded, so the
    returned sequence has the same length as the input. A missing prompt
    degenerates to the plain encoder layer.

    Args:
        seq: Layer input [x^i, E^i]
        prompt: k x d prompt matrix R^i, or None for k = 0
        layer: Encoder layer weights
        adapter: Optional adapter of this layer (IPET)
        capacity: Attention context capacity; k >= capacity is rejected
    """
    if prompt is None:
        return seq.replace(encoder_block(seq.tokens, layer, adapter), seq.layer_index + 1)

    k = prompt.shape[0]
    if prompt.shape[1] != seq.width:
        raise DimensionError("ep_layer_forward", [prompt.shape, seq.tokens.shape], "prompt width != d")
    if capacity is not None and k >= capacity:
        raise ConfigError(f"{k} prompts reach the attention context capacity {capacity}")

    prompted = ops.concat_rows(prompt, seq.tokens)
    processed = encoder_block(prompted, layer, adapter)
    stripped = ops.slice_rows(processed, k, k + seq.length)
    return seq.replace(stripped, seq.layer_index + 1)
