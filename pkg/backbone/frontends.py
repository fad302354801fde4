"""
Input frontends: spectrogram patch embedding (AST-style) and strided
convolutional feature encoder (W2V2-style).
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from shared.errors import ContractError, DimensionError, InputError
from numerics.tensor import Tensor
from numerics import ops

logger = logging.getLogger(__name__)


@dataclass
class TokenSequence:
    """
    Token rows entering or leaving an encoder layer.

    Rows are stored stacked: the classification token (when present) is row 0,
    followed by the n embedding rows.
    """
    tokens: Tensor
    has_class_token: bool
    layer_index: int = 1

    @property
    def width(self) -> int:
        return self.tokens.shape[1]

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def class_token(self) -> Optional[Tensor]:
        if not self.has_class_token:
            return None
        return ops.slice_rows(self.tokens, 0, 1)

    @property
    def embeddings(self) -> Tensor:
        if not self.has_class_token:
            return self.tokens
        return ops.slice_rows(self.tokens, 1, self.length)

    def replace(self, tokens: Tensor, layer_index: Optional[int] = None) -> "TokenSequence":
        return TokenSequence(
            tokens=tokens,
            has_class_token=self.has_class_token,
            layer_index=self.layer_index if layer_index is None else layer_index
        )


@dataclass
class ConvLayer:
    """One strided 1-D convolution with weight laid out as (kernel*in_channels) x out_channels."""
    weight: Tensor
    bias: Tensor
    kernel: int
    stride: int


def patchify(spectrogram: Union[Tensor, np.ndarray], patch_size: Tuple[int, int]) -> Tensor:
    """
    Split an F x T spectrogram into flattened non-overlapping patches.

    Time is zero-padded up to the next multiple of the patch width; the
    frequency axis must divide evenly.

    Returns:
        n x (pf*pt) matrix, patches in row-major patch order
    """
    data = spectrogram.data if isinstance(spectrogram, Tensor) else np.asarray(spectrogram)
    if data.size == 0:
        raise InputError("spectrogram is empty")
    if data.ndim != 2:
        raise InputError(f"spectrogram must be a 2-D (bins x frames) matrix, got shape {data.shape}")
    pf, pt = patch_size
    if data.shape[0] % pf != 0:
        raise InputError(f"{data.shape[0]} frequency bins are not divisible by patch height {pf}")
    return ops.patchify(spectrogram, pf, pt)


def embed_patches(
    patches: Tensor,
    weight: Tensor,
    bias: Tensor,
    class_token: Optional[Tensor] = None
) -> TokenSequence:
    """
    Project patches to width d (E^1) and prepend the classification token.
    """
    if patches.shape[1] != weight.shape[0]:
        raise DimensionError("embed_patches", [patches.shape, weight.shape], "patch length != projection input")
    embeddings = ops.linear(patches, weight, bias)
    if class_token is None:
        return TokenSequence(tokens=embeddings, has_class_token=False)
    if class_token.shape != (1, weight.shape[1]):
        raise DimensionError("embed_patches", [class_token.shape, weight.shape], "class token width")
    return TokenSequence(tokens=ops.concat_rows(class_token, embeddings), has_class_token=True)


def conv_output_length(length: int, conv_stack: Sequence[Tuple[int, int, int]]) -> int:
    """Composed output length of strided convolutions (0 when too short)."""
    for _, kernel, stride in conv_stack:
        if length < kernel:
            return 0
        length = (length - kernel) // stride + 1
    return length


def minimum_waveform_length(conv_stack: Sequence[Tuple[int, int, int]]) -> int:
    """Shortest input that yields at least one frame after every conv layer."""
    length = 1
    for _, kernel, stride in reversed(list(conv_stack)):
        length = (length - 1) * stride + kernel
    return length


def as_waveform_column(waveform: Union[Tensor, np.ndarray]) -> Tensor:
    """Shape a waveform as an S x 1 column."""
    if isinstance(waveform, Tensor):
        if waveform.data.ndim == 2 and waveform.shape[1] == 1:
            return waveform
        if waveform.requires_grad:
            raise ContractError("trainable waveforms must already be S x 1 columns")
        return Tensor(waveform.data.reshape(-1, 1))
    data = np.asarray(waveform)
    if data.ndim == 2 and data.shape[1] == 1:
        return Tensor(data)
    if data.ndim != 1:
        raise InputError(f"waveform must be 1-D, got shape {data.shape}")
    return Tensor(data.reshape(-1, 1))


def conv_frontend(
    waveform: Union[Tensor, np.ndarray],
    conv_layers: List[ConvLayer],
    norm: Optional[Tuple[Tensor, Tensor]] = None,
    projection: Optional[Tuple[Tensor, Tensor]] = None
) -> TokenSequence:
    """
    Convert a raw waveform into frame embeddings E^1.

    Each conv layer is followed by GELU; an optional layer norm and feature
    projection follow the stack.
    """
    column = as_waveform_column(waveform)
    stack = [(layer.weight.shape[1], layer.kernel, layer.stride) for layer in conv_layers]
    if column.shape[0] == 0 or conv_output_length(column.shape[0], stack) < 1:
        raise InputError(
            f"waveform of {column.shape[0]} samples is too short; "
            f"minimum length is {minimum_waveform_length(stack)}"
        )

    hidden = column
    for layer in conv_layers:
        frames = ops.unfold_rows(hidden, layer.kernel, layer.stride)
        hidden = ops.gelu(ops.linear(frames, layer.weight, layer.bias))

    if norm is not None:
        hidden = ops.layer_norm(hidden, norm[0], norm[1])
    if projection is not None:
        hidden = ops.linear(hidden, projection[0], projection[1])
    return TokenSequence(tokens=hidden, has_class_token=False)
