"""
Input prompts: learnable additive perturbations of the raw model input.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from shared.errors import ConfigError
from shared.models import BackboneKind
from numerics.tensor import Tensor
from numerics import ops


def border_mask(shape: Tuple[int, int], band: int) -> np.ndarray:
    """Boolean mask of a border band of the given width on all four sides."""
    bins, frames = shape
    if 2 * band > min(bins, frames):
        raise ConfigError(f"input prompt band {band} does not fit a {bins}x{frames} spectrogram")
    mask = np.zeros((bins, frames), dtype=bool)
    mask[:band, :] = True
    mask[bins - band:, :] = True
    mask[:, :band] = True
    mask[:, frames - band:] = True
    return mask


def leading_mask(samples: int, extent: int) -> np.ndarray:
    """Boolean S x 1 mask covering the first `extent` samples."""
    if extent > samples:
        raise ConfigError(f"input prompt of {extent} samples exceeds a {samples}-sample waveform")
    mask = np.zeros((samples, 1), dtype=bool)
    mask[:extent, 0] = True
    return mask


def input_prompt_size(kind: BackboneKind, input_shape: Tuple[int, ...], extent: int) -> int:
    """Number of learnable input-prompt entries."""
    if kind == BackboneKind.AST_LIKE:
        return int(border_mask(tuple(input_shape), extent).sum())
    return int(leading_mask(input_shape[0], extent).sum())


@dataclass
class InputPrompt:
    """
    Additive prompt over a spectrogram border band (ast_like) or over the
    leading waveform samples (w2v2_like).
    """
    values: Tensor
    kind: BackboneKind
    extent: int
    input_shape: Tuple[int, ...]

    def region(self, shape: Tuple[int, ...]) -> np.ndarray:
        if self.kind == BackboneKind.AST_LIKE:
            if tuple(shape) != tuple(self.input_shape):
                raise ConfigError(f"input prompt built for {self.input_shape}, got input {shape}")
            return border_mask(tuple(shape), self.extent)
        return leading_mask(shape[0], self.extent)


def apply_input_prompt(x: Tensor, prompt: InputPrompt) -> Tensor:
    """Overlay the prompt on its region; entries outside the region are untouched."""
    return ops.masked_add(x, prompt.values, prompt.region(x.shape))
