"""
Miniature AST-like and W2V2-like audio transformers.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from shared.errors import InputError
from shared.models import BackboneConfig, BackboneKind
from numerics.tensor import Tensor
from numerics.rng import make_rng
from numerics import ops
from .encoder import EncoderLayerParams, encoder_layer
from .frontends import (
    ConvLayer,
    TokenSequence,
    as_waveform_column,
    conv_frontend,
    embed_patches,
    patchify,
)

logger = logging.getLogger(__name__)

ModelInput = Union[Tensor, np.ndarray]

HEAD_GROUP = "head"


@dataclass(frozen=True)
class ParamSpec:
    """Shape, ledger group and initializer of one parameter."""
    shape: Tuple[int, ...]
    group: str
    init: str  # "fan_in", "zeros", "ones", "normal"

    @property
    def count(self) -> int:
        return int(np.prod(self.shape))


def _linear_specs(prefix: str, fan_in: int, fan_out: int, group: str) -> Dict[str, ParamSpec]:
    return {
        f"{prefix}.weight": ParamSpec((fan_in, fan_out), group, "fan_in"),
        f"{prefix}.bias": ParamSpec((fan_out,), group, "zeros"),
    }


def _norm_specs(prefix: str, width: int, group: str) -> Dict[str, ParamSpec]:
    return {
        f"{prefix}.gamma": ParamSpec((width,), group, "ones"),
        f"{prefix}.beta": ParamSpec((width,), group, "zeros"),
    }


def parameter_shapes(config: BackboneConfig, num_classes: int) -> "OrderedDict[str, ParamSpec]":
    """
    Enumerate every backbone parameter without allocating it.

    Args:
        config: Backbone architecture
        num_classes: Head output size C

    Returns:
        Ordered mapping name -> ParamSpec
    """
    d = config.width
    specs: "OrderedDict[str, ParamSpec]" = OrderedDict()

    if config.kind == BackboneKind.AST_LIKE:
        pf, pt = config.patch_size
        specs.update(_linear_specs("patch_embedding", pf * pt, d, "patch_embedding"))
        specs["cls_token"] = ParamSpec((1, d), "cls_token", "normal")
        specs["positions"] = ParamSpec((config.max_sequence + 1, d), "positions", "normal")
    else:
        in_channels = 1
        for j, (channels, kernel, _) in enumerate(config.conv_stack):
            specs.update(_linear_specs(f"conv.{j}", kernel * in_channels, channels, "conv_frontend"))
            in_channels = channels
        specs.update(_norm_specs("frontend_norm", in_channels, "frontend_norm"))
        if in_channels != d:
            specs.update(_linear_specs("feature_projection", in_channels, d, "feature_projection"))
        specs["positions"] = ParamSpec((config.max_sequence, d), "positions", "normal")

    for i in range(config.depth):
        prefix = f"layers.{i}"
        specs.update(_norm_specs(f"{prefix}.norm1", d, "encoder"))
        for proj in ("query", "key", "value", "out"):
            specs.update(_linear_specs(f"{prefix}.attention.{proj}", d, d, "encoder"))
        specs.update(_norm_specs(f"{prefix}.norm2", d, "encoder"))
        specs.update(_linear_specs(f"{prefix}.mlp.fc1", d, config.mlp_hidden, "encoder"))
        specs.update(_linear_specs(f"{prefix}.mlp.fc2", config.mlp_hidden, d, "encoder"))

    if config.kind == BackboneKind.AST_LIKE:
        specs.update(_norm_specs("final_norm", d, "final_norm"))
    specs.update(_linear_specs("head", config.head_input_width, num_classes, HEAD_GROUP))
    return specs


def initialize(spec: ParamSpec, rng: np.random.Generator, dtype) -> np.ndarray:
    """Draw initial values for one parameter."""
    if spec.init == "zeros":
        return np.zeros(spec.shape, dtype=dtype)
    if spec.init == "ones":
        return np.ones(spec.shape, dtype=dtype)
    if spec.init == "normal":
        return (0.02 * rng.standard_normal(spec.shape)).astype(dtype)
    bound = 1.0 / np.sqrt(spec.shape[0])
    return rng.uniform(-bound, bound, size=spec.shape).astype(dtype)


class AudioTransformer:
    """
    Frozen-able audio transformer backbone with a classification head.

    Parameters live in an ordered name -> Tensor mapping; every parameter
    belongs to exactly one ledger group.
    """

    def __init__(self, config: BackboneConfig, num_classes: int):
        self.config = config
        self.num_classes = num_classes
        self.specs = parameter_shapes(config, num_classes)
        dtype = np.dtype(config.dtype.value)
        rng = make_rng(config.seed, 0)
        self.params: "OrderedDict[str, Tensor]" = OrderedDict(
            (name, Tensor(initialize(spec, rng, dtype), requires_grad=True, name=name))
            for name, spec in self.specs.items()
        )
        logger.info(
            f"Built {config.kind.value} backbone: depth={config.depth}, width={config.width}, "
            f"{sum(p.size for p in self.params.values())} parameters"
        )

    @property
    def kind(self) -> BackboneKind:
        return self.config.kind

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return self.params

    def group_of(self, name: str) -> str:
        return self.specs[name].group

    def layer(self, i: int) -> EncoderLayerParams:
        p = self.params
        prefix = f"layers.{i}"
        return EncoderLayerParams(
            norm1_gamma=p[f"{prefix}.norm1.gamma"],
            norm1_beta=p[f"{prefix}.norm1.beta"],
            query_weight=p[f"{prefix}.attention.query.weight"],
            query_bias=p[f"{prefix}.attention.query.bias"],
            key_weight=p[f"{prefix}.attention.key.weight"],
            key_bias=p[f"{prefix}.attention.key.bias"],
            value_weight=p[f"{prefix}.attention.value.weight"],
            value_bias=p[f"{prefix}.attention.value.bias"],
            out_weight=p[f"{prefix}.attention.out.weight"],
            out_bias=p[f"{prefix}.attention.out.bias"],
            norm2_gamma=p[f"{prefix}.norm2.gamma"],
            norm2_beta=p[f"{prefix}.norm2.beta"],
            fc1_weight=p[f"{prefix}.mlp.fc1.weight"],
            fc1_bias=p[f"{prefix}.mlp.fc1.bias"],
            fc2_weight=p[f"{prefix}.mlp.fc2.weight"],
            fc2_bias=p[f"{prefix}.mlp.fc2.bias"],
            num_heads=self.config.num_heads,
        )

    def conv_layers(self) -> List[ConvLayer]:
        return [
            ConvLayer(
                weight=self.params[f"conv.{j}.weight"],
                bias=self.params[f"conv.{j}.bias"],
                kernel=kernel,
                stride=stride,
            )
            for j, (_, kernel, stride) in enumerate(self.config.conv_stack)
        ]

    # ------------------------------------------------------------------
    # Pipeline stages
    # ------------------------------------------------------------------

    def prepare_input(self, x: ModelInput) -> Tensor:
        """Validate raw input: F x T spectrogram (ast_like) or S x 1 waveform (w2v2_like)."""
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        if data.size == 0:
            raise InputError("model input is empty")
        if self.kind == BackboneKind.AST_LIKE:
            if data.ndim != 2:
                raise InputError(f"ast_like backbone expects a bins x frames spectrogram, got {data.shape}")
            return x if isinstance(x, Tensor) else Tensor(data)
        if data.ndim == 2 and data.shape[1] != 1:
            raise InputError(f"w2v2_like backbone expects a waveform, got shape {data.shape}")
        return as_waveform_column(x)

    def embed(self, x: Tensor) -> TokenSequence:
        """Frontend plus positional embeddings; yields the layer-1 sequence."""
        p = self.params
        if self.kind == BackboneKind.AST_LIKE:
            patches = patchify(x, tuple(self.config.patch_size))
            if patches.shape[0] > self.config.max_sequence:
                raise InputError(
                    f"{patches.shape[0]} patches exceed max_sequence {self.config.max_sequence}"
                )
            seq = embed_patches(patches, p["patch_embedding.weight"], p["patch_embedding.bias"], p["cls_token"])
        else:
            norm = (p["frontend_norm.gamma"], p["frontend_norm.beta"])
            projection = None
            if "feature_projection.weight" in p:
                projection = (p["feature_projection.weight"], p["feature_projection.bias"])
            seq = conv_frontend(x, self.conv_layers(), norm=norm, projection=projection)
            if seq.length > self.config.max_sequence:
                raise InputError(f"{seq.length} frames exceed max_sequence {self.config.max_sequence}")
        positions = ops.slice_rows(p["positions"], 0, seq.length)
        return seq.replace(ops.add(seq.tokens, positions))

    def readout(self, seq: TokenSequence) -> Tensor:
        """Pre-head representation: normed class token, or mean plus std pooling over time."""
        if self.kind == BackboneKind.AST_LIKE:
            return ops.layer_norm(seq.class_token, self.params["final_norm.gamma"], self.params["final_norm.beta"])
        frames = seq.embeddings
        return ops.concat_cols(ops.mean_rows(frames), ops.stddev_rows(frames))

    def classify(self, representation: Tensor) -> Tensor:
        return ops.linear(representation, self.params["head.weight"], self.params["head.bias"])

    def represent(self, x: ModelInput) -> Tensor:
        seq = self.embed(self.prepare_input(x))
        for i in range(self.config.depth):
            seq = encoder_layer(seq, self.layer(i))
        return self.readout(seq)

    def forward(self, x: ModelInput) -> Tensor:
        """Logits y (1 x C) for a single input."""
        return self.classify(self.represent(x))


def build_model(config: BackboneConfig, num_classes: int) -> AudioTransformer:
    """Construct a backbone with seeded initialization."""
    return AudioTransformer(config, num_classes)
