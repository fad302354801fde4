"""
Attaching a transfer strategy to a backbone: added parameters and freezing.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Tuple

import numpy as np

from shared.errors import ConfigError
from shared.models import BackboneConfig, TuningMethod, TuningSpec
from numerics.tensor import Tensor
from numerics.rng import make_rng
from backbone.encoder import encoder_layer
from backbone.model import HEAD_GROUP, AudioTransformer, ModelInput, ParamSpec
from .adapters import AdapterLayer, AdapterWeights
from .input_prompt import InputPrompt, apply_input_prompt, input_prompt_size
from .prompts import PromptBank, ep_layer_forward

logger = logging.getLogger(__name__)

PROMPT_GROUP = "prompts"
ADAPTER_GROUP = "adapters"
INPUT_PROMPT_GROUP = "input_prompt"

# Groups trained by each method; every other group is frozen. FT trains everything.
TRAINABLE_GROUPS: Dict[TuningMethod, FrozenSet[str]] = {
    TuningMethod.LP: frozenset({HEAD_GROUP}),
    TuningMethod.IP: frozenset({HEAD_GROUP, INPUT_PROMPT_GROUP}),
    TuningMethod.EP: frozenset({HEAD_GROUP, PROMPT_GROUP}),
    TuningMethod.ADAPTER: frozenset({HEAD_GROUP, ADAPTER_GROUP}),
    TuningMethod.IPET: frozenset({HEAD_GROUP, PROMPT_GROUP, ADAPTER_GROUP}),
}


def is_trainable_group(method: TuningMethod, group: str) -> bool:
    if method == TuningMethod.FT:
        return True
    return group in TRAINABLE_GROUPS[method]


def check_compatible(config: BackboneConfig, spec: TuningSpec):
    """Reject method settings the backbone cannot host."""
    if (spec.uses_prompts or spec.uses_adapters) and config.depth == 0:
        raise ConfigError(f"{spec.method.value} needs encoder layers, but the backbone has depth 0")
    if spec.uses_prompts and spec.k >= config.context_capacity:
        raise ConfigError(f"k={spec.k} reaches the attention context capacity {config.context_capacity}")
    if spec.uses_input_prompt:
        if config.input_shape is None:
            raise ConfigError("IP needs the backbone input_shape to size the input prompt")
        input_prompt_size(config.kind, tuple(config.input_shape), spec.ip_len)


def tuning_parameter_shapes(config: BackboneConfig, spec: TuningSpec) -> "OrderedDict[str, ParamSpec]":
    """Enumerate the parameters a method adds to the backbone."""
    check_compatible(config, spec)
    d = config.width
    specs: "OrderedDict[str, ParamSpec]" = OrderedDict()
    if spec.uses_input_prompt:
        size = input_prompt_size(config.kind, tuple(config.input_shape), spec.ip_len)
        specs["input_prompt"] = ParamSpec((size,), INPUT_PROMPT_GROUP, "zeros")
    if spec.uses_prompts:
        for i in range(config.depth):
            specs[f"prompts.{i}"] = ParamSpec((spec.k, d), PROMPT_GROUP, "prompt")
    if spec.uses_adapters:
        for i in range(config.depth):
            prefix = f"adapters.{i}"
            specs[f"{prefix}.down.weight"] = ParamSpec((d, spec.h), ADAPTER_GROUP, "down")
            if spec.adapter_bias:
                specs[f"{prefix}.down.bias"] = ParamSpec((spec.h,), ADAPTER_GROUP, "zeros")
            specs[f"{prefix}.up.weight"] = ParamSpec((spec.h, d), ADAPTER_GROUP, "zeros")
            if spec.adapter_bias:
                specs[f"{prefix}.up.bias"] = ParamSpec((d,), ADAPTER_GROUP, "zeros")
    return specs


def _initial_value(spec: ParamSpec, width: int, rng: np.random.Generator, dtype) -> np.ndarray:
    if spec.init == "zeros":
        return np.zeros(spec.shape, dtype=dtype)
    # prompts: U(-1/sqrt(d), 1/sqrt(d)); W_down: U(-1, 1) scaled by 1/sqrt(d)
    bound = 1.0 / np.sqrt(width)
    return rng.uniform(-bound, bound, size=spec.shape).astype(dtype)


@dataclass(frozen=True)
class FreezeMask:
    """Names of parameters that receive neither gradients nor updates."""
    frozen: FrozenSet[str] = field(default_factory=frozenset)

    def is_frozen(self, name: str) -> bool:
        return name in self.frozen

    def __len__(self) -> int:
        return len(self.frozen)

    def __iter__(self):
        return iter(sorted(self.frozen))


class TunedModel:
    """A backbone with a transfer strategy attached."""

    def __init__(
        self,
        backbone: AudioTransformer,
        spec: TuningSpec,
        extras: "OrderedDict[str, Tensor]",
        extra_groups: Dict[str, str],
        prompts: Optional[PromptBank] = None,
        adapters: Optional[AdapterWeights] = None,
        input_prompt: Optional[InputPrompt] = None
    ):
        self.backbone = backbone
        self.spec = spec
        self.extras = extras
        self.extra_groups = extra_groups
        self.prompts = prompts
        self.adapters = adapters
        self.input_prompt = input_prompt
        self.freeze_mask = FreezeMask()

    @property
    def config(self) -> BackboneConfig:
        return self.backbone.config

    @property
    def num_classes(self) -> int:
        return self.backbone.num_classes

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict(self.backbone.parameters())
        params.update(self.extras)
        return params

    def group_of(self, name: str) -> str:
        if name in self.extra_groups:
            return self.extra_groups[name]
        return self.backbone.group_of(name)

    def trainable_parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((n, p) for n, p in self.parameters().items() if p.requires_grad)

    def represent(self, x: ModelInput) -> Tensor:
        """Pre-head representation under the attached method."""
        backbone = self.backbone
        inputs = backbone.prepare_input(x)
        if self.input_prompt is not None:
            inputs = apply_input_prompt(inputs, self.input_prompt)
        seq = backbone.embed(inputs)
        for i in range(backbone.config.depth):
            adapter = self.adapters.layers[i] if self.adapters is not None else None
            if self.prompts is not None:
                seq = ep_layer_forward(
                    seq, self.prompts[i], backbone.layer(i), adapter, capacity=backbone.config.context_capacity
                )
            else:
                seq = encoder_layer(seq, backbone.layer(i), adapter)
        return backbone.readout(seq)

    def forward(self, x: ModelInput) -> Tensor:
        """Logits y (1 x C) for a single input."""
        return self.backbone.classify(self.represent(x))


def attach(model: AudioTransformer, spec: TuningSpec, seed: Optional[int] = None) -> Tuple[TunedModel, FreezeMask]:
    """
    Attach a transfer strategy and freeze everything it does not train.

    Args:
        model: Backbone (its parameter flags are mutated)
        spec: Method and hyperparameters
        seed: Seed for the added parameters (defaults to the backbone seed)

    Returns:
        Tuple of (tuned model, freeze mask)
    """
    config = model.config
    shapes = tuning_parameter_shapes(config, spec)
    rng = make_rng(config.seed if seed is None else seed, 1)
    dtype = np.dtype(config.dtype.value)

    extras: "OrderedDict[str, Tensor]" = OrderedDict(
        (name, Tensor(_initial_value(s, config.width, rng, dtype), requires_grad=True, name=name))
        for name, s in shapes.items()
    )
    extra_groups = {name: s.group for name, s in shapes.items()}

    prompts = None
    if spec.uses_prompts:
        prompts = PromptBank([extras[f"prompts.{i}"] for i in range(config.depth)])

    adapters = None
    if spec.uses_adapters:
        adapters = AdapterWeights(
            layers=[
                AdapterLayer(
                    down_weight=extras[f"adapters.{i}.down.weight"],
                    up_weight=extras[f"adapters.{i}.up.weight"],
                    down_bias=extras.get(f"adapters.{i}.down.bias"),
                    up_bias=extras.get(f"adapters.{i}.up.bias"),
                    scale=spec.s,
                )
                for i in range(config.depth)
            ]
        )

    input_prompt = None
    if spec.uses_input_prompt:
        input_prompt = InputPrompt(
            values=extras["input_prompt"],
            kind=config.kind,
            extent=spec.ip_len,
            input_shape=tuple(config.input_shape),
        )

    tuned = TunedModel(model, spec, extras, extra_groups, prompts, adapters, input_prompt)

    frozen = set()
    for name, tensor in tuned.parameters().items():
        trainable = is_trainable_group(spec.method, tuned.group_of(name))
        tensor.requires_grad = trainable
        tensor.grad = None
        if not trainable:
            frozen.add(name)
    mask = FreezeMask(frozenset(frozen))
    tuned.freeze_mask = mask

    trainable_count = sum(p.size for p in tuned.trainable_parameters().values())
    total_count = sum(p.size for p in tuned.parameters().values())
    logger.info(
        f"Attached {spec.method.value} to {config.kind.value} backbone: "
        f"{trainable_count}/{total_count} trainable parameters"
    )
    return tuned, mask
