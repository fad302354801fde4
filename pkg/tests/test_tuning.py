"""
Tests for method attachment, prompts, adapters, input prompts, ledgers and
frozen-parameter checks.
"""
import csv
from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings
from hypothesis import strategies as st

from shared.errors import ConfigError, SnapshotCorruptionError
from shared.models import BackboneConfig, TuningMethod, TuningSpec
from numerics.tensor import Tensor
from backbone.encoder import encoder_layer
from backbone.frontends import TokenSequence
from backbone.model import build_model
from tuning.adapters import AdapterLayer, AdapterWeights, adapter_forward
from tuning.attach import attach, check_compatible
from tuning.frozen import assert_frozen, snapshot_parameters
from tuning.input_prompt import InputPrompt, apply_input_prompt, input_prompt_size
from tuning.ledger import (
    LEDGER_HEADER,
    SUMMARY_HEADER,
    count_params,
    format_ledger,
    ledger_for_config,
    write_ledger_csv,
)
from tuning.prompts import ep_layer_forward

from conftest import ast_config, w2v2_config

ALL_METHODS = list(TuningMethod)

AST_REAL_SCALE = BackboneConfig(
    kind="ast_like",
    depth=12,
    width=768,
    mlp_hidden=3072,
    num_heads=12,
    patch_size=(16, 16),
    max_sequence=1212,
)


def brute_force_ledger(tuned):
    """Per-group (count, trainable) from the live tensors of an attached model."""
    groups = {}
    for name, tensor in tuned.parameters().items():
        group = tuned.group_of(name)
        count, trainable = groups.get(group, (0, tensor.requires_grad))
        assert trainable == tensor.requires_grad
        groups[group] = (count + tensor.data.size, trainable)
    return groups


# ============================================================================
# Parameter accounting
# ============================================================================

def test_real_scale_ast_full_finetuning_total():
    ledger = ledger_for_config(AST_REAL_SCALE, TuningSpec(method="FT"), num_classes=50)
    assert 83e6 <= ledger.total <= 92e6
    assert abs(ledger.total - 87.47e6) <= 0.05 * 87.47e6
    assert ledger.total_frozen == 0
    assert ledger.trainable_percent == 100.0


def test_real_scale_lp_head_sizes():
    sizes = [
        ledger_for_config(AST_REAL_SCALE, TuningSpec(method="LP"), num_classes=c).total_trainable
        for c in (50, 200, 10, 35, 1251)
    ]
    assert sizes[0] == 38_450
    assert abs(np.mean(sizes) / 1e6 - 0.238) < 5e-4


def test_ipet_desk_counts(tiny_ast):
    ledger = ledger_for_config(tiny_ast, TuningSpec(method="IPET", k=4, h=8), num_classes=3)
    assert ledger.group("prompts").count == 128
    assert ledger.group("adapters").count == 560
    assert ledger.group("prompts").trainable and ledger.group("adapters").trainable
    assert not ledger.group("encoder").trainable
    assert ledger.total_trainable == 128 + 560 + 16 * 3 + 3


def test_ipet_percent_between_lp_and_ft(tiny_ast):
    def percent(method):
        return ledger_for_config(tiny_ast, TuningSpec(method=method, k=4, h=8), 3).trainable_percent

    assert percent("LP") < percent("IPET") < percent("FT") == 100.0


def test_prompt_count_scales_by_depth_times_width(tiny_ast):
    trainable = [
        ledger_for_config(tiny_ast, TuningSpec(method="EP", k=k), 3).total_trainable for k in (1, 2, 4, 8)
    ]
    per_unit = tiny_ast.depth * tiny_ast.width
    assert np.diff(trainable).tolist() == [per_unit, 2 * per_unit, 4 * per_unit]


def test_adapter_without_bias(tiny_ast):
    ledger = ledger_for_config(tiny_ast, TuningSpec(method="Adapter", h=8, adapter_bias=False), 3)
    assert ledger.group("adapters").count == 2 * (16 * 8 + 8 * 16)


@st.composite
def small_setups(draw):
    kind = draw(st.sampled_from(["ast_like", "w2v2_like"]))
    heads = draw(st.integers(1, 3))
    width = heads * draw(st.integers(1, 4))
    common = dict(
        kind=kind,
        depth=draw(st.integers(1, 3)),
        width=width,
        mlp_hidden=draw(st.integers(1, 12)),
        num_heads=heads,
        max_sequence=draw(st.integers(5, 20)),
        seed=draw(st.integers(0, 100)),
    )
    if kind == "ast_like":
        pf, pt = draw(st.integers(1, 4)), draw(st.integers(1, 4))
        common.update(
            patch_size=(pf, pt),
            input_shape=(pf * draw(st.integers(2, 4)), draw(st.integers(2, 12))),
        )
    else:
        layers = draw(st.lists(
            st.tuples(st.integers(1, 10), st.integers(1, 4), st.integers(1, 3)), min_size=1, max_size=3
        ))
        common.update(conv_stack=layers, input_shape=(draw(st.integers(4, 40)),))
    tuning = dict(
        k=draw(st.integers(1, 4)),
        h=draw(st.integers(1, 6)),
        ip_len=1,
        adapter_bias=draw(st.booleans()),
    )
    return BackboneConfig(**common), tuning, draw(st.integers(2, 6))


@hypothesis_settings(max_examples=50, deadline=None)
@given(setup=small_setups())
def test_ledger_matches_tensor_enumeration(setup):
    config, tuning, num_classes = setup
    for method in ALL_METHODS:
        spec = TuningSpec(method=method, **tuning)
        tuned, _ = attach(build_model(config, num_classes), spec, seed=0)
        ledger = count_params(tuned)
        oracle = brute_force_ledger(tuned)
        assert {g.name: (g.count, g.trainable) for g in ledger.groups} == oracle
        assert ledger.total == sum(count for count, _ in oracle.values())


def test_ledger_csv_layout(tiny_ast, tmp_path):
    ledger = ledger_for_config(tiny_ast, TuningSpec(method="IPET", k=4, h=8), 3)
    path = write_ledger_csv(ledger, tmp_path / "ledger.csv")
    with path.open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == LEDGER_HEADER
    assert len(rows) == 1 + len(ledger.groups) + 2
    assert rows[-2] == SUMMARY_HEADER
    assert rows[-1] == [str(ledger.total_trainable), str(ledger.total_frozen), f"{ledger.trainable_percent:.2f}"]
    assert "prompts" in format_ledger(ledger)


# ============================================================================
# Attachment and freezing
# ============================================================================

@pytest.mark.parametrize("method,trainable_groups", [
    ("LP", {"head"}),
    ("IP", {"head", "input_prompt"}),
    ("EP", {"head", "prompts"}),
    ("Adapter", {"head", "adapters"}),
    ("IPET", {"head", "prompts", "adapters"}),
])
def test_freeze_mask_per_method(tiny_ast, method, trainable_groups):
    tuned, mask = attach(build_model(tiny_ast, 3), TuningSpec(method=method, k=2, h=4, ip_len=1))
    for name, tensor in tuned.parameters().items():
        group = tuned.group_of(name)
        assert tensor.requires_grad == (group in trainable_groups)
        assert mask.is_frozen(name) == (group not in trainable_groups)


def test_full_finetuning_freezes_nothing(tiny_ast):
    tuned, mask = attach(build_model(tiny_ast, 3), TuningSpec(method="FT"))
    assert len(mask) == 0
    assert all(p.requires_grad for p in tuned.parameters().values())


def test_incompatible_settings_are_config_errors(tiny_ast):
    with pytest.raises(ConfigError):
        check_compatible(ast_config(depth=0), TuningSpec(method="EP", k=2))
    with pytest.raises(ConfigError):
        check_compatible(ast_config(depth=0), TuningSpec(method="Adapter", h=2))
    with pytest.raises(ConfigError):
        check_compatible(tiny_ast, TuningSpec(method="EP", k=tiny_ast.context_capacity))
    with pytest.raises(ConfigError):
        check_compatible(tiny_ast, TuningSpec(method="IP", ip_len=5))
    with pytest.raises(ConfigError):
        check_compatible(ast_config(input_shape=None), TuningSpec(method="IP", ip_len=1))


def test_prompt_initialization_range(tiny_ast):
    tuned, _ = attach(build_model(tiny_ast, 3), TuningSpec(method="IPET", k=3, h=4), seed=9)
    bound = 1.0 / np.sqrt(tiny_ast.width)
    prompts = tuned.extras["prompts.0"].data
    assert prompts.shape == (3, 16)
    assert np.all(np.abs(prompts) <= bound)
    np.testing.assert_array_equal(tuned.extras["adapters.0.up.weight"].data, np.zeros((4, 16)))


# ============================================================================
# Embedding prompts and adapters
# ============================================================================

def test_prompted_layer_preserves_sequence_length(tiny_ast, rng):
    model = build_model(tiny_ast, 2)
    seq = TokenSequence(tokens=Tensor(rng.standard_normal((5, 16))), has_class_token=True)
    for i in range(tiny_ast.depth):
        for k in range(1, 6):
            prompt = Tensor(rng.standard_normal((k, 16)))
            out = ep_layer_forward(seq, prompt, model.layer(i), capacity=tiny_ast.context_capacity)
            assert out.length == seq.length


def test_no_prompt_equals_plain_layer(tiny_ast, rng):
    model = build_model(tiny_ast, 2)
    seq = TokenSequence(tokens=Tensor(rng.standard_normal((5, 16))), has_class_token=True)
    for i in range(tiny_ast.depth):
        np.testing.assert_array_equal(
            ep_layer_forward(seq, None, model.layer(i)).tokens.data,
            encoder_layer(seq, model.layer(i)).tokens.data,
        )


def test_prompts_beyond_capacity_rejected(tiny_ast, rng):
    model = build_model(tiny_ast, 2)
    seq = TokenSequence(tokens=Tensor(rng.standard_normal((5, 16))), has_class_token=True)
    prompt = Tensor(rng.standard_normal((tiny_ast.context_capacity, 16)))
    with pytest.raises(ConfigError):
        ep_layer_forward(seq, prompt, model.layer(0), capacity=tiny_ast.context_capacity)


@pytest.mark.parametrize("config_factory", [ast_config, w2v2_config])
def test_zero_initialized_adapter_is_identity(config_factory):
    config = config_factory()
    plain = build_model(config, 4)
    tuned, _ = attach(build_model(config, 4), TuningSpec(method="Adapter", h=4))
    rng = np.random.default_rng(21)
    for _ in range(100):
        x = rng.standard_normal(config.input_shape).astype(np.float32)
        np.testing.assert_array_equal(tuned.forward(x).data, plain.forward(x).data)


def test_zero_initialized_ipet_equals_prompts_only(tiny_ast):
    ep, _ = attach(build_model(tiny_ast, 4), TuningSpec(method="EP", k=2), seed=4)
    ipet, _ = attach(build_model(tiny_ast, 4), TuningSpec(method="IPET", k=2, h=4), seed=4)
    rng = np.random.default_rng(22)
    for _ in range(20):
        x = rng.standard_normal((8, 8)).astype(np.float32)
        np.testing.assert_array_equal(ipet.forward(x).data, ep.forward(x).data)


def test_nonzero_adapter_changes_output(tiny_ast, rng):
    plain = build_model(tiny_ast, 4)
    tuned, _ = attach(build_model(tiny_ast, 4), TuningSpec(method="Adapter", h=4))
    # a row-constant update would be removed by the final layer norm, so use random weights
    tuned.extras["adapters.1.up.weight"].data = rng.standard_normal((4, 16)).astype(np.float32)
    tuned.extras["adapters.1.down.bias"].data = np.ones(4, dtype=np.float32)
    x = rng.standard_normal((8, 8))
    assert np.abs(tuned.forward(x).data - plain.forward(x).data).max() > 1e-3


def test_adapter_matches_dense_bottleneck(rng):
    block = rng.standard_normal((5, 16))
    down, up = rng.standard_normal((16, 4)), rng.standard_normal((4, 16))
    down_bias, up_bias = rng.standard_normal(4), rng.standard_normal(16)
    layer = AdapterLayer(
        down_weight=Tensor(down), up_weight=Tensor(up),
        down_bias=Tensor(down_bias), up_bias=Tensor(up_bias), scale=0.3,
    )
    expected = 0.3 * (np.maximum(block @ down + down_bias, 0.0) @ up + up_bias)
    np.testing.assert_allclose(adapter_forward(Tensor(block), layer).data, expected, rtol=1e-12, atol=1e-12)


def test_adapter_with_dead_bottleneck_emits_scaled_up_bias(rng):
    up_bias = rng.standard_normal(16)
    layer = AdapterLayer(
        down_weight=Tensor(rng.standard_normal((16, 4))),
        up_weight=Tensor(rng.standard_normal((4, 16))),
        down_bias=Tensor(np.full(4, -1e3)),
        up_bias=Tensor(up_bias),
        scale=0.5,
    )
    out = adapter_forward(Tensor(rng.standard_normal((3, 16))), layer).data
    np.testing.assert_allclose(out, np.tile(0.5 * up_bias, (3, 1)), rtol=1e-12, atol=0.0)


def test_adapter_scale_lives_on_each_layer(tiny_ast):
    tuned, _ = attach(build_model(tiny_ast, 3), TuningSpec(method="Adapter", h=4, s=0.25))
    assert [layer.scale for layer in tuned.adapters.layers] == [0.25] * tiny_ast.depth
    assert {f.name for f in fields(AdapterWeights)} == {"layers"}


def test_single_prompt_equals_layer_on_extended_sequence(tiny_ast, rng):
    model = build_model(tiny_ast, 2)
    tokens, prompt = rng.standard_normal((5, 16)), rng.standard_normal((1, 16))
    seq = TokenSequence(tokens=Tensor(tokens), has_class_token=True)
    for i in range(tiny_ast.depth):
        extended = TokenSequence(tokens=Tensor(np.vstack([prompt, tokens])), has_class_token=True)
        expected = encoder_layer(extended, model.layer(i)).tokens.data[1:]
        out = ep_layer_forward(seq, Tensor(prompt), model.layer(i), capacity=tiny_ast.context_capacity)
        np.testing.assert_allclose(out.tokens.data, expected, rtol=1e-10, atol=1e-12)


def test_prompt_row_order_does_not_matter(tiny_ast, rng):
    model = build_model(tiny_ast, 2)
    seq = TokenSequence(tokens=Tensor(rng.standard_normal((5, 16))), has_class_token=True)
    row = rng.standard_normal((1, 16))
    prompt = np.vstack([row, rng.standard_normal((1, 16)), row])
    swapped = prompt[[1, 0, 2]]
    np.testing.assert_allclose(
        ep_layer_forward(seq, Tensor(swapped), model.layer(0)).tokens.data,
        ep_layer_forward(seq, Tensor(prompt), model.layer(0)).tokens.data,
        rtol=1e-9, atol=1e-12,
    )


def test_default_trainable_counts_are_ordered_by_method(tiny_ast):
    def trainable(method):
        return ledger_for_config(tiny_ast, TuningSpec(method=method), num_classes=3).total_trainable

    assert trainable("LP") < trainable("IP") < trainable("EP") < trainable("Adapter")
    assert trainable("Adapter") <= trainable("IPET") < trainable("FT")


# ============================================================================
# Input prompts
# ============================================================================

def test_spectrogram_input_prompt_covers_border_only():
    assert input_prompt_size("ast_like", (8, 8), 1) == 28
    prompt = InputPrompt(values=Tensor(np.ones(28)), kind="ast_like", extent=1, input_shape=(8, 8))
    out = apply_input_prompt(Tensor(np.zeros((8, 8))), prompt).data
    assert out.sum() == 28
    np.testing.assert_array_equal(out[1:-1, 1:-1], np.zeros((6, 6)))


def test_waveform_input_prompt_covers_leading_samples():
    assert input_prompt_size("w2v2_like", (64,), 4) == 4
    prompt = InputPrompt(values=Tensor(np.ones(4)), kind="w2v2_like", extent=4, input_shape=(64,))
    out = apply_input_prompt(Tensor(np.zeros((64, 1))), prompt).data
    np.testing.assert_array_equal(out[:4, 0], np.ones(4))
    assert out[4:].sum() == 0


def test_attached_input_prompt_starts_at_identity(tiny_w2v2, rng):
    plain = build_model(tiny_w2v2, 2)
    tuned, _ = attach(build_model(tiny_w2v2, 2), TuningSpec(method="IP", ip_len=4))
    x = rng.standard_normal(64).astype(np.float32)
    np.testing.assert_array_equal(tuned.forward(x).data, plain.forward(x).data)


# ============================================================================
# Frozen checks
# ============================================================================

def test_assert_frozen_passes_untouched(tiny_ast):
    tuned, mask = attach(build_model(tiny_ast, 3), TuningSpec(method="IPET", k=2, h=4))
    snapshot = snapshot_parameters(tuned)
    tuned.parameters()["head.weight"].data = tuned.parameters()["head.weight"].data + 1.0
    report = assert_frozen(tuned, mask, snapshot)
    assert report.passed
    assert report.checked == len(snapshot)


def test_assert_frozen_reports_drifted_group(tiny_ast):
    tuned, mask = attach(build_model(tiny_ast, 3), TuningSpec(method="LP"))
    snapshot = snapshot_parameters(tuned)
    param = tuned.parameters()["layers.1.mlp.fc1.bias"]
    param.data = np.nextafter(param.data, np.float32(1.0))
    report = assert_frozen(tuned, mask, snapshot)
    assert not report.passed
    assert report.drifted_groups == ["encoder"]
    assert report.drifted_parameters == ["layers.1.mlp.fc1.bias"]


def test_full_finetuning_drift_is_visible_in_default_snapshot(tiny_ast):
    tuned, mask = attach(build_model(tiny_ast, 3), TuningSpec(method="FT"))
    snapshot = snapshot_parameters(tuned)
    assert "head.weight" not in snapshot
    tuned.parameters()["positions"].data = tuned.parameters()["positions"].data * 2
    assert not assert_frozen(tuned, mask, snapshot).passed
    assert assert_frozen(tuned, mask, snapshot_parameters(tuned, mask)).passed


def test_snapshot_missing_frozen_names_is_corrupt(tiny_ast):
    tuned, mask = attach(build_model(tiny_ast, 3), TuningSpec(method="LP"))
    snapshot = snapshot_parameters(tuned)
    snapshot.pop("cls_token")
    with pytest.raises(SnapshotCorruptionError):
        assert_frozen(tuned, mask, snapshot)


def test_snapshot_shape_mismatch_is_corrupt(tiny_ast):
    tuned, mask = attach(build_model(tiny_ast, 3), TuningSpec(method="LP"))
    snapshot = snapshot_parameters(tuned)
    snapshot["cls_token"] = np.zeros((2, 16), dtype=np.float32)
    with pytest.raises(SnapshotCorruptionError):
        assert_frozen(tuned, mask, snapshot)
