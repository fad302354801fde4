"""
Tests for losses, Adam, verification scoring and the training loop.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shared.errors import ConfinementError, ConfigError, DivergenceError, LabelError, ScoreError
from shared.models import TrainConfig, TuningSpec
from numerics.tensor import Tensor
from backbone.model import build_model
from data.synthetic import generate_task
from training.losses import cross_entropy, multilabel_bce
from training.optimizer import OptimizerState, adam_step
from training.trainer import train
from training.verification import cosine_score, speaker_embedding
from tuning.attach import attach
from tuning.frozen import assert_frozen, snapshot_parameters

from conftest import ast_config, toy_task, w2v2_config

PEFT_METHODS = ["LP", "IP", "EP", "Adapter", "IPET"]


# ============================================================================
# Losses
# ============================================================================

def test_cross_entropy_uniform_is_log_two():
    assert cross_entropy(np.zeros((1, 2)), [1]).item() == pytest.approx(math.log(2), abs=1e-12)


def test_cross_entropy_vanishes_with_margin():
    losses = [cross_entropy(np.array([[margin, 0.0]]), [0]).item() for margin in (1.0, 10.0, 50.0)]
    assert losses[0] > losses[1] > losses[2] >= 0.0
    assert losses[2] < 1e-20


def test_cross_entropy_matches_per_sample_oracle(rng):
    logits = rng.standard_normal((3, 4))
    labels = np.array([0, 3, 2])
    oracle = np.mean([
        -math.log(math.exp(row[y]) / sum(math.exp(v) for v in row)) for row, y in zip(logits, labels)
    ])
    assert cross_entropy(logits, labels).item() == pytest.approx(oracle, abs=1e-6)


def test_cross_entropy_rejects_out_of_range_labels():
    with pytest.raises(LabelError):
        cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(LabelError):
        cross_entropy(np.zeros((1, 3)), [-1])


def test_multilabel_bce_values(rng):
    assert multilabel_bce(np.zeros((2, 3)), np.ones((2, 3))).item() == pytest.approx(math.log(2), abs=1e-12)
    assert multilabel_bce(np.array([[20.0]]), np.array([[1.0]])).item() < 1e-8

    logits = rng.standard_normal((2, 3))
    targets = np.array([[1, 0, 1], [0, 0, 1]])
    sigmoid = 1 / (1 + np.exp(-logits))
    oracle = -np.mean(targets * np.log(sigmoid) + (1 - targets) * np.log(1 - sigmoid))
    assert multilabel_bce(logits, targets).item() == pytest.approx(oracle, abs=1e-6)


def test_multilabel_bce_rejects_non_binary_targets():
    with pytest.raises(LabelError):
        multilabel_bce(np.zeros((1, 2)), np.array([[0.5, 1.0]]))


# ============================================================================
# Adam
# ============================================================================

def _reference_adam(params, grads, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Direct transcription of the bias-corrected Adam recurrences."""
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    trajectory = []
    for t in range(1, steps + 1):
        g = grads[t - 1]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
        trajectory.append(params.copy())
    return trajectory


def test_adam_zero_gradients_leave_parameters(rng):
    p = Tensor(rng.standard_normal(3), requires_grad=True)
    before = p.data.copy()
    state = OptimizerState({"p": p}, learning_rate=0.1)
    assert adam_step(state, {"p": np.zeros(3)}) == 1
    np.testing.assert_array_equal(p.data, before)
    assert state.step_count == 1


def test_adam_first_step_is_learning_rate():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = OptimizerState({"p": p}, learning_rate=0.1)
    adam_step(state, {"p": np.array([1.0])})
    assert p.data[0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_matches_reference_trajectory(rng):
    start = rng.standard_normal(3)
    grads = [rng.standard_normal(3) for _ in range(10)]
    p = Tensor(start.copy(), requires_grad=True)
    state = OptimizerState({"p": p}, learning_rate=0.01)
    for t, expected in enumerate(_reference_adam(start, grads, 0.01, 10)):
        adam_step(state, {"p": grads[t]})
        np.testing.assert_array_equal(p.data, expected)


def test_adam_doubling_learning_rate_doubles_first_delta(rng):
    g = rng.standard_normal(4)
    deltas = []
    for lr in (0.01, 0.02):
        p = Tensor(np.zeros(4), requires_grad=True)
        adam_step(OptimizerState({"p": p}, learning_rate=lr), {"p": g})
        deltas.append(p.data.copy())
    np.testing.assert_array_equal(deltas[1], 2 * deltas[0])


def test_adam_rejects_gradient_on_frozen_parameter(rng):
    frozen = Tensor(rng.standard_normal(2))
    state = OptimizerState({"w": Tensor(np.zeros(2), requires_grad=True), "frozen": frozen}, learning_rate=0.1)
    with pytest.raises(ConfinementError):
        adam_step(state, {"frozen": np.ones(2)})
    frozen.grad = np.ones(2)
    with pytest.raises(ConfinementError):
        adam_step(state)


def test_adam_never_writes_frozen_parameters(rng):
    frozen = Tensor(rng.standard_normal(2))
    before = frozen.data.copy()
    trainable = Tensor(np.zeros(2), requires_grad=True)
    state = OptimizerState({"w": trainable, "frozen": frozen}, learning_rate=0.1)
    assert "frozen" not in state.first_moment
    for _ in range(5):
        trainable.grad = np.ones(2)
        adam_step(state)
    assert frozen.data.tobytes() == before.tobytes()
    assert state.step_count == 5


# ============================================================================
# Verification scoring
# ============================================================================

def test_cosine_score_examples(rng):
    assert cosine_score([1.0, 0.0], [0.0, 1.0]) == 0.0
    v = rng.standard_normal(5)
    assert cosine_score(v, 2 * v) == pytest.approx(1.0, abs=1e-15)
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    assert cosine_score(a, b) == pytest.approx(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), abs=1e-7)
    with pytest.raises(ScoreError):
        cosine_score(np.zeros(3), np.ones(3))


@hypothesis_settings(max_examples=50, deadline=None)
@given(
    a=arrays(np.float64, 4, elements=st.floats(-10, 10)),
    b=arrays(np.float64, 4, elements=st.floats(-10, 10)),
)
def test_cosine_score_is_symmetric(a, b):
    if not np.any(a * a) or not np.any(b * b):
        return
    s = cosine_score(a, b)
    assert s == cosine_score(b, a)
    assert -1.0 <= s <= 1.0


@pytest.mark.parametrize("config_factory", [ast_config, w2v2_config])
def test_speaker_embedding_is_unit_and_deterministic(config_factory, rng):
    config = config_factory()
    tuned, _ = attach(build_model(config, 3), TuningSpec(method="LP"))
    utterance = rng.standard_normal(config.input_shape).astype(np.float32)
    e = speaker_embedding(tuned, utterance)
    assert e.shape == (config.head_input_width,)
    assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_array_equal(e, speaker_embedding(tuned, utterance))
    assert cosine_score(e, e) == pytest.approx(1.0, abs=1e-12)


# ============================================================================
# Training loop
# ============================================================================

def _attached(method, depth=1, num_classes=2, seed=0, **tuning):
    config = ast_config(depth=depth)
    spec = TuningSpec(method=method, k=2, h=4, ip_len=1, **tuning)
    tuned, _ = attach(build_model(config, num_classes), spec, seed=seed)
    return tuned, spec


def test_zero_epochs_reports_initial_state():
    tuned, spec = _attached("IPET")
    before = {n: p.data.copy() for n, p in tuned.parameters().items()}
    report = train(tuned, spec, generate_task(toy_task(samples_per_class=4)), TrainConfig(epochs=0))
    assert report.steps == 0
    assert report.epoch_losses == []
    assert report.metric_name.value == "accuracy"
    assert 0.0 <= report.metric_value <= 1.0
    assert report.frozen_check.passed
    for name, p in tuned.parameters().items():
        np.testing.assert_array_equal(p.data, before[name])


def test_step_budget_and_loss_curves():
    tuned, spec = _attached("LP")
    data = generate_task(toy_task(samples_per_class=8))
    report = train(tuned, spec, data, TrainConfig(epochs=5, batch_size=4, max_steps=6))
    assert report.steps == 6
    assert len(report.step_losses) == 6
    assert len(report.epoch_losses) == 2
    assert len(report.train_accuracy) == 2


def test_nan_loss_raises_divergence_with_step():
    tuned, spec = _attached("LP")
    tuned.parameters()["head.bias"].data = np.array([np.nan, 0.0], dtype=np.float32)
    with pytest.raises(DivergenceError) as excinfo:
        train(tuned, spec, generate_task(toy_task(samples_per_class=2)), TrainConfig(epochs=1))
    assert excinfo.value.step == 1


def test_class_count_mismatch_is_config_error():
    tuned, spec = _attached("LP", num_classes=3)
    with pytest.raises(ConfigError):
        train(tuned, spec, generate_task(toy_task(samples_per_class=2)), TrainConfig(epochs=1))


def test_multilabel_training_reports_map():
    tuned, spec = _attached("Adapter", num_classes=4)
    data = generate_task(toy_task(family="sec_like", num_classes=4, samples_per_class=2, labels_per_sample=2))
    report = train(tuned, spec, data, TrainConfig(epochs=2, batch_size=4))
    assert report.metric_name.value == "mAP"
    assert report.train_accuracy == []
    assert 0.0 < report.metric_value <= 1.0


def test_verification_training_reports_eer():
    config = w2v2_config(depth=1)
    spec = TuningSpec(method="EP", k=2)
    tuned, _ = attach(build_model(config, 3), spec, seed=0)
    data = generate_task(toy_task(
        family="sv_like", num_classes=3, samples_per_class=2, test_per_class=3,
        input_kind="waveform", spectrogram_shape=None, waveform_length=64, num_trials=12,
    ))
    report = train(tuned, spec, data, TrainConfig(epochs=1, batch_size=3))
    assert report.metric_name.value == "EER"
    assert 0.0 <= report.metric_value <= 1.0


def test_training_is_reproducible():
    reports = []
    for _ in range(2):
        tuned, spec = _attached("IPET", seed=3)
        reports.append(train(tuned, spec, generate_task(toy_task(samples_per_class=4)),
                             TrainConfig(epochs=2, batch_size=4, seed=3)))
    assert reports[0].step_losses == reports[1].step_losses
    assert reports[0].metric_value == reports[1].metric_value


@pytest.mark.slow
@pytest.mark.parametrize("method", PEFT_METHODS)
def test_frozen_parameters_survive_training(method):
    tuned, spec = _attached(method, depth=2)
    snapshot = snapshot_parameters(tuned)
    report = train(tuned, spec, generate_task(toy_task()), TrainConfig(epochs=75, batch_size=8, max_steps=300))
    assert report.steps == 300
    assert report.frozen_check.passed
    assert assert_frozen(tuned, tuned.freeze_mask, snapshot).passed


@pytest.mark.slow
@pytest.mark.parametrize("method", ["LP", "EP", "Adapter", "IPET"])
def test_separable_toy_reaches_full_train_accuracy(method):
    tuned, spec = _attached(method)
    cfg = TrainConfig(epochs=125, batch_size=8, learning_rate=0.01, max_steps=500, seed=0)
    report = train(tuned, spec, generate_task(toy_task()), cfg)
    assert report.steps_to_full_train_accuracy is not None
    assert report.steps_to_full_train_accuracy <= 500

    # 20-step moving average sampled every 20 steps after a 20-step warmup
    window = np.convolve(report.step_losses, np.ones(20) / 20, mode="valid")[20::20]
    assert window[-1] < window[0]
    assert np.all(np.diff(window) <= 1e-2)


@pytest.mark.slow
def test_ipet_needs_no_more_steps_than_lp():
    cfg = TrainConfig(epochs=125, batch_size=8, learning_rate=0.01, max_steps=500, seed=0)
    steps = {}
    for method in ("LP", "IPET"):
        tuned, spec = _attached(method)
        steps[method] = train(tuned, spec, generate_task(toy_task()), cfg).steps_to_full_train_accuracy
    assert steps["LP"] is not None and steps["IPET"] is not None
    assert steps["IPET"] <= steps["LP"]
