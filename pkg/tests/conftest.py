"""
Shared fixtures: tiny backbones, toy tasks and experiment configs.
"""
import json

import numpy as np
import pytest

from shared.models import BackboneConfig, TaskSpec


def ast_config(**overrides) -> BackboneConfig:
    fields = dict(
        kind="ast_like",
        depth=2,
        width=16,
        mlp_hidden=32,
        num_heads=2,
        patch_size=(4, 4),
        max_sequence=16,
        input_shape=(8, 8),
        seed=7,
    )
    fields.update(overrides)
    return BackboneConfig(**fields)


def w2v2_config(**overrides) -> BackboneConfig:
    fields = dict(
        kind="w2v2_like",
        depth=2,
        width=16,
        mlp_hidden=32,
        num_heads=2,
        conv_stack=[(8, 4, 2), (12, 3, 2)],
        max_sequence=32,
        input_shape=(64,),
        seed=11,
    )
    fields.update(overrides)
    return BackboneConfig(**fields)


def toy_task(**overrides) -> TaskSpec:
    fields = dict(
        family="ks_like",
        num_classes=2,
        samples_per_class=16,
        test_per_class=4,
        input_kind="spectrogram",
        spectrogram_shape=(8, 8),
        noise=0.1,
        seed=0,
    )
    fields.update(overrides)
    return TaskSpec(**fields)


@pytest.fixture
def tiny_ast():
    return ast_config()


@pytest.fixture
def tiny_w2v2():
    return w2v2_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def experiment_dict():
    """Small LP experiment on the separable toy task."""
    return {
        "backbone": {
            "kind": "ast_like",
            "depth": 1,
            "width": 16,
            "mlp_hidden": 32,
            "num_heads": 2,
            "patch_size": [4, 4],
            "max_sequence": 16,
            "seed": 3,
        },
        "tuning": {"method": "LP"},
        "task": {
            "family": "ks_like",
            "num_classes": 2,
            "samples_per_class": 4,
            "test_per_class": 2,
            "input_kind": "spectrogram",
            "spectrogram_shape": [8, 8],
            "noise": 0.1,
            "seed": 0,
        },
        "train": {"epochs": 1, "batch_size": 4, "seed": 5},
    }


@pytest.fixture
def write_config(tmp_path):
    """Write an experiment dict to a JSON file and return its path."""
    def _write(payload, name="experiment.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path
    return _write
