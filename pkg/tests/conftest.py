from __future__ import annotations

from typing import Any

import numpy as np
import pytest

from simulation.shared.datagen import DataSplit, make_synthetic
from simulation.shared.numcore import Activation, Batch, ModelArch


@pytest.fixture
def tanh_arch() -> ModelArch:
    return ModelArch(input_dim=5, hidden_dims=(4,), num_classes=3, activation=Activation.TANH)


@pytest.fixture
def relu_arch() -> ModelArch:
    return ModelArch(input_dim=4, hidden_dims=(8,), num_classes=3, activation=Activation.RELU)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tanh_batch(tanh_arch: ModelArch, rng: np.random.Generator) -> Batch:
    return Batch(rng.standard_normal((7, tanh_arch.input_dim)), rng.integers(0, tanh_arch.num_classes, 7))


@pytest.fixture
def small_split() -> DataSplit:
    """3 classes x 20 samples in 4 dimensions: 48 train / 12 test."""
    return make_synthetic(num_classes=3, per_class=20, input_dim=4, class_sep=3.0, noise_sd=0.5, seed=0)


@pytest.fixture
def tiny_config() -> dict[str, Any]:
    return {
        "name": "tiny",
        "seeds": [0],
        "rounds": 6,
        "clients_per_round": 2,
        "eval_every": 4,
        "dataset": {
            "source": "synthetic",
            "num_classes": 3,
            "per_class": 20,
            "input_dim": 4,
            "class_sep": 3.0,
            "noise_sd": 0.5,
        },
        "partition": {"num_clients": 4, "alpha": 0.5},
        "arch": {"hidden_dims": [6], "activation": "tanh"},
        "local": {"eta": 0.05, "rho_l": 0.05, "epochs": 1, "batch_size": 6},
        "strategies": [
            {"kind": "FedAvg"},
            {"kind": "FedSAM"},
            {"kind": "FedGloSS", "rho_s": 0.1},
        ],
        "diagnostics": {
            "final_lambda1": True,
            "lambda1_max_iter": 5,
            "landscape_rounds": [6],
            "landscape_resolution": 3,
            "interpolate": [["FedGloSS", "FedSAM"]],
            "interpolation_points": 4,
            "local_eigs": True,
        },
    }
