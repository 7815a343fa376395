from __future__ import annotations

import numpy as np
import pytest

from simulation.localopt import (
    ClientState,
    LocalMode,
    admm_local_correction,
    client_train,
    fedprox_correction,
    sam_gradient,
    sam_perturbation,
    sam_step,
    sgd_step,
)
from simulation.shared import numcore
from simulation.shared.datagen import Dataset
from simulation.shared.errors import ConfigurationError, InvalidArgumentError
from simulation.shared.numcore import Batch, ModelArch
from simulation.shared.schemas import ClientOptimizer, LocalHyper, Regularizer

SGD = LocalMode(ClientOptimizer.SGD, Regularizer.NONE)
SAM = LocalMode(ClientOptimizer.SAM, Regularizer.NONE)
PROX = LocalMode(ClientOptimizer.SGD, Regularizer.PROX)
ADMM = LocalMode(ClientOptimizer.SGD, Regularizer.ADMM)


@pytest.fixture
def shard(small_split) -> Dataset:
    return small_split.train.subset(np.arange(12))


@pytest.fixture
def arch() -> ModelArch:
    return ModelArch(4, (5,), 3, "tanh")


@pytest.fixture
def quadratic_backward(monkeypatch):
    """Replace the MLP gradient with that of 0.5 * ||w - 1||^2."""

    def fake(w, arch, batch):
        return w - 1.0

    monkeypatch.setattr(numcore, "backward", fake)


@pytest.fixture
def flat_backward(monkeypatch):
    monkeypatch.setattr(numcore, "backward", lambda w, arch, batch: np.zeros_like(w))


# ---------------------------------------------------------------------------
# Step primitives
# ---------------------------------------------------------------------------


def test_sam_perturbation_direct_formula():
    np.testing.assert_allclose(sam_perturbation(np.array([3.0, 4.0]), 0.5), [0.3, 0.4], atol=1e-15)


def test_sam_perturbation_zero_radius_and_zero_gradient():
    assert not sam_perturbation(np.array([3.0, 4.0]), 0.0).any()
    assert not sam_perturbation(np.zeros(3), 0.2).any()


def test_sam_perturbation_rejects_negative_radius():
    with pytest.raises(InvalidArgumentError):
        sam_perturbation(np.ones(2), -0.1)


def test_sgd_step_direct_formula():
    w, _ = sgd_step(np.array([1.0]), np.array([2.0]), eta=0.1, weight_decay=0.0, momentum=0.0, momentum_buf=None)
    np.testing.assert_allclose(w, [0.8])


def test_sgd_step_zero_gradient_keeps_weights():
    w0 = np.array([1.5, -2.0])
    w, _ = sgd_step(w0, np.zeros(2), eta=0.3, weight_decay=0.0, momentum=0.0, momentum_buf=None)
    np.testing.assert_array_equal(w, w0)


def test_sgd_step_weight_decay_and_momentum():
    w1, buf = sgd_step(np.array([1.0]), np.array([0.0]), eta=0.5, weight_decay=0.2, momentum=0.9, momentum_buf=None)
    np.testing.assert_allclose(buf, [0.2])
    np.testing.assert_allclose(w1, [0.9])
    w2, buf = sgd_step(w1, np.array([0.0]), eta=0.5, weight_decay=0.2, momentum=0.9, momentum_buf=buf)
    np.testing.assert_allclose(buf, [0.9 * 0.2 + 0.2 * 0.9])
    np.testing.assert_allclose(w2, [0.9 - 0.5 * (0.18 + 0.18)])


def test_sgd_step_rejects_non_positive_rate():
    with pytest.raises(InvalidArgumentError):
        sgd_step(np.ones(1), np.ones(1), eta=0.0, weight_decay=0.0, momentum=0.0, momentum_buf=None)


def test_sam_step_tends_to_sgd_for_small_radius(arch, shard):
    w = numcore.init_params(arch, seed=0)
    batch = shard.as_batch()
    hyper = LocalHyper(eta=0.1, rho_l=1e-8)
    w_sam, _ = sam_step(w, arch, batch, hyper)
    w_sgd, _ = sgd_step(w, numcore.backward(w, arch, batch), 0.1, 0.0, 0.0, None)
    assert np.max(np.abs(w_sam - w_sgd)) < 1e-6


def test_sam_gradient_takes_two_backward_passes(monkeypatch, arch, shard):
    calls = []
    real = numcore.backward

    def counting(w, arch, batch):
        calls.append(w.copy())
        return real(w, arch, batch)

    monkeypatch.setattr(numcore, "backward", counting)
    w = numcore.init_params(arch, seed=1)
    sam_gradient(w, arch, shard.as_batch(), rho=0.05)
    assert len(calls) == 2
    assert np.linalg.norm(calls[1] - calls[0]) == pytest.approx(0.05)


def test_sam_step_requires_positive_radius(arch, shard):
    with pytest.raises(InvalidArgumentError):
        sam_step(np.zeros(arch.param_count), arch, shard.as_batch(), LocalHyper(rho_l=0.0))


def test_admm_correction_first_step_returns_gradient():
    g = np.array([0.5, -1.0])
    w = np.array([2.0, 3.0])
    np.testing.assert_array_equal(admm_local_correction(g, w, w.copy(), np.zeros(2), beta=10.0), g)


def test_admm_correction_direct_formula():
    out = admm_local_correction(np.zeros(1), np.array([5.0]), np.array([1.0]), np.zeros(1), beta=2.0)
    np.testing.assert_allclose(out, [2.0])


def test_admm_correction_subtracts_dual():
    out = admm_local_correction(np.ones(2), np.zeros(2), np.zeros(2), np.array([0.25, -0.5]), beta=1.0)
    np.testing.assert_allclose(out, [0.75, 1.5])


def test_fedprox_correction_cases():
    g = np.array([0.3])
    np.testing.assert_array_equal(fedprox_correction(g, np.array([4.0]), np.array([1.0]), mu=0.0), g)
    np.testing.assert_array_equal(fedprox_correction(g, np.array([4.0]), np.array([4.0]), mu=0.7), g)
    np.testing.assert_allclose(fedprox_correction(np.zeros(1), np.array([11.0]), np.array([1.0]), mu=0.1), [1.0])


# ---------------------------------------------------------------------------
# client_train
# ---------------------------------------------------------------------------


def test_full_batch_epoch_is_one_sgd_step(arch, shard):
    w0 = numcore.init_params(arch, seed=2)
    hyper = LocalHyper(eta=0.1, epochs=1, batch_size=len(shard))
    update = client_train(w0, arch, shard, hyper, SGD, ClientState.zeros(arch.param_count), np.random.default_rng(0))
    expected = w0 - 0.1 * numcore.backward(w0, arch, shard.as_batch())
    np.testing.assert_allclose(update.weights, expected, atol=1e-12)
    assert update.steps == 1
    assert update.num_samples == 12


def test_step_and_gradient_counts(arch, shard):
    state = ClientState.zeros(arch.param_count)
    w0 = numcore.init_params(arch, seed=3)
    hyper = LocalHyper(eta=0.05, rho_l=0.05, epochs=2, batch_size=4)
    sgd = client_train(w0, arch, shard, hyper, SGD, state, np.random.default_rng(0))
    sam = client_train(w0, arch, shard, hyper, SAM, state, np.random.default_rng(0))
    assert (sgd.steps, sgd.grad_evals) == (6, 6)
    assert (sam.steps, sam.grad_evals) == (6, 12)


def test_sam_with_zero_radius_runs_plain_sgd(arch, shard):
    state = ClientState.zeros(arch.param_count)
    w0 = numcore.init_params(arch, seed=4)
    hyper = LocalHyper(eta=0.05, rho_l=0.05, batch_size=5)
    sam = client_train(w0, arch, shard, hyper, SAM, state, np.random.default_rng(3), rho_l=0.0)
    sgd = client_train(w0, arch, shard, hyper, SGD, state, np.random.default_rng(3))
    np.testing.assert_array_equal(sam.weights, sgd.weights)
    assert sam.grad_evals == sam.steps


def test_admm_fixed_point_with_flat_loss(flat_backward, arch, shard):
    w0 = np.linspace(-1.0, 1.0, arch.param_count)
    state = ClientState.zeros(arch.param_count)
    update = client_train(w0, arch, shard, LocalHyper(batch_size=3, epochs=2), ADMM, state, np.random.default_rng(0))
    np.testing.assert_array_equal(update.weights, w0)
    assert not update.state.sigma.any()


def test_admm_dual_moves_against_displacement(arch, shard):
    w0 = numcore.init_params(arch, seed=5)
    sigma0 = np.full(arch.param_count, 0.01)
    hyper = LocalHyper(eta=0.1, beta=4.0, batch_size=4)
    update = client_train(w0, arch, shard, hyper, ADMM, ClientState(sigma0), np.random.default_rng(1))
    np.testing.assert_allclose(update.state.sigma, sigma0 - (update.weights - w0) / 4.0, atol=1e-15)


def test_admm_dual_accumulates_every_round_displacement(arch, shard):
    hyper = LocalHyper(eta=0.1, beta=2.5, batch_size=4, epochs=2)
    state = ClientState.zeros(arch.param_count)
    total = np.zeros(arch.param_count)
    for r in range(4):
        w0 = numcore.init_params(arch, seed=10 + r)
        update = client_train(w0, arch, shard, hyper, ADMM, state, np.random.default_rng(r))
        total += update.weights - w0
        state = update.state
    np.testing.assert_allclose(state.sigma, -total / 2.5, rtol=0, atol=1e-12)
    assert state.sigma.any()


def test_dual_untouched_outside_admm(arch, shard):
    sigma0 = np.full(arch.param_count, 0.3)
    update = client_train(
        numcore.init_params(arch, seed=6), arch, shard, LocalHyper(), SGD, ClientState(sigma0), np.random.default_rng(0)
    )
    np.testing.assert_array_equal(update.state.sigma, sigma0)


def test_prox_term_limits_drift(quadratic_backward, arch, shard):
    w0 = np.zeros(arch.param_count)
    state = ClientState.zeros(arch.param_count)
    free = LocalHyper(eta=0.1, mu=0.0, epochs=3, batch_size=2)
    held = LocalHyper(eta=0.1, mu=5.0, epochs=3, batch_size=2)
    drift_free = np.linalg.norm(client_train(w0, arch, shard, free, PROX, state, np.random.default_rng(0)).weights)
    drift_held = np.linalg.norm(client_train(w0, arch, shard, held, PROX, state, np.random.default_rng(0)).weights)
    assert drift_held < drift_free


def test_quadratic_unroll(quadratic_backward, arch, shard):
    w0 = np.zeros(arch.param_count)
    hyper = LocalHyper(eta=0.25, batch_size=4, epochs=1)
    update = client_train(w0, arch, shard, hyper, SGD, ClientState.zeros(arch.param_count), np.random.default_rng(0))
    # three steps of w <- w - 0.25 (w - 1) from 0
    np.testing.assert_allclose(update.weights, np.full(arch.param_count, 1.0 - 0.75**3))


def test_client_train_does_not_mutate_inputs(arch, shard):
    w0 = numcore.init_params(arch, seed=7)
    before = w0.copy()
    sigma = np.zeros(arch.param_count)
    client_train(w0, arch, shard, LocalHyper(), ADMM, ClientState(sigma), np.random.default_rng(0))
    np.testing.assert_array_equal(w0, before)
    assert not sigma.any()


def test_client_train_rejects_empty_shard(arch):
    empty = Dataset(np.empty((0, 4)), np.empty(0, dtype=np.int64), 3)
    with pytest.raises(ConfigurationError):
        client_train(np.zeros(arch.param_count), arch, empty, LocalHyper(), SGD, ClientState.zeros(arch.param_count), np.random.default_rng(0))


def test_client_train_is_reproducible(arch, shard):
    w0 = numcore.init_params(arch, seed=8)
    state = ClientState.zeros(arch.param_count)
    hyper = LocalHyper(batch_size=5, epochs=2)
    a = client_train(w0, arch, shard, hyper, SAM, state, np.random.default_rng(42))
    b = client_train(w0, arch, shard, hyper, SAM, state, np.random.default_rng(42))
    assert a.weights.tobytes() == b.weights.tobytes()


def test_batch_helper_matches_shard(shard):
    batch = shard.as_batch()
    assert isinstance(batch, Batch)
    assert batch.size == len(shard)
