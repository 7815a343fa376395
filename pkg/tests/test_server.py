from __future__ import annotations

import numpy as np
import pytest

from simulation.federation.server import (
    fedavg_update,
    fedgloss_descent,
    global_dual_update,
    perturb,
    pseudo_gradient,
    rho_schedule,
    sample_clients,
    server_perturb,
)
from simulation.federation.state import BITS_PER_PARAM, CommLedger, ServerState
from simulation.shared.errors import ConfigurationError, InvalidArgumentError


def state_at(w, prev=None, sigma=None) -> ServerState:
    w = np.asarray(w, dtype=np.float64)
    s = ServerState.initial(w, seed=0)
    if prev is not None:
        s.prev_pseudo_grad = np.asarray(prev, dtype=np.float64)
    if sigma is not None:
        s.sigma = np.asarray(sigma, dtype=np.float64)
    return s


# ---------------------------------------------------------------------------
# Client sampling
# ---------------------------------------------------------------------------


def test_full_participation_returns_every_client():
    assert sample_clients(6, 6, np.random.default_rng(0)) == list(range(6))


def test_sampling_is_seeded_sorted_and_distinct():
    a = sample_clients(50, 10, np.random.default_rng(3))
    b = sample_clients(50, 10, np.random.default_rng(3))
    assert a == b
    assert a == sorted(set(a))
    assert len(a) == 10


@pytest.mark.parametrize("m", [0, 7])
def test_sampling_rejects_bad_m(m):
    with pytest.raises(ConfigurationError):
        sample_clients(6, m, np.random.default_rng(0))


def test_sampling_frequency_is_uniform():
    rng = np.random.default_rng(11)
    num_clients, m, draws = 100, 10, 10_000
    counts = np.zeros(num_clients)
    for _ in range(draws):
        counts[sample_clients(num_clients, m, rng)] += 1
    p = m / num_clients
    expected = draws * p
    sd = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - expected) < 4 * sd)


# ---------------------------------------------------------------------------
# Pseudo-gradient and FedAvg step
# ---------------------------------------------------------------------------


def test_symmetric_clients_cancel():
    delta = pseudo_gradient(np.array([1.0, 1.0]), [(np.array([0.0, 2.0]), 5), (np.array([2.0, 0.0]), 5)])
    np.testing.assert_array_equal(delta, [0.0, 0.0])


def test_single_client_pseudo_gradient():
    delta = pseudo_gradient(np.array([1.0, -1.0]), [(np.array([0.5, 0.5]), 9)])
    np.testing.assert_array_equal(delta, [0.5, -1.5])


def test_pseudo_gradient_weights_by_shard_size():
    delta = pseudo_gradient(np.array([4.0]), [(np.array([0.0]), 3), (np.array([4.0]), 1)])
    np.testing.assert_allclose(delta, [3.0])


def test_pseudo_gradient_errors():
    with pytest.raises(InvalidArgumentError):
        pseudo_gradient(np.zeros(2), [])
    with pytest.raises(InvalidArgumentError):
        pseudo_gradient(np.zeros(2), [(np.zeros(3), 1)])


def test_unit_rate_step_is_the_client_mean():
    rng = np.random.default_rng(5)
    w = rng.standard_normal(8)
    clients = [rng.standard_normal(8) for _ in range(4)]
    w_new = fedavg_update(w, pseudo_gradient(w, [(c, 10) for c in clients]), eta_s=1.0)
    np.testing.assert_allclose(w_new, np.mean(clients, axis=0), atol=1e-12)


def test_fedavg_equivalence_over_rounds():
    rng = np.random.default_rng(6)
    w = rng.standard_normal(5)
    for _ in range(20):
        sizes = rng.integers(1, 20, 3)
        clients = [w + rng.standard_normal(5) for _ in sizes]
        w = fedavg_update(w, pseudo_gradient(w, list(zip(clients, sizes))), 1.0)
        expected = sum((n / sizes.sum()) * c for c, n in zip(clients, sizes))
        np.testing.assert_allclose(w, expected, atol=1e-12)


def test_zero_pseudo_gradient_keeps_model():
    w = np.array([0.1, 0.2])
    np.testing.assert_array_equal(fedavg_update(w, np.zeros(2), eta_s=0.7), w)


# ---------------------------------------------------------------------------
# Server perturbation
# ---------------------------------------------------------------------------


def test_first_round_perturbation_is_identity():
    s = state_at([1.0, 2.0])
    np.testing.assert_array_equal(server_perturb(s, 0.3), s.w)


def test_perturbation_direct_formula():
    s = state_at([1.0, 1.0], prev=[0.0, 3.0])
    np.testing.assert_allclose(server_perturb(s, 0.1), [1.0, 1.1])


def test_perturbation_radius_is_rho():
    rng = np.random.default_rng(9)
    w = rng.standard_normal(30)
    for rho in (0.01, 0.1, 2.0):
        w_tilde = perturb(w, rng.standard_normal(30), rho)
        assert np.linalg.norm(w_tilde - w) == pytest.approx(rho, rel=1e-12)


def test_perturb_returns_a_copy():
    w = np.ones(3)
    out = perturb(w, np.zeros(3), 0.5)
    out[0] = 9.0
    assert w[0] == 1.0


# ---------------------------------------------------------------------------
# ADMM server side
# ---------------------------------------------------------------------------


def test_dual_consensus_fixed_point():
    w = np.array([0.4, -0.2])
    sigma = np.array([0.1, 0.3])
    np.testing.assert_array_equal(global_dual_update(sigma, [w.copy(), w.copy()], w, beta=10.0), sigma)


def test_dual_direct_formula():
    out = global_dual_update(np.array([1.0]), [np.array([2.5])], np.array([0.5]), beta=1.0, m=1)
    np.testing.assert_allclose(out, [-1.0])


def test_dual_increment_scales_with_inverse_beta():
    w = np.zeros(3)
    clients = [np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.0, 5.0])]
    inc_1 = global_dual_update(np.zeros(3), clients, w, beta=1.0)
    inc_10 = global_dual_update(np.zeros(3), clients, w, beta=10.0)
    np.testing.assert_allclose(inc_10, inc_1 / 10.0, rtol=1e-14)


def test_descent_without_dual_is_fedavg():
    s = state_at([1.0, 2.0])
    delta = np.array([0.5, -0.5])
    np.testing.assert_allclose(fedgloss_descent(s, delta, np.zeros(2), beta=10.0), fedavg_update(s.w, delta, 1.0))
    np.testing.assert_array_equal(s.prev_pseudo_grad, delta)


def test_descent_with_zero_pseudo_gradient_follows_dual():
    s = state_at([1.0, 2.0])
    out = fedgloss_descent(s, np.zeros(2), np.array([0.1, -0.2]), beta=5.0)
    np.testing.assert_allclose(out, [0.5, 3.0])


def test_descent_stores_a_copy_of_delta():
    s = state_at([0.0])
    delta = np.array([1.0])
    fedgloss_descent(s, delta, np.zeros(1), beta=1.0)
    delta[0] = 7.0
    assert s.prev_pseudo_grad[0] == 1.0


# ---------------------------------------------------------------------------
# Radius schedule
# ---------------------------------------------------------------------------


def test_schedule_endpoints_and_midpoint():
    assert rho_schedule(0, 0.001, 0.1, 100) == pytest.approx(0.001)
    assert rho_schedule(100, 0.001, 0.1, 100) == 0.1
    assert rho_schedule(50, 0.001, 0.1, 100) == pytest.approx((0.001 + 0.1) / 2)
    assert rho_schedule(500, 0.001, 0.1, 100) == 0.1


def test_schedule_without_warmup_is_constant():
    assert [rho_schedule(t, 0.001, 0.05, 0) for t in range(4)] == [0.05] * 4


# ---------------------------------------------------------------------------
# Communication ledger
# ---------------------------------------------------------------------------


def test_ledger_counts_models_sent():
    ledger = CommLedger()
    ledger.charge_round(clients=5, d=484)
    ledger.charge_round(clients=5, d=484, exchanges=2)
    one = 5 * 484 * BITS_PER_PARAM
    assert ledger.downlink == [one, 2 * one]
    assert ledger.uplink == [one, 2 * one]
    assert ledger.total == 6 * one
    assert ledger.cumulative() == [2 * one, 6 * one]
    assert ledger.multiplier(5, 484) == pytest.approx(1.5)


def test_empty_ledger_multiplier_is_zero():
    assert CommLedger().multiplier(5, 10) == 0.0
