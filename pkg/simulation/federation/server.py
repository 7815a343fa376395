"""
Server-side aggregation primitives.

Pseudo-gradient (weighted by shard size, relative to the broadcast model):

    delta = sum_k (N_k / N) * (w_ref - w_k)

Plain server step:          w' = w - eta_s * delta
ADMM server step:           w' = w - eta_s * delta - beta * sigma'
Global dual:                sigma' = sigma - 1/(beta*m) * sum_k (w_k - w_ref)
Server SAM perturbation:    w_tilde = w + rho * g / ||g||   (w when g = 0)
"""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from simulation.federation.state import ServerState
from simulation.shared.errors import ConfigurationError, InvalidArgumentError
from simulation.shared.numcore import ParamVector


def sample_clients(num_clients: int, m: int, rng: np.random.Generator) -> list[int]:
    """m distinct client ids drawn uniformly, returned in ascending order."""
    if m < 1 or m > num_clients:
        raise ConfigurationError(f"cannot sample m={m} clients out of C={num_clients}")
    return sorted(int(k) for k in rng.choice(num_clients, size=m, replace=False))


def pseudo_gradient(w_ref: ParamVector, updates: Sequence[tuple[ParamVector, int]]) -> ParamVector:
    if not updates:
        raise InvalidArgumentError("pseudo_gradient needs at least one client update")
    total = sum(n for _, n in updates)
    if total <= 0:
        raise InvalidArgumentError("client sample counts must sum to a positive number")
    delta = np.zeros_like(w_ref, dtype=np.float64)
    for w_k, n_k in updates:
        if w_k.shape != w_ref.shape:
            raise InvalidArgumentError(f"client model shape {w_k.shape} != {w_ref.shape}")
        delta += (n_k / total) * (w_ref - w_k)
    return delta


def fedavg_update(w: ParamVector, delta: ParamVector, eta_s: float) -> ParamVector:
    if eta_s <= 0:
        raise InvalidArgumentError(f"server learning rate must be > 0, got {eta_s}")
    return w - eta_s * delta


def perturb(w: ParamVector, direction: ParamVector, rho: float) -> ParamVector:
    norm = float(np.linalg.norm(direction))
    if norm == 0.0 or rho == 0.0:
        return w.copy()
    return w + (rho / norm) * direction


def server_perturb(state: ServerState, rho_now: float) -> ParamVector:
    """Ascent along the previous round's pseudo-gradient."""
    return perturb(state.w, state.prev_pseudo_grad, rho_now)


def global_dual_update(
    sigma: ParamVector,
    client_models: Sequence[ParamVector],
    w_ref: ParamVector,
    beta: float,
    m: int | None = None,
) -> ParamVector:
    if beta <= 0:
        raise InvalidArgumentError(f"ADMM penalty must be > 0, got {beta}")
    m = len(client_models) if m is None else m
    drift = np.zeros_like(sigma, dtype=np.float64)
    for w_k in client_models:
        drift += w_k - w_ref
    return sigma - drift / (beta * m)


def fedgloss_descent(
    state: ServerState,
    delta: ParamVector,
    sigma_new: ParamVector,
    beta: float,
    eta_s: float = 1.0,
) -> ParamVector:
    """ADMM server step; records ``delta`` as the previous pseudo-gradient."""
    w_new = fedavg_update(state.w, delta, eta_s) - beta * sigma_new
    state.prev_pseudo_grad = np.array(delta, dtype=np.float64, copy=True)
    return w_new


def rho_schedule(t: int, rho_0: float, rho_target: float, warmup_rounds: int) -> float:
    """Linear warm-up from rho_0 at t=0 to rho_target at t=warmup_rounds; constant if 0."""
    if warmup_rounds <= 0 or t >= warmup_rounds:
        return float(rho_target)
    return float(rho_0 + (rho_target - rho_0) / warmup_rounds * t)
