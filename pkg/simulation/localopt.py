"""
Client-side optimisation.

A local rule is the pair (optimizer, regulariser):

  optimizer    sgd | sam       how the base gradient is formed
  regulariser  none | prox | admm
                                what is added to it before the descent step

Descent direction per step, with w_0 the model received from the server:

  none   g
  prox   g + mu * (w - w_0)
  admm   g - sigma_k + (w - w_0) / beta

After an ADMM client finishes its epochs its dual moves by
sigma_k <- sigma_k - (w_E - w_0) / beta. Momentum buffers start from zero
every round; sigma_k is the only state a client carries between rounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import structlog

from simulation.shared import numcore
from simulation.shared.datagen import Dataset
from simulation.shared.errors import ConfigurationError, InvalidArgumentError
from simulation.shared.numcore import Batch, ModelArch, ParamVector
from simulation.shared.schemas import ClientOptimizer, LocalHyper, Regularizer

logger = structlog.get_logger(__name__)

DEGENERATE_GRAD_NORM = 1e-12

__all__ = [
    "ClientState",
    "ClientUpdate",
    "LocalHyper",
    "LocalMode",
    "admm_local_correction",
    "client_train",
    "fedprox_correction",
    "sam_gradient",
    "sam_perturbation",
    "sam_step",
    "sgd_step",
]


@dataclass(frozen=True)
class LocalMode:
    optimizer: ClientOptimizer = ClientOptimizer.SGD
    regularizer: Regularizer = Regularizer.NONE


@dataclass(frozen=True)
class ClientState:
    """Per-client ADMM dual, persisted across rounds."""

    sigma: ParamVector

    @classmethod
    def zeros(cls, d: int) -> ClientState:
        return cls(sigma=np.zeros(d))


@dataclass(frozen=True)
class ClientUpdate:
    client: int
    weights: ParamVector
    num_samples: int
    state: ClientState
    steps: int
    grad_evals: int


# ---------------------------------------------------------------------------
# Step primitives
# ---------------------------------------------------------------------------


def sam_perturbation(g: ParamVector, rho: float) -> ParamVector:
    """rho * g / ||g||, or zeros when g is (numerically) zero."""
    if rho < 0:
        raise InvalidArgumentError(f"SAM radius must be >= 0, got {rho}")
    norm = float(np.linalg.norm(g))
    if norm < DEGENERATE_GRAD_NORM or rho == 0:
        return np.zeros_like(g, dtype=np.float64)
    return (rho / norm) * g


def sgd_step(
    w: ParamVector,
    g: ParamVector,
    eta: float,
    weight_decay: float,
    momentum: float,
    momentum_buf: ParamVector | None,
) -> tuple[ParamVector, ParamVector]:
    if eta <= 0:
        raise InvalidArgumentError(f"learning rate must be > 0, got {eta}")
    g = g + weight_decay * w if weight_decay else g
    buf = g if momentum_buf is None else momentum * momentum_buf + g
    return w - eta * buf, buf


def sam_gradient(w: ParamVector, arch: ModelArch, batch: Batch, rho: float) -> ParamVector:
    """Gradient evaluated at the ascent point w + rho * g / ||g||."""
    g = numcore.backward(w, arch, batch)
    return numcore.backward(w + sam_perturbation(g, rho), arch, batch)


def sam_step(
    w: ParamVector,
    arch: ModelArch,
    batch: Batch,
    hyper: LocalHyper,
    momentum_buf: ParamVector | None = None,
) -> tuple[ParamVector, ParamVector]:
    """One SAM step: two backward passes, then sgd_step on the ascent-point gradient."""
    if hyper.rho_l <= 0:
        raise InvalidArgumentError("sam_step needs rho_l > 0")
    g = sam_gradient(w, arch, batch, hyper.rho_l)
    return sgd_step(w, g, hyper.eta, hyper.weight_decay, hyper.momentum, momentum_buf)


def admm_local_correction(
    g: ParamVector, w: ParamVector, w_0: ParamVector, sigma_k: ParamVector, beta: float
) -> ParamVector:
    if beta <= 0:
        raise InvalidArgumentError(f"ADMM penalty must be > 0, got {beta}")
    return g - sigma_k + (w - w_0) / beta


def fedprox_correction(
    g: ParamVector, w: ParamVector, w_global: ParamVector, mu: float
) -> ParamVector:
    if mu < 0:
        raise InvalidArgumentError(f"proximal coefficient must be >= 0, got {mu}")
    return g + mu * (w - w_global)


# ---------------------------------------------------------------------------
# Local training loop
# ---------------------------------------------------------------------------


def _iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def client_train(
    w_init: ParamVector,
    arch: ModelArch,
    shard: Dataset,
    hyper: LocalHyper,
    mode: LocalMode,
    state: ClientState,
    rng: np.random.Generator,
    client: int = 0,
    rho_l: float | None = None,
) -> ClientUpdate:
    """
    Run E epochs of mini-batch steps starting from ``w_init``.

    ``rho_l`` overrides ``hyper.rho_l`` (used by the scheduled local radius).
    A SAM client with radius 0 takes plain SGD steps.
    """
    if len(shard) == 0:
        raise ConfigurationError(f"client {client} has an empty shard")
    rho = hyper.rho_l if rho_l is None else rho_l
    use_sam = mode.optimizer is ClientOptimizer.SAM and rho > 0

    w = np.array(w_init, dtype=np.float64, copy=True)
    buf: ParamVector | None = None
    steps = 0
    grad_evals = 0

    for _ in range(hyper.epochs):
        for idx in _iter_batches(len(shard), hyper.batch_size, rng):
            batch = Batch(shard.samples[idx], shard.labels[idx])
            if use_sam:
                g = sam_gradient(w, arch, batch, rho)
                grad_evals += 2
            else:
                g = numcore.backward(w, arch, batch)
                grad_evals += 1

            if mode.regularizer is Regularizer.PROX:
                g = fedprox_correction(g, w, w_init, hyper.mu)
            elif mode.regularizer is Regularizer.ADMM:
                g = admm_local_correction(g, w, w_init, state.sigma, hyper.beta)

            w, buf = sgd_step(w, g, hyper.eta, hyper.weight_decay, hyper.momentum, buf)
            steps += 1

    new_state = state
    if mode.regularizer is Regularizer.ADMM:
        new_state = ClientState(sigma=state.sigma - (w - w_init) / hyper.beta)

    logger.debug(
        "client_trained",
        client=client,
        steps=steps,
        grad_evals=grad_evals,
        displacement=float(np.linalg.norm(w - w_init)),
    )
    return ClientUpdate(
        client=client,
        weights=w,
        num_samples=len(shard),
        state=new_state,
        steps=steps,
        grad_evals=grad_evals,
    )
