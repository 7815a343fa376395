"""
One federated round per strategy, and a multi-round driver.

Round t (0-based, ``state.round`` before the call) for each strategy:

  FedAvg / FedProx / FedSAM
      broadcast w, train, delta = pg(w), w' = w - eta_s * delta
  FedDyn / FedDynSAM
      broadcast w, ADMM train, delta = pg(w), sigma' from w,
      w' = w - eta_s * delta - beta * sigma'
  FedGloSS
      w_tilde = w + rho(t) * prev / ||prev||, broadcast w_tilde, train,
      delta = pg(w_tilde), then the ADMM step (sigma' from the unperturbed w) or,
      with ADMM disabled, w' = w - eta_s * delta
  NaiveFedGloSS
      lookahead exchange from w gives the current delta; w_tilde uses it;
      a second exchange from w_tilde to the SAME clients drives the step

Client results are reduced in ascending client-id order whether clients
train sequentially or on a thread pool, so both modes give identical models.
"""
from __future__ import annotations

from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
import structlog

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
from simulation.federation.state import (
    CommLedger,
    ServerState,
    from_snapshot,
    to_snapshot,
)
from simulation.flatness import delta_eps, param_norm
from simulation.localopt import ClientState, ClientUpdate, LocalMode, client_train
from simulation.shared.datagen import Dataset
from simulation.shared.errors import ConfigurationError, DivergenceError
from simulation.shared.numcore import ModelArch, ParamVector
from simulation.shared.schemas import (
    LocalHyper,
    ScheduleScope,
    ServerSnapshot,
    StrategyConfig,
    StrategyKind,
)
from simulation.shared.seeding import rng_for

logger = structlog.get_logger(__name__)

MAX_PARAM_NORM = 1e6

TRAIN_EXCHANGE = "train"
LOOKAHEAD_EXCHANGE = "lookahead"


@dataclass(frozen=True)
class RoundContext:
    """Everything a round needs besides the mutable server and client state."""

    arch: ModelArch
    shards: list[Dataset]
    strategy: StrategyConfig
    hyper: LocalHyper
    clients_per_round: int
    seed: int
    max_workers: int = 1

    def __post_init__(self) -> None:
        if not 1 <= self.clients_per_round <= len(self.shards):
            raise ConfigurationError(
                f"clients_per_round={self.clients_per_round} must lie in [1, {len(self.shards)}]"
            )

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    @property
    def mode(self) -> LocalMode:
        return LocalMode(self.strategy.optimizer, self.strategy.regularizer)

    def server_rho(self, t: int) -> float:
        s = self.strategy
        if not s.server_sam:
            return 0.0
        if s.rho_schedule.scope in (ScheduleScope.SERVER, ScheduleScope.BOTH):
            return rho_schedule(t, s.rho_schedule.rho_0, s.rho_s, s.rho_schedule.warmup_rounds)
        return s.rho_s

    def local_rho(self, t: int) -> float:
        s = self.strategy
        if s.rho_schedule.scope in (ScheduleScope.LOCAL, ScheduleScope.BOTH):
            return rho_schedule(t, s.rho_schedule.rho_0, self.hyper.rho_l, s.rho_schedule.warmup_rounds)
        return self.hyper.rho_l


@dataclass(frozen=True)
class RoundReport:
    round: int  # 1-based index of the completed round
    sampled: list[int]
    rho: float
    rho_local: float
    perturbation_norm: float
    delta_eps: float | None
    downlink_bits: int
    uplink_bits: int
    grad_evals: int
    w_norm: float
    local_models: dict[int, ParamVector] = field(repr=False)


@dataclass(frozen=True)
class RoundOutcome:
    state: ServerState
    client_states: dict[int, ClientState]
    report: RoundReport


# ---------------------------------------------------------------------------
# Client exchange
# ---------------------------------------------------------------------------


def _train_clients(
    ctx: RoundContext,
    w_broadcast: ParamVector,
    sampled: list[int],
    client_states: dict[int, ClientState],
    t: int,
    exchange: str,
) -> list[ClientUpdate]:
    rho_l = ctx.local_rho(t)
    mode = ctx.mode

    def train_one(k: int) -> ClientUpdate:
        return client_train(
            w_broadcast,
            ctx.arch,
            ctx.shards[k],
            ctx.hyper,
            mode,
            client_states[k],
            rng_for(ctx.seed, "client", k, t, exchange),
            client=k,
            rho_l=rho_l,
        )

    if ctx.max_workers > 1 and len(sampled) > 1:
        with ThreadPoolExecutor(max_workers=min(ctx.max_workers, len(sampled))) as pool:
            return list(pool.map(train_one, sampled))
    return [train_one(k) for k in sampled]


def _check_finite(ctx: RoundContext, w: ParamVector, round_index: int) -> float:
    norm = param_norm(w)
    if not np.all(np.isfinite(w)):
        logger.warning("divergence_detected", strategy=ctx.strategy.label, round=round_index, reason="non-finite")
        raise DivergenceError(ctx.strategy.label, round_index, norm, "non-finite parameters")
    if norm > MAX_PARAM_NORM:
        logger.warning("divergence_detected", strategy=ctx.strategy.label, round=round_index, w_norm=norm)
        raise DivergenceError(ctx.strategy.label, round_index, norm, f"||w|| exceeds {MAX_PARAM_NORM:g}")
    return norm


def _aggregate(
    ctx: RoundContext,
    state: ServerState,
    w_ref: ParamVector,
    updates: list[ClientUpdate],
) -> tuple[ParamVector, ParamVector, ParamVector]:
    """
    Return (w', sigma', delta) and record delta as the previous pseudo-gradient.

    delta is taken relative to the broadcast model ``w_ref``; the dual
    increment is always measured from the unperturbed ``state.w``.
    """
    s = ctx.strategy
    delta = pseudo_gradient(w_ref, [(u.weights, u.num_samples) for u in updates])
    if s.admm_enabled:
        sigma = global_dual_update(state.sigma, [u.weights for u in updates], state.w, s.beta, len(updates))
        w_new = fedgloss_descent(state, delta, sigma, s.beta, s.eta_s)
        return w_new, sigma, delta
    state.prev_pseudo_grad = delta.copy()
    return fedavg_update(state.w, delta, s.eta_s), state.sigma, delta


# ---------------------------------------------------------------------------
# Round entry points
# ---------------------------------------------------------------------------


def naive_round(
    state: ServerState,
    ctx: RoundContext,
    client_states: dict[int, ClientState],
) -> RoundOutcome:
    """Two exchanges with the same clients: lookahead from w, then train from w_tilde."""
    t = state.round
    work = replace(state)
    sampled = sample_clients(ctx.num_clients, ctx.clients_per_round, rng_for(ctx.seed, "sampling", t))

    # ── Step 1: Lookahead exchange from w ──────────────────────────────────
    lookahead = _train_clients(ctx, state.w, sampled, client_states, t, LOOKAHEAD_EXCHANGE)
    current = pseudo_gradient(state.w, [(u.weights, u.num_samples) for u in lookahead])

    # ── Step 2: Ascent along the current pseudo-gradient ───────────────────
    rho = ctx.server_rho(t)
    w_tilde = perturb(state.w, current, rho)
    eps = delta_eps(state.prev_pseudo_grad, current, rho)

    # ── Step 3: Descent exchange from w_tilde ──────────────────────────────
    updates = _train_clients(ctx, w_tilde, sampled, client_states, t, TRAIN_EXCHANGE)
    w_new, sigma, _ = _aggregate(ctx, work, w_tilde, updates)
    return _finish(ctx, state, work, client_states, sampled, updates, lookahead, w_new, sigma, w_tilde, rho, eps, exchanges=2)


def run_round(
    state: ServerState,
    ctx: RoundContext,
    client_states: dict[int, ClientState],
) -> RoundOutcome:
    """Advance the federation by one round; ``state`` and ``client_states`` are not mutated."""
    kind = ctx.strategy.kind
    if kind is StrategyKind.NAIVE_FEDGLOSS:
        return naive_round(state, ctx, client_states)

    t = state.round
    work = replace(state)
    sampled = sample_clients(ctx.num_clients, ctx.clients_per_round, rng_for(ctx.seed, "sampling", t))

    rho = ctx.server_rho(t)
    eps: float | None = None
    if kind is StrategyKind.FEDGLOSS:
        w_start = server_perturb(state, rho)
    else:
        w_start = state.w

    updates = _train_clients(ctx, w_start, sampled, client_states, t, TRAIN_EXCHANGE)
    w_new, sigma, delta = _aggregate(ctx, work, w_start, updates)
    if kind is StrategyKind.FEDGLOSS:
        eps = delta_eps(state.prev_pseudo_grad, delta, rho)
    return _finish(ctx, state, work, client_states, sampled, updates, [], w_new, sigma, w_start, rho, eps, exchanges=1)


def _finish(
    ctx: RoundContext,
    state: ServerState,
    work: ServerState,
    client_states: dict[int, ClientState],
    sampled: list[int],
    updates: list[ClientUpdate],
    lookahead: list[ClientUpdate],
    w_new: ParamVector,
    sigma: ParamVector,
    w_start: ParamVector,
    rho: float,
    eps: float | None,
    exchanges: int,
) -> RoundOutcome:
    t = state.round
    w_norm = _check_finite(ctx, w_new, t + 1)

    ledger = CommLedger(list(state.ledger.downlink), list(state.ledger.uplink))
    ledger.charge_round(len(sampled), state.d, exchanges)
    new_state = ServerState(
        w=w_new,
        sigma=np.array(sigma, copy=True),
        prev_pseudo_grad=work.prev_pseudo_grad,
        round=t + 1,
        seed=state.seed,
        ledger=ledger,
    )
    new_clients = dict(client_states)
    for u in updates:
        new_clients[u.client] = u.state

    report = RoundReport(
        round=t + 1,
        sampled=sampled,
        rho=rho,
        rho_local=ctx.local_rho(t),
        perturbation_norm=param_norm(w_start - state.w),
        delta_eps=eps,
        downlink_bits=ledger.downlink[-1],
        uplink_bits=ledger.uplink[-1],
        grad_evals=sum(u.grad_evals for u in updates) + sum(u.grad_evals for u in lookahead),
        w_norm=w_norm,
        local_models={u.client: u.weights for u in updates},
    )
    logger.debug(
        "round_completed",
        strategy=ctx.strategy.label,
        round=t + 1,
        rho=rho,
        w_norm=w_norm,
        delta_eps=eps,
        bits=report.downlink_bits + report.uplink_bits,
    )
    return RoundOutcome(state=new_state, client_states=new_clients, report=report)


# ---------------------------------------------------------------------------
# Multi-round driver
# ---------------------------------------------------------------------------


class FederatedRun:
    """Owns the server state, every client's dual and each client's latest local model."""

    def __init__(
        self,
        ctx: RoundContext,
        w0: ParamVector,
        state: ServerState | None = None,
        client_states: dict[int, ClientState] | None = None,
        local_models: dict[int, ParamVector] | None = None,
    ) -> None:
        self.ctx = ctx
        self.state = state if state is not None else ServerState.initial(w0, ctx.seed)
        d = self.state.d
        if d != ctx.arch.param_count:
            raise ConfigurationError(f"model length {d} does not match architecture ({ctx.arch.param_count})")
        self.client_states = client_states or {k: ClientState.zeros(d) for k in range(ctx.num_clients)}
        self.local_models: dict[int, ParamVector] = dict(local_models or {})
        self.reports: list[RoundReport] = []

    @property
    def w(self) -> ParamVector:
        return self.state.w

    def step(self) -> RoundReport:
        outcome = run_round(self.state, self.ctx, self.client_states)
        self.state = outcome.state
        self.client_states = outcome.client_states
        self.local_models.update(outcome.report.local_models)
        self.reports.append(outcome.report)
        return outcome.report

    def run(
        self, rounds: int, on_round: Callable[[RoundReport], None] | None = None
    ) -> list[RoundReport]:
        reports: list[RoundReport] = []
        for _ in range(rounds):
            report = self.step()
            if on_round is not None:
                on_round(report)
            reports.append(report)
        return reports

    def snapshot(self, config: dict[str, Any] | None = None) -> ServerSnapshot:
        return to_snapshot(
            self.state, self.ctx.strategy.label, self.ctx.arch, self.client_states, self.local_models, config
        )

    @classmethod
    def from_snapshot(cls, ctx: RoundContext, snap: ServerSnapshot) -> FederatedRun:
        state, clients, models = from_snapshot(snap)
        if snap.arch.to_arch() != ctx.arch:
            raise ConfigurationError("snapshot architecture differs from the run's architecture")
        missing = [k for k in range(ctx.num_clients) if k not in clients]
        for k in missing:
            clients[k] = ClientState.zeros(state.d)
        return cls(ctx, state.w, state=state, client_states=clients, local_models=models)
