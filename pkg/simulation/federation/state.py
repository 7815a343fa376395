"""
Server state, communication ledger and snapshot conversion.

A snapshot is a versioned JSON document (``ServerSnapshot``) holding the
global model, the global dual, the previous pseudo-gradient, every client
dual, the last local model of each client and the ledger. Loading a snapshot
and continuing produces the same trajectory as an uninterrupted run.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from simulation.localopt import ClientState
from simulation.shared.errors import ConfigurationError
from simulation.shared.numcore import ModelArch, ParamVector
from simulation.shared.schemas import ArchSnapshot, LedgerSnapshot, ServerSnapshot

BITS_PER_PARAM = 64


@dataclass
class CommLedger:
    """Bits sent per round, one model of d float64 values per client transfer."""

    downlink: list[int] = field(default_factory=list)
    uplink: list[int] = field(default_factory=list)

    @staticmethod
    def exchange_bits(clients: int, d: int) -> int:
        return clients * d * BITS_PER_PARAM

    def charge_round(self, clients: int, d: int, exchanges: int = 1) -> int:
        bits = exchanges * self.exchange_bits(clients, d)
        self.downlink.append(bits)
        self.uplink.append(bits)
        return 2 * bits

    @property
    def rounds(self) -> int:
        return len(self.downlink)

    @property
    def total_downlink(self) -> int:
        return sum(self.downlink)

    @property
    def total_uplink(self) -> int:
        return sum(self.uplink)

    @property
    def total(self) -> int:
        return self.total_downlink + self.total_uplink

    def cumulative(self) -> list[int]:
        out: list[int] = []
        running = 0
        for down, up in zip(self.downlink, self.uplink):
            running += down + up
            out.append(running)
        return out

    def multiplier(self, clients_per_round: int, d: int) -> float:
        """Total bits relative to FedAvg's two transfers per sampled client per round."""
        if self.rounds == 0:
            return 0.0
        return self.total / (self.rounds * 2 * self.exchange_bits(clients_per_round, d))


@dataclass
class ServerState:
    w: ParamVector
    sigma: ParamVector
    prev_pseudo_grad: ParamVector
    round: int = 0
    seed: int = 0
    ledger: CommLedger = field(default_factory=CommLedger)

    @classmethod
    def initial(cls, w0: ParamVector, seed: int) -> ServerState:
        w0 = np.array(w0, dtype=np.float64, copy=True)
        return cls(w=w0, sigma=np.zeros_like(w0), prev_pseudo_grad=np.zeros_like(w0), seed=seed)

    @property
    def d(self) -> int:
        return int(self.w.shape[0])


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def to_snapshot(
    state: ServerState,
    strategy: str,
    arch: ModelArch,
    client_states: dict[int, ClientState],
    local_models: dict[int, ParamVector],
    config: dict[str, Any] | None = None,
) -> ServerSnapshot:
    return ServerSnapshot(
        strategy=strategy,
        seed=state.seed,
        round=state.round,
        arch=ArchSnapshot.from_arch(arch),
        w=state.w.tolist(),
        sigma=state.sigma.tolist(),
        prev_pseudo_grad=state.prev_pseudo_grad.tolist(),
        client_sigmas={k: s.sigma.tolist() for k, s in sorted(client_states.items())},
        local_models={k: v.tolist() for k, v in sorted(local_models.items())},
        ledger=LedgerSnapshot(downlink_bits=list(state.ledger.downlink), uplink_bits=list(state.ledger.uplink)),
        config=config,
    )


def from_snapshot(
    snap: ServerSnapshot,
) -> tuple[ServerState, dict[int, ClientState], dict[int, ParamVector]]:
    d = snap.arch.to_arch().param_count
    vectors = {"w": snap.w, "sigma": snap.sigma, "prev_pseudo_grad": snap.prev_pseudo_grad}
    bad = [f"{name}: length {len(v)} != {d}" for name, v in vectors.items() if len(v) != d]
    if bad:
        raise ConfigurationError("snapshot does not match its architecture", bad)
    state = ServerState(
        w=np.asarray(snap.w, dtype=np.float64),
        sigma=np.asarray(snap.sigma, dtype=np.float64),
        prev_pseudo_grad=np.asarray(snap.prev_pseudo_grad, dtype=np.float64),
        round=snap.round,
        seed=snap.seed,
        ledger=CommLedger(list(snap.ledger.downlink_bits), list(snap.ledger.uplink_bits)),
    )
    clients = {k: ClientState(np.asarray(v, dtype=np.float64)) for k, v in snap.client_sigmas.items()}
    models = {k: np.asarray(v, dtype=np.float64) for k, v in snap.local_models.items()}
    return state, clients, models


def save_snapshot(snap: ServerSnapshot, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(snap.model_dump_json(indent=None))
    return path


def load_snapshot(path: str | Path) -> ServerSnapshot:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"snapshot not found: {path}")
    try:
        return ServerSnapshot.model_validate(json.loads(path.read_text()))
    except (ValidationError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"invalid snapshot {path}", [str(exc)]) from exc
