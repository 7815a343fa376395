"""Pydantic v2 schemas for experiment configuration and server snapshots."""
from __future__ import annotations

from enum import Enum
from typing import Annotated, Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from simulation.shared.numcore import Activation, ModelArch

SNAPSHOT_VERSION = 1


class StrategyKind(str, Enum):
    FEDAVG = "FedAvg"
    FEDPROX = "FedProx"
    FEDSAM = "FedSAM"
    FEDDYN = "FedDyn"
    FEDDYN_SAM = "FedDynSAM"
    NAIVE_FEDGLOSS = "NaiveFedGloSS"
    FEDGLOSS = "FedGloSS"


class ClientOptimizer(str, Enum):
    SGD = "sgd"
    SAM = "sam"


class Regularizer(str, Enum):
    NONE = "none"
    PROX = "prox"
    ADMM = "admm"


class ScheduleScope(str, Enum):
    SERVER = "server"
    LOCAL = "local"
    BOTH = "both"


GLOSS_KINDS = frozenset({StrategyKind.FEDGLOSS, StrategyKind.NAIVE_FEDGLOSS})

# (client optimizer, regulariser) implied by each fixed baseline
_BASELINE_MODES: dict[StrategyKind, tuple[ClientOptimizer, Regularizer]] = {
    StrategyKind.FEDAVG: (ClientOptimizer.SGD, Regularizer.NONE),
    StrategyKind.FEDPROX: (ClientOptimizer.SGD, Regularizer.PROX),
    StrategyKind.FEDSAM: (ClientOptimizer.SAM, Regularizer.NONE),
    StrategyKind.FEDDYN: (ClientOptimizer.SGD, Regularizer.ADMM),
    StrategyKind.FEDDYN_SAM: (ClientOptimizer.SAM, Regularizer.ADMM),
}


# ---------------------------------------------------------------------------
# Local training
# ---------------------------------------------------------------------------


class LocalHyper(BaseModel):
    """Client-side hyperparameters shared by every local rule."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    eta: float = Field(default=0.01, gt=0, description="local learning rate")
    rho_l: float = Field(default=0.05, ge=0, description="local SAM radius")
    mu: float = Field(default=0.01, ge=0, description="FedProx proximal coefficient")
    beta: float = Field(default=10.0, gt=0, description="ADMM penalty")
    weight_decay: float = Field(default=0.0, ge=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    epochs: int = Field(default=1, ge=1)
    batch_size: int = Field(default=64, ge=1)


class LocalOverrides(BaseModel):
    """Per-strategy overrides of the experiment-level LocalHyper; unset fields inherit."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    eta: Annotated[float, Field(gt=0)] | None = None
    rho_l: Annotated[float, Field(ge=0)] | None = None
    mu: Annotated[float, Field(ge=0)] | None = None
    weight_decay: Annotated[float, Field(ge=0)] | None = None
    momentum: Annotated[float, Field(ge=0, lt=1)] | None = None
    epochs: Annotated[int, Field(ge=1)] | None = None
    batch_size: Annotated[int, Field(ge=1)] | None = None

    @model_validator(mode="before")
    @classmethod
    def _no_local_beta(cls, data: Any) -> Any:
        if isinstance(data, dict) and "beta" in data:
            raise ValueError("set the ADMM penalty with the strategy-level 'beta'")
        return data

    def overrides(self) -> dict[str, Any]:
        return self.model_dump(exclude_none=True)


class RhoSchedule(BaseModel):
    """Linear warm-up of the SAM radius from rho_0 to its target over warmup_rounds."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    rho_0: float = Field(default=0.001, ge=0)
    warmup_rounds: int = Field(default=0, ge=0)
    scope: ScheduleScope = ScheduleScope.SERVER


class StrategyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: StrategyKind
    name: str | None = Field(default=None, min_length=1)
    eta_s: float = Field(default=1.0, gt=0, description="server learning rate")
    rho_s: float = Field(default=0.0, ge=0, description="server SAM radius")
    beta: float = Field(default=10.0, gt=0, description="ADMM penalty")
    client_optimizer: ClientOptimizer | None = None
    use_admm: bool | None = None
    rho_schedule: RhoSchedule = Field(default_factory=RhoSchedule)
    local: LocalOverrides = Field(default_factory=LocalOverrides)

    @field_serializer("local")
    def _dump_local(self, local: LocalOverrides) -> dict[str, Any]:
        return local.overrides()

    @model_validator(mode="after")
    def _kind_specific(self) -> StrategyConfig:
        if self.kind not in GLOSS_KINDS:
            if self.rho_s > 0:
                raise ValueError(f"rho_s is only used by FedGloSS variants, not {self.kind.value}")
            if self.client_optimizer is not None and (
                self.client_optimizer != _BASELINE_MODES[self.kind][0]
            ):
                raise ValueError(f"{self.kind.value} fixes its client optimizer")
            if self.use_admm is not None:
                raise ValueError("use_admm is only configurable for FedGloSS variants")
        return self

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    @property
    def optimizer(self) -> ClientOptimizer:
        if self.client_optimizer is not None:
            return self.client_optimizer
        if self.kind in GLOSS_KINDS:
            return ClientOptimizer.SAM
        return _BASELINE_MODES[self.kind][0]

    @property
    def regularizer(self) -> Regularizer:
        if self.kind in GLOSS_KINDS:
            return Regularizer.ADMM if self.admm_enabled else Regularizer.NONE
        return _BASELINE_MODES[self.kind][1]

    @property
    def admm_enabled(self) -> bool:
        if self.kind is StrategyKind.FEDGLOSS:
            return True if self.use_admm is None else self.use_admm
        if self.kind is StrategyKind.NAIVE_FEDGLOSS:
            return bool(self.use_admm)
        return _BASELINE_MODES[self.kind][1] is Regularizer.ADMM

    @property
    def server_sam(self) -> bool:
        return self.kind in GLOSS_KINDS

    def resolve_local(self, base: LocalHyper) -> LocalHyper:
        """Experiment-level local hyperparameters with this strategy's overrides."""
        merged = {**base.model_dump(), **self.local.overrides(), "beta": self.beta}
        return LocalHyper(**merged)


# ---------------------------------------------------------------------------
# Data and model
# ---------------------------------------------------------------------------


class SyntheticDatasetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    source: Literal["synthetic"] = "synthetic"
    num_classes: int = Field(default=10, ge=2)
    per_class: int = Field(default=100, ge=1)
    input_dim: int = Field(default=20, ge=2)
    class_sep: float = Field(default=3.0, ge=0)
    noise_sd: float = Field(default=1.0, ge=0)


class CsvDatasetSpec(BaseModel):
    """Features then label per row; without test_path an 80/20 split is drawn."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    source: Literal["csv"]
    path: str = Field(min_length=1)
    test_path: str | None = None
    num_classes: int | None = Field(default=None, ge=2)


DatasetSpec = Annotated[
    Union[SyntheticDatasetSpec, CsvDatasetSpec], Field(discriminator="source")
]


class PartitionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_clients: int = Field(ge=1)
    alpha: float = Field(ge=0)
    seed: int | None = Field(default=None, ge=0, description="defaults to a stream of the master seed")


class ArchSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    hidden_dims: list[int] = Field(default_factory=lambda: [32], min_length=1)
    activation: Activation = Activation.RELU

    @field_validator("hidden_dims")
    @classmethod
    def _positive(cls, v: list[int]) -> list[int]:
        if any(h < 1 for h in v):
            raise ValueError("hidden layer widths must be >= 1")
        return v

    def to_arch(self, input_dim: int, num_classes: int) -> ModelArch:
        return ModelArch(input_dim, tuple(self.hidden_dims), num_classes, self.activation)


class DiagnosticsSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda1_every: int = Field(default=0, ge=0, description="0 disables periodic lambda1")
    final_lambda1: bool = True
    lambda1_max_iter: int = Field(default=20, ge=1)
    lambda1_tol: float = Field(default=1e-3, gt=0)
    lambda1_batch_size: int | None = Field(default=None, ge=1)
    delta_eps: bool = True
    landscape_rounds: list[int] = Field(default_factory=list)
    landscape_resolution: int = Field(default=11, ge=3)
    landscape_extent: float = Field(default=1.0, gt=0)
    landscape_on: Literal["train", "test"] = "train"
    interpolate: list[tuple[str, str]] = Field(default_factory=list)
    interpolation_points: int = Field(default=31, ge=4)
    local_eigs: bool = False

    @field_validator("interpolation_points")
    @classmethod
    def _grid_hits_endpoints(cls, v: int) -> int:
        if (v - 1) % 3 != 0:
            raise ValueError("interpolation_points - 1 must be divisible by 3 so 0 and 1 lie on the grid")
        return v


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = Field(default="experiment", min_length=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    rounds: int = Field(ge=1)
    clients_per_round: int = Field(ge=1)
    eval_every: int = Field(default=1, ge=1)
    final_window: float = Field(default=0.1, gt=0, le=1)
    dataset: DatasetSpec = Field(default_factory=SyntheticDatasetSpec)
    partition: PartitionSpec
    arch: ArchSpec = Field(default_factory=ArchSpec)
    local: LocalHyper = Field(default_factory=LocalHyper)
    strategies: list[StrategyConfig] = Field(min_length=1)
    diagnostics: DiagnosticsSpec = Field(default_factory=DiagnosticsSpec)
    output_dir: str | None = None

    @field_validator("seeds")
    @classmethod
    def _non_negative_seeds(cls, v: list[int]) -> list[int]:
        if any(s < 0 for s in v):
            raise ValueError("seeds must be >= 0")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be unique")
        return v

    @model_validator(mode="after")
    def _cross_field(self) -> ExperimentConfig:
        if self.clients_per_round > self.partition.num_clients:
            raise ValueError(
                f"clients_per_round={self.clients_per_round} exceeds "
                f"partition.num_clients={self.partition.num_clients}"
            )
        labels = [s.label for s in self.strategies]
        duplicates = sorted({x for x in labels if labels.count(x) > 1})
        if duplicates:
            raise ValueError(f"strategy names must be unique, duplicated: {duplicates}")
        for a, b in self.diagnostics.interpolate:
            for label in (a, b):
                if label not in labels:
                    raise ValueError(f"interpolation references unknown strategy '{label}'")
        late = [r for r in self.diagnostics.landscape_rounds if not 1 <= r <= self.rounds]
        if late:
            raise ValueError(f"landscape_rounds outside [1, {self.rounds}]: {late}")
        return self

    def strategy(self, label: str) -> StrategyConfig:
        for s in self.strategies:
            if s.label == label:
                return s
        raise KeyError(label)


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


class ArchSnapshot(BaseModel):
    input_dim: int
    hidden_dims: list[int]
    num_classes: int
    activation: Activation

    @classmethod
    def from_arch(cls, arch: ModelArch) -> ArchSnapshot:
        return cls(
            input_dim=arch.input_dim,
            hidden_dims=list(arch.hidden_dims),
            num_classes=arch.num_classes,
            activation=arch.activation,
        )

    def to_arch(self) -> ModelArch:
        return ModelArch(self.input_dim, tuple(self.hidden_dims), self.num_classes, self.activation)


class LedgerSnapshot(BaseModel):
    downlink_bits: list[int] = Field(default_factory=list)
    uplink_bits: list[int] = Field(default_factory=list)


class ServerSnapshot(BaseModel):
    """Versioned JSON document carrying everything needed to resume a run."""

    version: Literal[1] = SNAPSHOT_VERSION
    strategy: str
    seed: int
    round: int = Field(ge=0)
    arch: ArchSnapshot
    w: list[float]
    sigma: list[float]
    prev_pseudo_grad: list[float]
    client_sigmas: dict[int, list[float]] = Field(default_factory=dict)
    local_models: dict[int, list[float]] = Field(default_factory=dict)
    ledger: LedgerSnapshot = Field(default_factory=LedgerSnapshot)
    config: dict[str, Any] | None = None
