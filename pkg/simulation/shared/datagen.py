"""
Synthetic classification data and client partitioning.

make_synthetic draws Gaussian clusters around unit-norm class centres and
splits them 80/20 into train/test, stratified by class.

partition_dirichlet distributes the training set over C clients in equal
shards of floor(N/C) samples. Each client draws class proportions from a
symmetric Dirichlet(alpha); alpha = 0 is the pathological single-class split
(class k mod K for client k). Leftover samples are kept in
``Partition.unassigned`` and never used for training.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import structlog

from simulation.shared.errors import ConfigurationError
from simulation.shared.numcore import Batch

logger = structlog.get_logger(__name__)

TEST_FRACTION = 0.2


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray  # [N x input_dim]
    labels: np.ndarray  # [N]
    num_classes: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if samples.ndim != 2 or labels.shape != (samples.shape[0],):
            raise ConfigurationError(
                f"dataset shape mismatch: samples {samples.shape}, labels {labels.shape}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConfigurationError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.samples.shape[1])

    def subset(self, indices: np.ndarray | list[int]) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.samples[idx], self.labels[idx], self.num_classes)

    def as_batch(self) -> Batch:
        return Batch(self.samples, self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class DataSplit:
    train: Dataset
    test: Dataset


@dataclass(frozen=True)
class Partition:
    client_indices: list[np.ndarray]
    alpha: float
    unassigned: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)


@dataclass(frozen=True)
class ClientLabelStats:
    client: int
    size: int
    histogram: np.ndarray
    classes_seen: int
    entropy: float
    dominant_class: int


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def make_synthetic(
    num_classes: int,
    per_class: int,
    input_dim: int,
    class_sep: float,
    noise_sd: float,
    seed: int,
) -> DataSplit:
    """Gaussian class clusters with a stratified 80/20 train/test split."""
    if num_classes < 2 or input_dim < 2:
        raise ConfigurationError(
            "make_synthetic needs num_classes >= 2 and input_dim >= 2",
            [f"num_classes={num_classes}", f"input_dim={input_dim}"],
        )
    if per_class < 1:
        raise ConfigurationError(f"per_class must be >= 1, got {per_class}")
    if noise_sd < 0:
        raise ConfigurationError(f"noise_sd must be >= 0, got {noise_sd}")

    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, input_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= class_sep

    n_test = int(round(per_class * TEST_FRACTION))
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(num_classes):
        points = centers[c] + noise_sd * rng.standard_normal((per_class, input_dim))
        order = rng.permutation(per_class)
        test_idx, train_idx = order[:n_test], order[n_test:]
        train_x.append(points[train_idx])
        train_y.append(np.full(train_idx.size, c))
        test_x.append(points[test_idx])
        test_y.append(np.full(test_idx.size, c))

    train = Dataset(np.concatenate(train_x), np.concatenate(train_y), num_classes)
    test = Dataset(
        np.concatenate(test_x) if n_test else np.empty((0, input_dim)),
        np.concatenate(test_y) if n_test else np.empty(0, dtype=np.int64),
        num_classes,
    )
    logger.debug(
        "synthetic_dataset_created",
        num_classes=num_classes,
        train_size=len(train),
        test_size=len(test),
    )
    return DataSplit(train=train, test=test)


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # ties resolved by lower class index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _partition_single_class(
    labels: np.ndarray, num_classes: int, num_clients: int, shard: int, rng: np.random.Generator
) -> list[np.ndarray]:
    pools = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in range(num_classes)}
    shards: list[np.ndarray] = []
    for k in range(num_clients):
        c = k % num_classes
        if len(pools[c]) < shard:
            raise ConfigurationError(
                f"alpha=0 needs {shard} samples of class {c} for client {k}, "
                f"only {len(pools[c])} remain"
            )
        shards.append(np.sort(np.asarray(pools[c][:shard], dtype=np.int64)))
        del pools[c][:shard]
    return shards


def _partition_dirichlet_mix(
    labels: np.ndarray,
    num_classes: int,
    num_clients: int,
    shard: int,
    alpha: float,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    pools = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in range(num_classes)}
    shards: list[np.ndarray] = []
    for k in range(num_clients):
        proportions = rng.dirichlet(np.full(num_classes, alpha))
        if not np.all(np.isfinite(proportions)) or proportions.sum() <= 0:
            proportions = np.full(num_classes, 1.0 / num_classes)
        taken: list[int] = []
        need = shard
        while need > 0:
            remaining = np.array([len(pools[c]) for c in range(num_classes)])
            available = remaining > 0
            if not available.any():
                raise ConfigurationError(f"ran out of samples while filling client {k}")
            p = np.where(available, proportions, 0.0)
            if p.sum() <= 0:
                # exhausted every preferred class: fall back to what is left
                p = remaining.astype(np.float64)
            p = p / p.sum()
            want = np.minimum(_largest_remainder(p, need), remaining)
            for c in np.flatnonzero(want):
                n = int(want[c])
                taken.extend(pools[c][:n])
                del pools[c][:n]
            need -= int(want.sum())
        shards.append(np.sort(np.asarray(taken, dtype=np.int64)))
    return shards


def partition_dirichlet(dataset: Dataset, num_clients: int, alpha: float, seed: int) -> Partition:
    """Split ``dataset`` into ``num_clients`` equal shards with Dirichlet label skew."""
    n = len(dataset)
    violations: list[str] = []
    if num_clients < 1:
        violations.append(f"num_clients must be >= 1, got {num_clients}")
    if num_clients > n:
        violations.append(f"num_clients={num_clients} exceeds dataset size {n}")
    if alpha < 0 or not np.isfinite(alpha):
        violations.append(f"alpha must be a finite value >= 0, got {alpha}")
    if violations:
        raise ConfigurationError("invalid partition request", violations)

    shard = n // num_clients
    rng = np.random.default_rng(seed)
    if alpha == 0:
        shards = _partition_single_class(
            dataset.labels, dataset.num_classes, num_clients, shard, rng
        )
    else:
        shards = _partition_dirichlet_mix(
            dataset.labels, dataset.num_classes, num_clients, shard, alpha, rng
        )

    used = np.concatenate(shards) if shards else np.empty(0, dtype=np.int64)
    unassigned = np.setdiff1d(np.arange(n), used)
    logger.debug(
        "dataset_partitioned",
        num_clients=num_clients,
        alpha=alpha,
        shard=shard,
        unassigned=int(unassigned.size),
    )
    return Partition(client_indices=shards, alpha=float(alpha), unassigned=unassigned)


def shard_sizes(partition: Partition) -> list[int]:
    return [int(idx.size) for idx in partition.client_indices]


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def label_entropy(histogram: np.ndarray) -> float:
    total = histogram.sum()
    if total == 0:
        return 0.0
    p = histogram[histogram > 0] / total
    return float(-(p * np.log(p)).sum())


def partition_stats(partition: Partition, dataset: Dataset) -> list[ClientLabelStats]:
    stats: list[ClientLabelStats] = []
    for k, idx in enumerate(partition.client_indices):
        hist = np.bincount(dataset.labels[idx], minlength=dataset.num_classes)
        stats.append(
            ClientLabelStats(
                client=k,
                size=int(idx.size),
                histogram=hist,
                classes_seen=int(np.count_nonzero(hist)),
                entropy=label_entropy(hist),
                dominant_class=int(np.argmax(hist)),
            )
        )
    return stats


def average_classes_per_client(partition: Partition, dataset: Dataset) -> float:
    return float(np.mean([s.classes_seen for s in partition_stats(partition, dataset)]))


def average_label_entropy(partition: Partition, dataset: Dataset) -> float:
    return float(np.mean([s.entropy for s in partition_stats(partition, dataset)]))


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------


def save_dataset_csv(dataset: Dataset, path: str | Path) -> Path:
    """Write feature columns x0..x{d-1} followed by ``label``."""
    columns = [f"x{i}" for i in range(dataset.input_dim)]
    df = pd.DataFrame(dataset.samples, columns=columns)
    df["label"] = dataset.labels
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    return path


def load_dataset_csv(path: str | Path, num_classes: int | None = None) -> Dataset:
    """Read a CSV whose last column holds integer labels."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"dataset file not found: {path}")
    df = pd.read_csv(path, float_precision="round_trip")
    if df.shape[1] < 2:
        raise ConfigurationError(f"{path}: need at least one feature column and a label column")
    labels = df.iloc[:, -1].to_numpy()
    if not np.all(np.equal(np.mod(labels, 1), 0)):
        raise ConfigurationError(f"{path}: label column must hold integers")
    labels = labels.astype(np.int64)
    samples = df.iloc[:, :-1].to_numpy(dtype=np.float64)
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(samples, labels, k)


def split_train_test(dataset: Dataset, seed: int) -> DataSplit:
    """Stratified 80/20 split for imported datasets."""
    rng = np.random.default_rng(seed)
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for c in range(dataset.num_classes):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        n_test = int(round(idx.size * TEST_FRACTION))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    return DataSplit(
        train=dataset.subset(np.sort(np.concatenate(train_idx))),
        test=dataset.subset(np.sort(np.concatenate(test_idx))),
    )
