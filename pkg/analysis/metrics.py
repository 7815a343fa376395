"""
Per-round metrics for one (strategy, seed) job.

A row is written after round t (1-based) whenever t % eval_every == 0 or
t == T, so a run of T rounds always has ceil(T / eval_every) rows:

- train_loss / test_loss : mean cross-entropy of the global model
- test_acc               : accuracy of the global model on the test split
- lambda1                : dominant Hessian eigenvalue on the train split (when scheduled)
- delta_eps              : perturbation alignment error of the round (FedGloSS variants)
- w_norm                 : ||w||_2 of the global model
- bits_cum               : uplink + downlink bits sent so far
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from types import TracebackType

import pandas as pd

from simulation.shared.datagen import Dataset
from simulation.shared.numcore import BatchObjective, ModelArch, ParamVector

METRICS_COLUMNS = [
    "round",
    "strategy",
    "seed",
    "train_loss",
    "test_loss",
    "test_acc",
    "lambda1",
    "delta_eps",
    "w_norm",
    "bits_cum",
]


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    strategy: str
    seed: int
    train_loss: float
    test_loss: float | None
    test_acc: float | None
    lambda1: float | None
    delta_eps: float | None
    w_norm: float
    bits_cum: int


@dataclass(frozen=True)
class Evaluation:
    train_loss: float
    test_loss: float | None
    test_acc: float | None


def should_record(t: int, eval_every: int, total_rounds: int) -> bool:
    return t % eval_every == 0 or t == total_rounds


def expected_rows(total_rounds: int, eval_every: int) -> int:
    return math.ceil(total_rounds / eval_every)


def evaluate(w: ParamVector, arch: ModelArch, train: Dataset, test: Dataset) -> Evaluation:
    train_loss = BatchObjective(arch, train.as_batch()).loss(w)
    if len(test) == 0:
        return Evaluation(train_loss, None, None)
    objective = BatchObjective(arch, test.as_batch())
    return Evaluation(train_loss, objective.loss(w), objective.accuracy(w))


def _cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    """Streams MetricsRecord rows to a CSV file, flushing after every row."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRICS_COLUMNS)
        self.rows = 0

    def write(self, record: MetricsRecord) -> None:
        row = asdict(record)
        self._writer.writerow([_cell(row[c]) for c in METRICS_COLUMNS])
        self._fh.flush()
        self.rows += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> MetricsWriter:
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.close()


def read_metrics(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def final_accuracy(df: pd.DataFrame, window: float = 0.1) -> float | None:
    """Mean test accuracy over the rows of the last ``window`` fraction of rounds."""
    acc = df.dropna(subset=["test_acc"])
    if acc.empty:
        return None
    last = int(acc["round"].max())
    cutoff = last - max(1, math.ceil(window * last))
    tail = acc[acc["round"] > cutoff]
    return float(tail["test_acc"].mean())


def last_value(df: pd.DataFrame, column: str) -> float | None:
    values = df[column].dropna()
    return None if values.empty else float(values.iloc[-1])
