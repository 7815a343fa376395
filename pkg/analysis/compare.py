"""
Run comparison.

Loads per-run metrics CSVs and produces a Pandas DataFrame with one row per
(strategy, seed): final accuracy, last lambda1, total bits, and the rounds
and bits needed to reach the reference run's final accuracy.

Accuracy is smoothed with a trailing mean over 10 evaluations before the
target is searched for. The reference row itself is credited with its full
length, so it always reads T rounds at 1.00x. Runs that never reach the
target get "-".
"""
from __future__ import annotations

import numbers
from collections.abc import Sequence
from pathlib import Path

import pandas as pd
from rich.console import Console
from rich.table import Table

from analysis.metrics import final_accuracy, last_value, read_metrics
from simulation.shared.errors import ConfigurationError

SMOOTHING_WINDOW = 10
NOT_REACHED = "-"
REQUIRED_COLUMNS = {"round", "strategy", "seed", "test_acc", "bits_cum"}


def resolve_metric_paths(paths: Sequence[str | Path]) -> list[Path]:
    """Accept metrics files or directories containing */seed-*/metrics.csv."""
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.rglob("metrics.csv")))
        elif p.exists():
            out.append(p)
        else:
            raise ConfigurationError(f"metrics path not found: {p}")
    if not out:
        raise ConfigurationError("no metrics files to compare")
    return out


def smoothed_accuracy(df: pd.DataFrame, window: int = SMOOTHING_WINDOW) -> pd.Series:
    return df["test_acc"].rolling(window, min_periods=1).mean()


def rounds_to_target(
    df: pd.DataFrame, target: float, window: int = SMOOTHING_WINDOW
) -> tuple[int, int] | None:
    """(round, bits_cum) of the first evaluation whose smoothed accuracy reaches ``target``."""
    smooth = smoothed_accuracy(df, window)
    hits = df.loc[smooth >= target]
    if hits.empty:
        return None
    first = hits.iloc[0]
    return int(first["round"]), int(first["bits_cum"])


def compare_runs(
    paths: Sequence[str | Path],
    reference: str = "FedAvg",
    window: int = SMOOTHING_WINDOW,
    final_window: float = 0.1,
) -> pd.DataFrame:
    """Comparison table for the given metrics files."""
    runs: list[tuple[Path, pd.DataFrame]] = []
    for path in resolve_metric_paths(paths):
        df = read_metrics(path)
        if df.empty:
            continue
        missing = REQUIRED_COLUMNS - set(df.columns)
        if missing:
            raise ConfigurationError(f"{path}: missing metric columns {sorted(missing)}")
        runs.append((path, df.sort_values("round").reset_index(drop=True)))
    if not runs:
        raise ConfigurationError("every metrics file is empty")

    def identity(df: pd.DataFrame) -> tuple[str, int]:
        return str(df["strategy"].iloc[0]), int(df["seed"].iloc[0])

    refs = {identity(df)[1]: (path, df) for path, df in runs if identity(df)[0] == reference}
    fallback = next(iter(refs.values()), runs[0])

    rows = []
    for path, df in runs:
        strategy, seed = identity(df)
        ref_path, ref_df = refs.get(seed, fallback)
        target = float(smoothed_accuracy(ref_df, window).iloc[-1])
        ref_rounds = int(ref_df["round"].iloc[-1])

        if path == ref_path:
            hit: tuple[int, int] | None = (ref_rounds, int(df["bits_cum"].iloc[-1]))
        else:
            hit = rounds_to_target(df, target, window)

        rows.append(
            {
                "strategy": strategy,
                "seed": seed,
                "rounds": int(df["round"].iloc[-1]),
                "final_acc": final_accuracy(df, final_window),
                "lambda1": last_value(df, "lambda1") if "lambda1" in df else None,
                "bits_total": int(df["bits_cum"].iloc[-1]),
                "target_acc": target,
                "rounds_to_target": hit[0] if hit else NOT_REACHED,
                "cost_bits": hit[1] if hit else NOT_REACHED,
                "speedup": ref_rounds / hit[0] if hit else NOT_REACHED,
            }
        )

    return pd.DataFrame(rows).sort_values(["seed", "strategy"]).reset_index(drop=True)


def print_comparison(df: pd.DataFrame, console: Console | None = None) -> None:
    """Print the comparison DataFrame as a Rich table."""
    console = console or Console()
    table = Table(title="Strategy Comparison", show_lines=True)

    for col in df.columns:
        table.add_column(col, justify="left" if col == "strategy" else "right")

    for _, row in df.iterrows():
        cells = []
        for col in df.columns:
            val = row[col]
            if val is None or (isinstance(val, float) and pd.isna(val)):
                cells.append("")
            elif col == "speedup" and isinstance(val, float):
                cells.append(f"{val:.2f}x")
            elif col in ("bits_total", "cost_bits") and isinstance(val, numbers.Real):
                cells.append(f"{float(val):.3e}")
            elif isinstance(val, float):
                cells.append(f"{val:.4f}")
            else:
                cells.append(str(val))
        table.add_row(*cells)

    console.print(table)


if __name__ == "__main__":
    import sys

    df = compare_runs(sys.argv[1:] or ["results"])
    print_comparison(df)
