from __future__ import annotations

from pathlib import Path

import pandas as pd
import pytest
from rich.console import Console

from analysis.compare import NOT_REACHED, compare_runs, print_comparison, rounds_to_target
from analysis.metrics import (
    METRICS_COLUMNS,
    MetricsRecord,
    MetricsWriter,
    expected_rows,
    final_accuracy,
    read_metrics,
    should_record,
)
from simulation.shared.errors import ConfigurationError

BITS_PER_ROUND = 1000


def write_run(root: Path, strategy: str, accs: list[float], seed: int = 0, bits_factor: int = 1) -> Path:
    path = root / strategy / f"seed-{seed}" / "metrics.csv"
    with MetricsWriter(path) as writer:
        for t, acc in enumerate(accs, start=1):
            writer.write(
                MetricsRecord(
                    round=t,
                    strategy=strategy,
                    seed=seed,
                    train_loss=1.0 / t,
                    test_loss=1.0 / t,
                    test_acc=acc,
                    lambda1=None if t < len(accs) else 2.5,
                    delta_eps=None,
                    w_norm=1.0,
                    bits_cum=t * BITS_PER_ROUND * bits_factor,
                )
            )
    return path


def ramp(n: int, final: float) -> list[float]:
    return [final * t / n for t in range(1, n + 1)]


# ---------------------------------------------------------------------------
# Metrics rows
# ---------------------------------------------------------------------------


def test_record_schedule():
    rows = [t for t in range(1, 11) if should_record(t, 4, 10)]
    assert rows == [4, 8, 10]
    assert expected_rows(10, 4) == len(rows)
    assert expected_rows(300, 1) == 300


def test_writer_emits_header_and_blank_optionals(tmp_path):
    path = write_run(tmp_path, "FedAvg", [0.1, 0.2])
    df = read_metrics(path)
    assert list(df.columns) == METRICS_COLUMNS
    assert pd.isna(df["lambda1"].iloc[0])
    assert df["lambda1"].iloc[1] == 2.5
    assert df["delta_eps"].isna().all()


def test_metrics_floats_read_back_exactly(tmp_path):
    accs = [0.1 + 0.2, 1.0 / 3.0, 0.7853981633974483, 2.220446049250313e-16]
    df = read_metrics(write_run(tmp_path, "FedAvg", accs))
    assert df["test_acc"].tolist() == accs
    assert df["train_loss"].tolist() == [1.0 / t for t in range(1, len(accs) + 1)]


def test_final_accuracy_uses_last_window():
    df = pd.DataFrame({"round": range(1, 21), "test_acc": [0.0] * 18 + [0.6, 0.8]})
    assert final_accuracy(df, window=0.1) == pytest.approx(0.7)
    assert final_accuracy(df, window=0.05) == pytest.approx(0.8)


def test_final_accuracy_without_test_rows():
    df = pd.DataFrame({"round": [1, 2], "test_acc": [None, None]})
    assert final_accuracy(df) is None


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


def test_reference_reads_full_length_and_unit_speedup(tmp_path):
    write_run(tmp_path, "FedAvg", ramp(40, 0.6))
    df = compare_runs([tmp_path])
    row = df.iloc[0]
    assert row["rounds_to_target"] == 40
    assert row["speedup"] == 1.0
    assert row["cost_bits"] == 40 * BITS_PER_ROUND


def test_faster_run_gets_speedup(tmp_path):
    write_run(tmp_path, "FedAvg", ramp(40, 0.6))
    write_run(tmp_path, "FedGloSS", [0.8] * 40)
    df = compare_runs([tmp_path]).set_index("strategy")
    assert df.loc["FedGloSS", "rounds_to_target"] == 1
    assert df.loc["FedGloSS", "speedup"] == pytest.approx(40.0)


def test_run_that_never_reaches_target_gets_dash(tmp_path):
    write_run(tmp_path, "FedAvg", ramp(30, 0.6))
    write_run(tmp_path, "FedDyn", [0.1] * 30)
    df = compare_runs([tmp_path]).set_index("strategy")
    assert df.loc["FedDyn", "rounds_to_target"] == NOT_REACHED
    assert df.loc["FedDyn", "cost_bits"] == NOT_REACHED
    assert df.loc["FedDyn", "speedup"] == NOT_REACHED


def test_two_exchange_run_costs_twice_the_bits(tmp_path):
    write_run(tmp_path, "FedAvg", [0.5] * 20)
    write_run(tmp_path, "FedGloSS", [0.5] * 20)
    write_run(tmp_path, "NaiveFedGloSS", [0.5] * 20, bits_factor=2)
    df = compare_runs([tmp_path]).set_index("strategy")
    assert df.loc["NaiveFedGloSS", "bits_total"] == 2 * df.loc["FedGloSS", "bits_total"]
    assert df.loc["NaiveFedGloSS", "cost_bits"] == 2 * df.loc["FedGloSS", "cost_bits"]


def test_reference_is_matched_per_seed(tmp_path):
    write_run(tmp_path, "FedAvg", [0.2] * 10, seed=0)
    write_run(tmp_path, "FedAvg", [0.9] * 10, seed=1)
    write_run(tmp_path, "FedSAM", [0.5] * 10, seed=0)
    write_run(tmp_path, "FedSAM", [0.5] * 10, seed=1)
    df = compare_runs([tmp_path])
    sam = df[df["strategy"] == "FedSAM"].set_index("seed")
    assert sam.loc[0, "rounds_to_target"] == 1
    assert sam.loc[1, "rounds_to_target"] == NOT_REACHED


def test_compare_does_not_touch_inputs(tmp_path):
    path = write_run(tmp_path, "FedAvg", ramp(10, 0.5))
    before = path.read_bytes()
    compare_runs([path])
    assert path.read_bytes() == before


def test_smoothing_delays_a_single_spike():
    df = pd.DataFrame({"round": range(1, 11), "test_acc": [0.0] * 4 + [1.0] + [0.0] * 5, "bits_cum": range(10)})
    assert rounds_to_target(df, 0.5, window=10) is None
    assert rounds_to_target(df, 0.5, window=1) == (5, 4)


def test_missing_path_and_empty_inputs(tmp_path):
    with pytest.raises(ConfigurationError):
        compare_runs([tmp_path / "absent.csv"])
    empty = tmp_path / "metrics.csv"
    empty.write_text(",".join(METRICS_COLUMNS) + "\n")
    with pytest.raises(ConfigurationError):
        compare_runs([empty])


def test_print_comparison_renders(tmp_path):
    write_run(tmp_path, "FedAvg", ramp(10, 0.5))
    write_run(tmp_path, "FedDyn", [0.0] * 10)
    console = Console(record=True, width=200)
    print_comparison(compare_runs([tmp_path]), console)
    text = console.export_text()
    assert "FedDyn" in text
    assert "1.00x" in text
