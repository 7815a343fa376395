"""
Experiment orchestrator.

Runs every (strategy, seed) job of a config and compiles the results:
  1. Prepare data per seed (dataset, partition, shards)
  2. Run jobs concurrently on worker threads, bounded by ``threads``
  3. Interpolate between configured model pairs
  4. Write summary.json (per-job records, per-strategy mean and sd, divergences)
  5. Build and print the comparison table

Output layout under the sweep directory:

  config.yaml
  summary.json
  comparison.csv
  <strategy>/seed-<s>/metrics.csv
  <strategy>/seed-<s>/snapshot.json
  <strategy>/seed-<s>/eigs.csv              (diagnostics.local_eigs)
  <strategy>/seed-<s>/landscape_r<t>.csv    (diagnostics.landscape_rounds)
  interpolation/<a>__<b>__seed-<s>.csv      (diagnostics.interpolate)
"""
from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import structlog
from rich.console import Console

from analysis.compare import compare_runs, print_comparison
from analysis.config import config_to_dict, save_config
from analysis.metrics import (
    MetricsRecord,
    MetricsWriter,
    evaluate,
    final_accuracy,
    read_metrics,
    should_record,
)
from simulation.federation.rounds import FederatedRun, RoundContext, RoundReport
from simulation.federation.state import save_snapshot
from simulation.flatness import (
    interpolate_1d,
    landscape_2d,
    local_global_eigs,
    mlp_objectives,
    power_iteration_lambda1,
    write_eigs_csv,
    write_interpolation_csv,
    write_landscape_csv,
)
from simulation.shared.datagen import (
    DataSplit,
    Dataset,
    Partition,
    load_dataset_csv,
    make_synthetic,
    partition_dirichlet,
    partition_stats,
    split_train_test,
)
from simulation.shared.errors import ConfigurationError, DivergenceError
from simulation.shared.numcore import ModelArch, ParamVector, init_params
from simulation.shared.schemas import CsvDatasetSpec, ExperimentConfig, StrategyConfig
from simulation.shared.seeding import derive_seed

logger = structlog.get_logger(__name__)

console = Console()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_DIVERGED = 3


@dataclass(frozen=True)
class PreparedData:
    split: DataSplit
    partition: Partition
    arch: ModelArch
    shards: list[Dataset]

    @property
    def train(self) -> Dataset:
        return self.split.train

    @property
    def test(self) -> Dataset:
        return self.split.test


@dataclass
class JobResult:
    strategy: str
    kind: str
    seed: int
    status: str  # completed | diverged | failed
    rounds_completed: int = 0
    diverged_at: int | None = None
    final_acc: float | None = None
    final_lambda1: float | None = None
    final_w_norm: float | None = None
    bits_total: int = 0
    grad_evals: int = 0
    job_dir: str = ""
    metrics_path: str | None = None
    snapshot_path: str | None = None
    eigs_path: str | None = None
    landscape_paths: list[str] = field(default_factory=list)
    error: str | None = None
    final_weights: ParamVector | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "kind": self.kind,
            "seed": self.seed,
            "status": self.status,
            "rounds_completed": self.rounds_completed,
            "diverged_at": self.diverged_at,
            "final_acc": self.final_acc,
            "final_lambda1": self.final_lambda1,
            "final_w_norm": self.final_w_norm,
            "bits_total": self.bits_total,
            "grad_evals": self.grad_evals,
            "metrics_path": self.metrics_path,
            "snapshot_path": self.snapshot_path,
            "eigs_path": self.eigs_path,
            "landscape_paths": self.landscape_paths,
            "error": self.error,
        }


@dataclass
class SweepResult:
    out_dir: Path
    jobs: list[JobResult]
    data: dict[int, PreparedData] = field(repr=False)
    summary_path: Path | None = None
    comparison: pd.DataFrame | None = None
    interpolation_paths: list[Path] = field(default_factory=list)

    def job(self, strategy: str, seed: int) -> JobResult:
        for j in self.jobs:
            if j.strategy == strategy and j.seed == seed:
                return j
        raise KeyError((strategy, seed))

    @property
    def exit_code(self) -> int:
        statuses = {j.status for j in self.jobs}
        if "failed" in statuses:
            return EXIT_FAILED
        if "diverged" in statuses:
            return EXIT_DIVERGED
        return EXIT_OK


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def prepare_data(config: ExperimentConfig, seed: int) -> PreparedData:
    """Dataset, partition and shards for one master seed."""
    spec = config.dataset
    if isinstance(spec, CsvDatasetSpec):
        full = load_dataset_csv(spec.path, spec.num_classes)
        if spec.test_path:
            split = DataSplit(full, load_dataset_csv(spec.test_path, full.num_classes))
        else:
            split = split_train_test(full, derive_seed(seed, "split"))
    else:
        split = make_synthetic(
            spec.num_classes,
            spec.per_class,
            spec.input_dim,
            spec.class_sep,
            spec.noise_sd,
            derive_seed(seed, "dataset"),
        )

    p = config.partition
    partition_seed = p.seed if p.seed is not None else derive_seed(seed, "partition")
    partition = partition_dirichlet(split.train, p.num_clients, p.alpha, partition_seed)
    arch = config.arch.to_arch(split.train.input_dim, split.train.num_classes)
    shards = [split.train.subset(idx) for idx in partition.client_indices]
    return PreparedData(split=split, partition=partition, arch=arch, shards=shards)


def job_dir_for(out_dir: Path, strategy: str, seed: int) -> Path:
    return out_dir / strategy / f"seed-{seed}"


# ---------------------------------------------------------------------------
# One job
# ---------------------------------------------------------------------------


def run_job(
    config: ExperimentConfig,
    strategy: StrategyConfig,
    seed: int,
    out_dir: Path,
    data: PreparedData | None = None,
    client_workers: int = 1,
) -> JobResult:
    """Train one strategy for one seed and write its per-job outputs."""
    data = data or prepare_data(config, seed)
    diag = config.diagnostics
    total = config.rounds
    job_dir = job_dir_for(out_dir, strategy.label, seed)
    job_dir.mkdir(parents=True, exist_ok=True)

    ctx = RoundContext(
        arch=data.arch,
        shards=data.shards,
        strategy=strategy,
        hyper=strategy.resolve_local(config.local),
        clients_per_round=config.clients_per_round,
        seed=seed,
        max_workers=client_workers,
    )
    run = FederatedRun(ctx, init_params(data.arch, derive_seed(seed, "init")))
    result = JobResult(strategy=strategy.label, kind=strategy.kind.value, seed=seed, status="completed")
    result.job_dir = str(job_dir)
    landscape_set = set(diag.landscape_rounds)
    landscape_data = data.train if diag.landscape_on == "train" else data.test
    lambda1_seed = derive_seed(seed, "lambda1")

    logger.info("job_started", strategy=strategy.label, seed=seed, rounds=total)
    metrics_path = job_dir / "metrics.csv"
    with MetricsWriter(metrics_path) as writer:

        def on_round(report: RoundReport) -> None:
            t = report.round
            w = run.w
            result.grad_evals += report.grad_evals
            if should_record(t, config.eval_every, total):
                ev = evaluate(w, data.arch, data.train, data.test)
                lam = None
                if (diag.lambda1_every and t % diag.lambda1_every == 0) or (
                    diag.final_lambda1 and t == total
                ):
                    lam = power_iteration_lambda1(
                        w,
                        data.arch,
                        data.train,
                        max_iter=diag.lambda1_max_iter,
                        tol=diag.lambda1_tol,
                        seed=lambda1_seed,
                        batch_size=diag.lambda1_batch_size,
                    ).lambda1
                writer.write(
                    MetricsRecord(
                        round=t,
                        strategy=strategy.label,
                        seed=seed,
                        train_loss=ev.train_loss,
                        test_loss=ev.test_loss,
                        test_acc=ev.test_acc,
                        lambda1=lam,
                        delta_eps=report.delta_eps if diag.delta_eps else None,
                        w_norm=report.w_norm,
                        bits_cum=run.state.ledger.total,
                    )
                )
            if t in landscape_set:
                grid = landscape_2d(
                    w,
                    data.arch,
                    landscape_data,
                    resolution=diag.landscape_resolution,
                    extent=diag.landscape_extent,
                    seed=derive_seed(seed, "landscape"),
                )
                result.landscape_paths.append(str(write_landscape_csv(grid, job_dir / f"landscape_r{t}.csv")))

        try:
            run.run(total, on_round=on_round)
        except DivergenceError as exc:
            result.status = "diverged"
            result.diverged_at = exc.round
            logger.warning("job_diverged", strategy=strategy.label, seed=seed, round=exc.round, reason=exc.reason)

    result.rounds_completed = run.state.round
    result.metrics_path = str(metrics_path)
    result.bits_total = run.state.ledger.total
    result.final_w_norm = float(np.linalg.norm(run.w))
    result.final_weights = run.w.copy()

    df = read_metrics(metrics_path)
    if not df.empty:
        result.final_acc = final_accuracy(df, config.final_window)
        lam = df["lambda1"].dropna()
        result.final_lambda1 = float(lam.iloc[-1]) if not lam.empty else None

    snapshot = run.snapshot(config=config_to_dict(config))
    result.snapshot_path = str(save_snapshot(snapshot, job_dir / "snapshot.json"))

    if diag.local_eigs and result.status == "completed" and run.local_models:
        shards = {k: data.shards[k] for k in run.local_models}
        local_objs, global_obj = mlp_objectives(data.arch, shards, data.train)
        dominant = {s.client: s.dominant_class for s in partition_stats(data.partition, data.train)}
        rows = local_global_eigs(
            run.local_models,
            local_objs,
            global_obj,
            max_iter=diag.lambda1_max_iter,
            tol=diag.lambda1_tol,
            seed=lambda1_seed,
            dominant_classes=dominant,
        )
        result.eigs_path = str(write_eigs_csv(rows, job_dir / "eigs.csv"))

    logger.info(
        "job_finished",
        strategy=strategy.label,
        seed=seed,
        status=result.status,
        final_acc=result.final_acc,
        bits=result.bits_total,
    )
    return result


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def _aggregate(jobs: list[JobResult]) -> list[dict[str, Any]]:
    df = pd.DataFrame([j.to_dict() for j in jobs if j.status == "completed"])
    if df.empty:
        return []
    cols = ["final_acc", "final_lambda1", "final_w_norm", "bits_total"]
    grouped = df.groupby("strategy", sort=False)[cols].agg(["mean", "std"])
    out = []
    for strategy, row in grouped.iterrows():
        entry: dict[str, Any] = {"strategy": strategy, "seeds": int((df["strategy"] == strategy).sum())}
        for col in cols:
            mean, sd = row[(col, "mean")], row[(col, "std")]
            entry[col] = {
                "mean": None if pd.isna(mean) else float(mean),
                "sd": None if pd.isna(sd) else float(sd),
            }
        out.append(entry)
    return out


def _interpolate_pairs(config: ExperimentConfig, sweep: SweepResult) -> list[Path]:
    paths: list[Path] = []
    for a, b in config.diagnostics.interpolate:
        for seed in config.seeds:
            ja, jb = sweep.job(a, seed), sweep.job(b, seed)
            if ja.status != "completed" or jb.status != "completed":
                logger.info("interpolation_skipped", pair=f"{a}/{b}", seed=seed)
                continue
            data = sweep.data[seed]
            points = interpolate_1d(
                ja.final_weights, jb.final_weights, data.arch, data.train, config.diagnostics.interpolation_points
            )
            paths.append(
                write_interpolation_csv(points, sweep.out_dir / "interpolation" / f"{a}__{b}__seed-{seed}.csv")
            )
    return paths


def _write_summary(config: ExperimentConfig, sweep: SweepResult) -> Path:
    summary = {
        "run_at": datetime.now(timezone.utc).isoformat(),
        "name": config.name,
        "rounds": config.rounds,
        "seeds": config.seeds,
        "jobs": [j.to_dict() for j in sweep.jobs],
        "strategies": _aggregate(sweep.jobs),
        "divergences": [
            {"strategy": j.strategy, "seed": j.seed, "round": j.diverged_at}
            for j in sweep.jobs
            if j.status == "diverged"
        ],
        "interpolation": [str(p) for p in sweep.interpolation_paths],
    }
    path = sweep.out_dir / "summary.json"
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
    return path


async def run_sweep(
    config: ExperimentConfig,
    out_dir: str | Path,
    threads: int = 1,
    client_workers: int = 1,
    show: bool = True,
) -> SweepResult:
    """Execute every (strategy, seed) job and compile the sweep outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if show:
        console.rule(f"[bold blue]Sweep {config.name}")

    # ── Step 1: Data ─────────────────────────────────────────────────────────
    data = {seed: prepare_data(config, seed) for seed in config.seeds}
    save_config(config, out / "config.yaml")

    # ── Step 2: Jobs ─────────────────────────────────────────────────────────
    semaphore = asyncio.Semaphore(max(1, threads))

    async def one(strategy: StrategyConfig, seed: int) -> JobResult:
        async with semaphore:
            try:
                job = await asyncio.to_thread(
                    run_job, config, strategy, seed, out, data[seed], client_workers
                )
            except Exception as exc:
                logger.error("job_failed", strategy=strategy.label, seed=seed, error=str(exc))
                job = JobResult(
                    strategy=strategy.label,
                    kind=strategy.kind.value,
                    seed=seed,
                    status="failed",
                    error=str(exc),
                )
        if show:
            marker = {"completed": "[green]✓[/green]", "diverged": "[yellow]↯[/yellow]"}.get(
                job.status, "[red]✗[/red]"
            )
            console.print(f"  {marker} {job.strategy:<20} seed={seed} acc={job.final_acc}")
        return job

    jobs = await asyncio.gather(*[one(s, seed) for seed in config.seeds for s in config.strategies])
    sweep = SweepResult(out_dir=out, jobs=list(jobs), data=data)

    # ── Step 3: Interpolation ────────────────────────────────────────────────
    sweep.interpolation_paths = _interpolate_pairs(config, sweep)

    # ── Step 4: Summary ──────────────────────────────────────────────────────
    sweep.summary_path = _write_summary(config, sweep)

    # ── Step 5: Comparison ───────────────────────────────────────────────────
    metric_paths = [j.metrics_path for j in sweep.jobs if j.metrics_path and j.rounds_completed > 0]
    try:
        sweep.comparison = compare_runs(metric_paths, final_window=config.final_window) if metric_paths else None
    except ConfigurationError as exc:
        logger.warning("comparison_skipped", reason=str(exc))
    if sweep.comparison is not None:
        sweep.comparison.to_csv(out / "comparison.csv", index=False)
        if show:
            print_comparison(sweep.comparison, console)

    logger.info("sweep_finished", name=config.name, jobs=len(sweep.jobs), exit_code=sweep.exit_code)
    if show:
        console.rule("[bold green]Sweep Complete")
    return sweep


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path,
    threads: int = 1,
    client_workers: int = 1,
) -> int:
    """Run a full sweep and return the process exit code."""
    sweep = asyncio.run(run_sweep(config, out_dir, threads, client_workers))
    return sweep.exit_code
