"""
Command-line interface.

  python -m analysis.cli run <config.yaml> [--seed S] [--out DIR] [--threads N]
  python -m analysis.cli compare <metrics.csv|run dir>... [--reference FedAvg]
  python -m analysis.cli landscape <snapshot.json> [--resolution R] [--on train|test]
  python -m analysis.cli eigs <snapshot.json>
  python -m analysis.cli partition-stats <config.yaml> [--seed S]

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 when the only failures are diverged runs.
"""
from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path

import structlog
from rich.console import Console
from rich.table import Table

from analysis.compare import compare_runs, print_comparison
from analysis.config import load_config, parse_config
from analysis.run_experiment import (
    EXIT_DIVERGED,
    EXIT_FAILED,
    EXIT_OK,
    PreparedData,
    prepare_data,
    run_experiment,
)
from simulation.federation.state import from_snapshot, load_snapshot
from simulation.flatness import (
    landscape_2d,
    local_global_eigs,
    mlp_objectives,
    write_eigs_csv,
    write_landscape_csv,
)
from simulation.shared.datagen import average_classes_per_client, partition_stats
from simulation.shared.errors import ConfigurationError, DivergenceError
from simulation.shared.logs import configure_logging
from simulation.shared.schemas import ExperimentConfig, ServerSnapshot
from simulation.shared.seeding import derive_seed
from simulation.shared.settings import get_settings

logger = structlog.get_logger(__name__)

EXIT_CONFIG = 2

console = Console()


def _snapshot_context(snap: ServerSnapshot) -> tuple[ExperimentConfig, PreparedData]:
    if snap.config is None:
        raise ConfigurationError("snapshot carries no experiment config; cannot rebuild its data")
    config = parse_config(snap.config, "snapshot")
    data = prepare_data(config, snap.seed)
    if data.arch != snap.arch.to_arch():
        raise ConfigurationError("snapshot architecture does not match its config")
    return config, data


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    settings = get_settings()
    config = load_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"seeds": [args.seed]})
    out = Path(args.out or config.output_dir or Path(settings.output_root) / config.name)
    threads = args.threads or settings.threads
    return run_experiment(config, out, threads=threads, client_workers=settings.client_workers)


def cmd_compare(args: argparse.Namespace) -> int:
    df = compare_runs(args.runs, reference=args.reference)
    print_comparison(df, console)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(args.out, index=False)
    return EXIT_OK


def cmd_landscape(args: argparse.Namespace) -> int:
    snap = load_snapshot(args.snapshot)
    config, data = _snapshot_context(snap)
    state, _, _ = from_snapshot(snap)
    dataset = data.train if (args.on or config.diagnostics.landscape_on) == "train" else data.test
    seed = args.seed if args.seed is not None else derive_seed(snap.seed, "landscape")
    grid = landscape_2d(
        state.w,
        data.arch,
        dataset,
        resolution=args.resolution or config.diagnostics.landscape_resolution,
        extent=args.extent or config.diagnostics.landscape_extent,
        seed=seed,
    )
    out = Path(args.out or Path(args.snapshot).with_name(f"landscape_r{snap.round}.csv"))
    write_landscape_csv(grid, out)
    console.print(f"  [green]✓[/green] landscape written to [cyan]{out}[/cyan]")
    return EXIT_OK


def cmd_eigs(args: argparse.Namespace) -> int:
    snap = load_snapshot(args.snapshot)
    config, data = _snapshot_context(snap)
    _, _, local_models = from_snapshot(snap)
    if not local_models:
        raise ConfigurationError("snapshot holds no local models")
    shards = {k: data.shards[k] for k in local_models}
    local_objs, global_obj = mlp_objectives(data.arch, shards, data.train)
    dominant = {s.client: s.dominant_class for s in partition_stats(data.partition, data.train)}
    rows = local_global_eigs(
        local_models,
        local_objs,
        global_obj,
        max_iter=config.diagnostics.lambda1_max_iter,
        tol=config.diagnostics.lambda1_tol,
        seed=derive_seed(snap.seed, "lambda1"),
        dominant_classes=dominant,
    )
    table = Table(title=f"Local vs global lambda1 ({snap.strategy}, round {snap.round})")
    for col in ("Client", "Class", "λ1 local", "λ1 global"):
        table.add_column(col, justify="right")
    for r in rows:
        table.add_row(str(r.client), str(r.dominant_class), f"{r.lambda1_local:.4f}", f"{r.lambda1_global:.4f}")
    console.print(table)
    out = Path(args.out or Path(args.snapshot).with_name("eigs.csv"))
    write_eigs_csv(rows, out)
    return EXIT_OK


def cmd_partition_stats(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.seeds[0]
    data = prepare_data(config, seed)
    table = Table(title=f"Partition (C={config.partition.num_clients}, alpha={config.partition.alpha})")
    for col in ("Client", "Samples", "Classes", "Entropy", "Dominant"):
        table.add_column(col, justify="right")
    for s in partition_stats(data.partition, data.train):
        table.add_row(str(s.client), str(s.size), str(s.classes_seen), f"{s.entropy:.3f}", str(s.dominant_class))
    console.print(table)
    console.print(
        f"\n[bold]Average classes per client: "
        f"{average_classes_per_client(data.partition, data.train):.2f}  "
        f"Unassigned: {data.partition.unassigned.size}[/bold]"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedlab", description="Federated-learning simulation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a strategy sweep")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="run a single master seed")
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare finished runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("--reference", default="FedAvg")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("landscape", help="2D loss landscape around a snapshot's model")
    p.add_argument("snapshot")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--extent", type=float, default=None)
    p.add_argument("--on", choices=["train", "test"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("eigs", help="local vs global lambda1 of a snapshot's local models")
    p.add_argument("snapshot")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eigs)

    p = sub.add_parser("partition-stats", help="per-client label statistics")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_partition_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    settings = get_settings()
    configure_logging(settings.log_level, settings.log_json)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        console.print(f"[red]configuration error:[/red] {exc}")
        return EXIT_CONFIG
    except DivergenceError as exc:
        console.print(f"[yellow]diverged:[/yellow] {exc}")
        return EXIT_DIVERGED
    except Exception as exc:
        logger.error("command_failed", command=args.command, error=str(exc))
        console.print(f"[red]failed:[/red] {exc}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
