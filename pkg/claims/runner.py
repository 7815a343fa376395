"""
Claim runner.

Runs the desk sweep once (claims/desk_alpha0.yaml by default), evaluates
every claim scenario against it, writes JSON to <out>/claims.json and prints
a Rich summary table.

  python -m claims.runner [config.yaml] [--out DIR] [--threads N]
"""
from __future__ import annotations

import argparse
import asyncio
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from rich.console import Console
from rich.table import Table

from analysis.config import load_config
from analysis.run_experiment import SweepResult, run_sweep
from claims import ClaimResult
from claims.scenarios import (
    accuracy_ordering,
    communication_ledger,
    delta_eps_alignment,
    flatness_ordering,
    norm_stabilization,
    same_basin,
)
from simulation.shared.logs import configure_logging
from simulation.shared.settings import get_settings

SCENARIO_MODULES = [
    communication_ledger,
    delta_eps_alignment,
    flatness_ordering,
    accuracy_ordering,
    same_basin,
    norm_stabilization,
]

DEFAULT_CONFIG = Path(__file__).parent / "desk_alpha0.yaml"


def evaluate_all(sweep: SweepResult) -> list[ClaimResult]:
    """Evaluate every scenario; a scenario that raises is recorded as failed."""
    results: list[ClaimResult] = []
    for module in SCENARIO_MODULES:
        try:
            result = module.evaluate(sweep)
        except Exception as exc:
            result = ClaimResult(
                claim_name=getattr(module, "SCENARIO_NAME", None) or module.__name__,
                expected="no exception",
                actual="runner exception",
                passed=False,
                error=str(exc),
            )
        results.append(result)
    return results


async def run_all(config_path: str | Path, out_dir: str | Path, threads: int = 1) -> list[ClaimResult]:
    config = load_config(config_path)
    sweep = await run_sweep(config, Path(out_dir) / "sweep", threads=threads, show=False)
    return evaluate_all(sweep)


def save_results(results: list[ClaimResult], out_dir: str | Path) -> Path:
    """Serialise results to JSON."""
    output_path = Path(out_dir) / "claims.json"
    output_path.parent.mkdir(parents=True, exist_ok=True)
    serialisable = [
        {
            "claim_name": r.claim_name,
            "expected": r.expected,
            "actual": r.actual,
            "passed": r.passed,
            "seeds_passed": r.seeds_passed,
            "seeds_total": r.seeds_total,
            "details": r.details,
            "error": r.error,
        }
        for r in results
    ]
    with open(output_path, "w") as fh:
        json.dump(
            {"run_at": datetime.now(timezone.utc).isoformat(), "results": serialisable},
            fh,
            indent=2,
            default=str,
        )
    return output_path


def print_table(results: list[ClaimResult], console: Console | None = None) -> None:
    """Print Rich summary table."""
    console = console or Console()
    table = Table(title="Claim Results", show_lines=True)
    table.add_column("Claim", style="cyan", no_wrap=True)
    table.add_column("Expected", style="white")
    table.add_column("Actual", style="white")
    table.add_column("Seeds", justify="center")
    table.add_column("Pass/Fail", justify="center")

    for r in results:
        status = "[green]✓ PASS[/green]" if r.passed else "[red]✗ FAIL[/red]"
        table.add_row(
            r.claim_name,
            r.expected,
            r.actual if not r.error else r.error,
            f"{r.seeds_passed}/{r.seeds_total}",
            status,
        )

    console.print(table)
    total = len(results)
    passed = sum(1 for r in results if r.passed)
    console.print(f"\n[bold]Total: {total}  Passed: {passed}  Failed: {total - passed}[/bold]")


async def main(argv: list[str] | None = None) -> int:
    settings = get_settings()
    configure_logging(settings.log_level, settings.log_json)
    parser = argparse.ArgumentParser(prog="claims")
    parser.add_argument("config", nargs="?", default=str(DEFAULT_CONFIG))
    parser.add_argument("--out", default=str(Path(settings.output_root) / "claims"))
    parser.add_argument("--threads", type=int, default=settings.threads)
    args = parser.parse_args(argv)

    results = await run_all(args.config, args.out, args.threads)
    path = save_results(results, args.out)
    print_table(results)
    print(f"\nResults written to {path}")
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
