"""
Same-basin claim.

Along gamma * w_FedGloSS + (1 - gamma) * w_Naive, the largest train loss
strictly between the two models stays within 0.1 of the larger endpoint
loss, i.e. there is no barrier separating the two solutions.
"""
from __future__ import annotations

import pandas as pd

from analysis.run_experiment import SweepResult
from claims import ClaimResult, majority

SCENARIO_NAME = "same_basin"
BARRIER_TOLERANCE = 0.1
PAIR = ("FedGloSS", "NaiveFedGloSS")


def barrier(curve: pd.DataFrame) -> float:
    """Max interior loss minus max endpoint loss."""
    endpoints = curve[curve["gamma"].isin([0.0, 1.0])]["loss"].max()
    interior = curve[(curve["gamma"] > 0.0) & (curve["gamma"] < 1.0)]["loss"].max()
    return float(interior - endpoints)


def evaluate(sweep: SweepResult) -> ClaimResult:
    ok: dict[int, bool] = {}
    barriers: dict[int, float] = {}
    for seed in sorted({j.seed for j in sweep.jobs}):
        path = sweep.out_dir / "interpolation" / f"{PAIR[0]}__{PAIR[1]}__seed-{seed}.csv"
        if not path.exists():
            ok[seed] = False
            continue
        barriers[seed] = barrier(pd.read_csv(path))
        ok[seed] = barriers[seed] <= BARRIER_TOLERANCE

    passed, hits = majority(ok)
    return ClaimResult(
        claim_name=SCENARIO_NAME,
        expected=f"interior barrier <= {BARRIER_TOLERANCE}",
        actual=f"barriers {barriers}",
        passed=passed,
        seeds_passed=hits,
        seeds_total=len(ok),
    )
