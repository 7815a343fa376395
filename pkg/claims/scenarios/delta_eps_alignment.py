"""
Perturbation-alignment claim.

Under FedGloSS the distance between consecutive normalised pseudo-gradients
(delta_eps) shrinks over training, and ADMM makes it smaller than the same
strategy run without ADMM.

Checked per seed:
  1. mean delta_eps over the last 20% of rounds < mean over the first 20%
  2. late-phase mean with ADMM < late-phase mean of the no-ADMM ablation
"""
from __future__ import annotations

import pandas as pd

from analysis.run_experiment import SweepResult
from claims import ClaimResult, majority

SCENARIO_NAME = "delta_eps_alignment"
PHASE_FRACTION = 0.2
WITH_ADMM = "FedGloSS"
WITHOUT_ADMM = "FedGloSS-noADMM"


def phase_means(metrics: pd.DataFrame, fraction: float = PHASE_FRACTION) -> tuple[float, float]:
    """(early, late) mean delta_eps over the first and last ``fraction`` of rounds."""
    last = int(metrics["round"].max())
    span = max(1, int(round(fraction * last)))
    eps = metrics.dropna(subset=["delta_eps"])
    early = eps[eps["round"] <= span]["delta_eps"].mean()
    late = eps[eps["round"] > last - span]["delta_eps"].mean()
    return float(early), float(late)


def evaluate(sweep: SweepResult) -> ClaimResult:
    ok: dict[int, bool] = {}
    details: dict[int, dict[str, float]] = {}
    for seed in sorted({j.seed for j in sweep.jobs}):
        admm, plain = sweep.job(WITH_ADMM, seed), sweep.job(WITHOUT_ADMM, seed)
        if admm.status != "completed" or plain.status != "completed":
            ok[seed] = False
            continue
        early, late = phase_means(pd.read_csv(admm.metrics_path))
        _, late_plain = phase_means(pd.read_csv(plain.metrics_path))
        details[seed] = {"early": early, "late": late, "late_no_admm": late_plain}
        ok[seed] = late < early and late < late_plain

    passed, hits = majority(ok)
    return ClaimResult(
        claim_name=SCENARIO_NAME,
        expected="late < early and ADMM < no-ADMM",
        actual=f"{hits}/{len(ok)} seeds",
        passed=passed,
        seeds_passed=hits,
        seeds_total=len(ok),
        details={"delta_eps": details},
    )
