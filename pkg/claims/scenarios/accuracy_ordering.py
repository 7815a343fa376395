"""
Accuracy claim: final test accuracy FedGloSS >= FedSAM >= FedAvg, with ties
allowed within half a percentage point.
"""
from __future__ import annotations

from analysis.run_experiment import SweepResult
from claims import ClaimResult, majority

SCENARIO_NAME = "accuracy_ordering"
TIE_TOLERANCE = 0.005


def evaluate(sweep: SweepResult) -> ClaimResult:
    ok: dict[int, bool] = {}
    values: dict[int, dict[str, float | None]] = {}
    for seed in sorted({j.seed for j in sweep.jobs}):
        acc = {name: sweep.job(name, seed).final_acc for name in ("FedGloSS", "FedSAM", "FedAvg")}
        values[seed] = acc
        if any(v is None for v in acc.values()):
            ok[seed] = False
            continue
        ok[seed] = (
            acc["FedGloSS"] + TIE_TOLERANCE >= acc["FedSAM"]
            and acc["FedSAM"] + TIE_TOLERANCE >= acc["FedAvg"]
        )

    passed, hits = majority(ok)
    return ClaimResult(
        claim_name=SCENARIO_NAME,
        expected="FedGloSS >= FedSAM >= FedAvg (±0.5 pts)",
        actual=f"{hits}/{len(ok)} seeds",
        passed=passed,
        seeds_passed=hits,
        seeds_total=len(ok),
        details={"final_acc": values},
    )
