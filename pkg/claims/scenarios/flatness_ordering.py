"""
Flatness claim: lambda1(FedGloSS) < lambda1(FedSAM) < lambda1(FedAvg) at the
final round, on the global training set.
"""
from __future__ import annotations

from analysis.run_experiment import SweepResult
from claims import ClaimResult, majority

SCENARIO_NAME = "flatness_ordering"
ORDER = ("FedGloSS", "FedSAM", "FedAvg")


def evaluate(sweep: SweepResult) -> ClaimResult:
    ok: dict[int, bool] = {}
    values: dict[int, dict[str, float | None]] = {}
    for seed in sorted({j.seed for j in sweep.jobs}):
        lam = {name: sweep.job(name, seed).final_lambda1 for name in ORDER}
        values[seed] = lam
        if any(v is None for v in lam.values()):
            ok[seed] = False
            continue
        ok[seed] = lam["FedGloSS"] < lam["FedSAM"] < lam["FedAvg"]

    passed, hits = majority(ok)
    return ClaimResult(
        claim_name=SCENARIO_NAME,
        expected=" < ".join(ORDER),
        actual=f"{hits}/{len(ok)} seeds",
        passed=passed,
        seeds_passed=hits,
        seeds_total=len(ok),
        details={"lambda1": values},
    )
