"""
Parameter-norm claim.

Final ||w|| under FedGloSS does not exceed FedDyn's. A FedDyn run that
diverged counts in favour of the claim, and must show up as a divergence
record rather than a failed job.
"""
from __future__ import annotations

from analysis.run_experiment import SweepResult
from claims import ClaimResult, majority

SCENARIO_NAME = "norm_stabilization"


def evaluate(sweep: SweepResult) -> ClaimResult:
    ok: dict[int, bool] = {}
    norms: dict[int, dict[str, float | str | None]] = {}
    for seed in sorted({j.seed for j in sweep.jobs}):
        gloss, dyn = sweep.job("FedGloSS", seed), sweep.job("FedDyn", seed)
        norms[seed] = {"FedGloSS": gloss.final_w_norm, "FedDyn": dyn.final_w_norm, "FedDyn_status": dyn.status}
        if gloss.status != "completed" or dyn.status == "failed":
            ok[seed] = False
        elif dyn.status == "diverged":
            ok[seed] = True
        else:
            ok[seed] = gloss.final_w_norm <= dyn.final_w_norm

    passed, hits = majority(ok)
    return ClaimResult(
        claim_name=SCENARIO_NAME,
        expected="||w|| FedGloSS <= FedDyn",
        actual=f"{hits}/{len(ok)} seeds",
        passed=passed,
        seeds_passed=hits,
        seeds_total=len(ok),
        details={"w_norm": norms},
    )
