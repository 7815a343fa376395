"""
Communication ledger claim.

FedGloSS and FedSAM transmit exactly as many bits as FedAvg over a run;
NaiveFedGloSS transmits exactly twice as many. Unlike the other claims this
one must hold for every seed.
"""
from __future__ import annotations

from analysis.run_experiment import SweepResult
from claims import ClaimResult

SCENARIO_NAME = "communication_ledger"


def evaluate(sweep: SweepResult) -> ClaimResult:
    per_seed: dict[int, dict[str, int]] = {}
    for seed in sorted({j.seed for j in sweep.jobs}):
        per_seed[seed] = {
            name: sweep.job(name, seed).bits_total
            for name in ("FedAvg", "FedSAM", "FedGloSS", "NaiveFedGloSS")
        }

    ok = {
        seed: bits["FedGloSS"] == bits["FedAvg"] == bits["FedSAM"]
        and bits["NaiveFedGloSS"] == 2 * bits["FedAvg"]
        for seed, bits in per_seed.items()
    }
    passed = bool(ok) and all(ok.values())
    ratios = {
        seed: bits["NaiveFedGloSS"] / bits["FedAvg"] if bits["FedAvg"] else None
        for seed, bits in per_seed.items()
    }
    return ClaimResult(
        claim_name=SCENARIO_NAME,
        expected="FedGloSS = FedSAM = FedAvg bits, NaiveFedGloSS = 2x",
        actual=f"naive/fedavg ratios {ratios}",
        passed=passed,
        seeds_passed=sum(ok.values()),
        seeds_total=len(ok),
        details={"bits": per_seed},
    )
