"""
Server side of the simulation: state, aggregation primitives and the round loop.
"""
from simulation.federation.rounds import FederatedRun, RoundContext, RoundOutcome, RoundReport, run_round
from simulation.federation.state import CommLedger, ServerState

__all__ = [
    "CommLedger",
    "FederatedRun",
    "RoundContext",
    "RoundOutcome",
    "RoundReport",
    "ServerState",
    "run_round",
]
