"""
Exception hierarchy for the simulation lab.

Every error raised on purpose by the library derives from LabError so the
CLI can map failures onto exit codes:

  - ConfigurationError  -> exit code 2
  - DivergenceError     -> exit code 3 (when it is the only failure)
  - anything else       -> exit code 1
"""
from __future__ import annotations


class LabError(Exception):
    """Base class for all simulation-lab errors."""


class ConfigurationError(LabError):
    """Invalid configuration or arguments detected before computation starts."""

    def __init__(self, message: str, violations: list[str] | None = None) -> None:
        self.violations: list[str] = list(violations or [])
        if self.violations:
            message = message + "\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(message)


class InvalidArgumentError(LabError, ValueError):
    """An operation received an argument outside its domain."""


class DivergenceError(LabError):
    """Global parameters became non-finite or exploded past the norm limit."""

    def __init__(self, strategy: str, round: int, w_norm: float, reason: str) -> None:
        self.strategy = strategy
        self.round = round
        self.w_norm = w_norm
        self.reason = reason
        super().__init__(
            f"{strategy} diverged at round {round}: {reason} (||w||={w_norm:.4g})"
        )
