"""
Claims package.

Provides the ClaimResult dataclass used by all scenario modules. Each
scenario checks one directional claim against a finished desk sweep and
passes when it holds for a majority of seeds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

MAJORITY = 2


@dataclass
class ClaimResult:
    """Verdict of one claim over every seed of a sweep."""

    claim_name: str
    expected: str
    actual: str
    passed: bool
    seeds_passed: int = 0
    seeds_total: int = 0
    details: dict[str, Any] = field(default_factory=dict)
    error: str | None = None


def majority(per_seed: dict[int, bool], needed: int = MAJORITY) -> tuple[bool, int]:
    hits = sum(1 for ok in per_seed.values() if ok)
    return hits >= min(needed, len(per_seed)) and bool(per_seed), hits
