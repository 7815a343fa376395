"""
Seed derivation.

A master seed fans out into independent streams keyed by a purpose tag
(``"dataset"``, ``"partition"``, ``"init"``, ``"sampling"``, ``"client"``,
``"lambda1"``, ``"landscape"``, ...) plus optional integer coordinates such
as round and client id. Adding a new purpose never shifts an existing
stream, so enabling a diagnostic leaves the training trajectory untouched.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _tag_word(tag: str | int) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_seed(master: int, *tags: str | int) -> int:
    """Return a 32-bit seed for the stream identified by ``tags``."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(_tag_word(t) for t in tags))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng_for(master: int, *tags: str | int) -> np.random.Generator:
    """Return a fresh Generator for the stream identified by ``tags``."""
    return np.random.default_rng(derive_seed(master, *tags))
