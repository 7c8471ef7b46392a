"""Deterministic hierarchical random-number streams.

Every stochastic step in the pipeline pulls from a child generator
derived from the root seed plus a stable key path, so adding or
reordering work in one stage never perturbs the draws of another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def child_rng(root_seed: int, *keys: int | str) -> np.random.Generator:
    """Return a generator seeded by ``root_seed`` and a key path.

    String keys are hashed, so ``child_rng(7, "plan", 3)`` is stable
    across platforms and releases.
    """
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(_key_to_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))
