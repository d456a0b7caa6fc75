"""Derivation of independent, reproducible random streams from one seed.

Every consumer of randomness gets its own stream addressed by a fixed tag
plus its coordinates (replicate index, block index). Streams are derived
with SeedSequence spawn keys, so any stream can be reconstructed in
isolation and no ordering or degree of parallelism can perturb another
stream's draws.
"""

from __future__ import annotations

import numpy as np

ARM = 1  # block-to-mechanism assignment, per replicate
ENCOURAGEMENT = 2  # within-block encouragement draws, per (replicate, block)


def stream(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
