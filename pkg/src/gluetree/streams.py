"""Seeded RNG streams for reproducible replicate batches.

Every Monte Carlo entry point takes either an integer seed or a
``numpy.random.Generator``.  Replicate batches derive one independent
stream per replicate as ``SeedSequence(entropy=seed, spawn_key=(replicate,))``,
so row-level results do not depend on how replicates are scheduled
across workers.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, replicate: int = 0) -> np.random.Generator:
    """Independent generator for one replicate of a seeded batch."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replicate,))
    return np.random.default_rng(ss)


def as_generator(seed_or_rng) -> np.random.Generator:
    """Coerce an int seed, SeedSequence or Generator into a Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)
