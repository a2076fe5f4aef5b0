"""Sampling sums over sparse Bernoulli index sets by hazard inversion.

Several laws in this package have the shape ``sum_i a_i V_i 1{U_i <= p_i}``
with independent uniforms and small p_i.  Instead of drawing one uniform
per index, the successful indices are sampled directly: with cumulative
hazard H[i] = sum_{j<=i} -log(1-p_j), the first success after position c
is the smallest k with H[k] >= H[c] + E, E standard exponential.  This
turns an O(n)-per-draw sum into O(#successes * log n) and vectorizes
across a whole batch of draws.
"""

from __future__ import annotations

import numpy as np


def cumulative_hazard(p: np.ndarray) -> np.ndarray:
    """H[0..n] from success probabilities p_1..p_n (p given 0-based).

    Index 1 is excluded from the hazard (H[1] = 0): callers handle a
    certain first success themselves, and p_1 = 1 would make the hazard
    infinite.
    """
    h = -np.log1p(-p[1:])
    return np.concatenate([[0.0, 0.0], np.cumsum(h, dtype=np.longdouble).astype(np.float64)])


def jump_weighted_sum_batch(hazard: np.ndarray, a_padded: np.ndarray,
                            start, m: int, rng: np.random.Generator) -> np.ndarray:
    """m draws of ``sum a_i V_i`` over success indices in (start, n].

    ``a_padded`` is 1-indexed (a_padded[i] is the weight of index i),
    ``start`` a scalar or length-m array of per-draw starting positions.
    One exponential is consumed per candidate step and one uniform per
    success, in batch rounds, so the draw is stream-deterministic.
    """
    nmax = hazard.size - 1
    total = np.zeros(m)
    cur = np.full(m, start, dtype=np.int64) if np.ndim(start) == 0 \
        else np.asarray(start, dtype=np.int64).copy()
    active = np.flatnonzero(cur < nmax)
    while active.size:
        e = rng.standard_exponential(active.size)
        k = np.searchsorted(hazard, hazard[cur[active]] + e, side="left")
        hit = k <= nmax
        ai = active[hit]
        ki = k[hit]
        v = rng.random(ai.size)
        total[ai] += a_padded[ki] * v
        cur[ai] = ki
        active = ai
    return total


def draw_jump_indices(hazard: np.ndarray, start: int,
                      rng: np.random.Generator) -> list[int]:
    """Success indices of a single run, in increasing order."""
    nmax = hazard.size - 1
    out = []
    cur = start
    while cur < nmax:
        e = rng.standard_exponential()
        k = int(np.searchsorted(hazard, hazard[cur] + e, side="left"))
        if k > nmax:
            break
        out.append(k)
        cur = k
    return out
