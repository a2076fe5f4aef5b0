"""Exact law of the distance between two independent length-measure points.

For a size-K tree the distance D decomposes over the last branch carrying
both points: index k is drawn with weight (a_k/A_k)^2 * prod_{j>k}
(1 - (a_j/A_j)^2), and given k,

    D = a_k |V - V'| + sum_{i=k+1}^{K} a_i V_i 1{U_i <= 2 a_i / (A_i + a_i)}.

The weights telescope to 1 because the first factor (a_1/A_1)^2 is
exactly 1, which the implementation preserves by storing the suffix
survival products and taking their differences.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .jumps import cumulative_hazard, jump_weighted_sum_batch
from .sequences import BranchLengthSequence, fit_exponent
from .streams import as_generator
from .tree import Tree, pairwise_distance, sample_uniform_batch

_LD = np.longdouble


@dataclass
class TwoPointLaw:
    """Mixture law of the two-point distance at truncation level K.

    ``survival[k] = prod_{j=k+1}^{K} (1 - p_j)`` doubles as the cumulative
    weight array used for inversion sampling.  ``tail_mean_budget`` is the
    partial sum of a_i^2/(A_i + a_i) over (K, horizon]; together with the
    last dyadic increment it budgets the mean mass dropped by truncating
    the inner sum at K.
    """
    K: int
    p: np.ndarray          # (a_k/A_k)^2, 1-indexed pad
    weights: np.ndarray    # mixture weights, 1-indexed pad
    survival: np.ndarray   # survival[k], k = 0..K
    tail_mean_budget: float
    tail_mean_increment: float
    seq: BranchLengthSequence = field(repr=False)


def mixture_weights(seq: BranchLengthSequence, K: int,
                    tail_horizon: int | None = None) -> TwoPointLaw:
    """Build the level-K two-point law for a sequence."""
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    a = seq.values(K)
    A = seq.partial_sums(K)
    r = a / A
    p = r * r
    survival = np.empty(K + 1)
    survival[K] = 1.0
    if K >= 1:
        survival[:K] = np.cumprod((1.0 - p)[::-1])[::-1]
    weights = np.concatenate([[0.0], np.diff(survival)])
    p = np.concatenate([[0.0], p])

    if tail_horizon is None:
        tail_horizon = 16 * K
    if seq.max_index is not None:
        tail_horizon = min(tail_horizon, seq.max_index)
    if tail_horizon > K:
        at = seq.values(tail_horizon)
        At = seq.partial_sums(tail_horizon)
        g = at * at / (At + at)
        budget = float(np.sum(g[K:tail_horizon], dtype=_LD))
        half = max(K, (K + tail_horizon) // 2)
        increment = float(np.sum(g[half:tail_horizon], dtype=_LD))
    else:
        budget = 0.0
        increment = 0.0
    return TwoPointLaw(K=K, p=p, weights=weights, survival=survival,
                       tail_mean_budget=budget, tail_mean_increment=increment,
                       seq=seq)


def level_for_tail_budget(seq: BranchLengthSequence, budget: float,
                          start: int = 1024, cap: int = 2 ** 22) -> int:
    """Smallest dyadic K whose truncated-tail mean stays below ``budget``.

    The dropped tail shifts the small-distance mass upward by about its
    mean, so statistics probing scales near r need K with budget << r.
    """
    if budget <= 0:
        raise ParameterError(f"budget must be positive, got {budget}")
    K = start
    while True:
        if K > cap:
            raise ParameterError(
                f"tail budget {budget} not reachable below K={cap}")
        horizon = 16 * K if seq.max_index is None else min(16 * K, seq.max_index)
        if horizon <= K:
            return K
        a = seq.values(horizon)
        A = seq.partial_sums(horizon)
        g = a[K:] * a[K:] / (A[K:] + a[K:])
        if float(np.sum(g, dtype=_LD)) < budget:
            return K
        K *= 2


def _tail_hazard(law: TwoPointLaw) -> np.ndarray:
    a = law.seq.values(law.K)
    A = law.seq.partial_sums(law.K)
    return cumulative_hazard(2.0 * a / (A + a))


def sample_D_batch(law: TwoPointLaw, m: int, rng,
                   seq: BranchLengthSequence | None = None) -> np.ndarray:
    """m draws of the level-K two-point distance.

    The mixture index comes from inversion over the cumulative weights;
    the inner Bernoulli sum is drawn by hazard inversion.
    """
    if seq is not None and seq is not law.seq:
        raise ParameterError("law was built for a different sequence object")
    rng = as_generator(rng)
    a = law.seq.values(law.K)
    a1 = np.concatenate([[np.nan], a])
    u = rng.random(m)
    k = np.searchsorted(law.survival, u, side="right")
    np.clip(k, 1, law.K, out=k)
    v = rng.random(m)
    vp = rng.random(m)
    d = a1[k] * np.abs(v - vp)
    if law.K >= 2:
        d += jump_weighted_sum_batch(_tail_hazard(law), a1, k, m, rng)
    return d


def sample_D(law: TwoPointLaw, seq: BranchLengthSequence | None, rng) -> float:
    """One draw of the level-K two-point distance."""
    return float(sample_D_batch(law, 1, rng, seq=seq)[0])


def exact_mean_D(law: TwoPointLaw) -> float:
    """E[D_K] = sum_k w_k (a_k/3 + sum_{i>k} a_i^2/(A_i+a_i)), exactly."""
    a = law.seq.values(law.K)
    A = law.seq.partial_sums(law.K)
    g = a * a / (A + a)
    suffix = np.concatenate([np.cumsum(g[::-1], dtype=_LD)[::-1][1:], [_LD(0.0)]])
    w = law.weights[1:]
    return float(np.sum(w * (a / 3.0 + suffix.astype(np.float64)), dtype=_LD))


def empirical_D(tree: Tree, rng, m: int) -> np.ndarray:
    """m i.i.d. distances between independent length-measure samples."""
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    rng = as_generator(rng)
    b1, o1 = sample_uniform_batch(tree, m, rng)
    b2, o2 = sample_uniform_batch(tree, m, rng)
    return pairwise_distance(tree, b1, o1, b2, o2)


def negative_moment_mc(law: TwoPointLaw, gamma: float, m: int, rng,
                       clip: float | None = None) -> tuple[float, float]:
    """Monte Carlo estimate of E[D^-gamma], with D clipped below.

    The clip defaults to the law's truncation budget so that mass the
    truncated sampler cannot resolve does not masquerade as a blow-up.
    Returns (estimate, clip_threshold).
    """
    if gamma <= 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if clip is None:
        clip = max(law.tail_mean_budget, 1e-300)
    d = sample_D_batch(law, m, rng)
    return float(np.mean(np.maximum(d, clip) ** (-gamma))), clip


@dataclass(frozen=True)
class TailExponentFit:
    slope: float
    stderr: float
    counts: np.ndarray
    phat: np.ndarray
    r_grid: np.ndarray
    m: int
    flagged: bool


def tail_exponent(law_or_tree, r_grid, m: int, rng) -> TailExponentFit:
    """Monte Carlo log-log slope of P(D <= r) over a decreasing radius grid.

    Bins with fewer than 100 hits trigger a widen-the-grid warning; empty
    bins are dropped from the fit.
    """
    r = np.asarray(list(r_grid), dtype=np.float64)
    if r.size < 3:
        raise ParameterError(f"need at least 3 grid radii, got {r.size}")
    if not np.all(r > 0) or not np.all(np.diff(r) < 0):
        raise ParameterError("r_grid must be positive and strictly decreasing")
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    rng = as_generator(rng)
    if isinstance(law_or_tree, TwoPointLaw):
        d = sample_D_batch(law_or_tree, m, rng)
    elif isinstance(law_or_tree, Tree):
        d = empirical_D(law_or_tree, rng, m)
    else:
        raise ParameterError(f"expected TwoPointLaw or Tree, got {type(law_or_tree)!r}")
    d.sort()
    counts = np.searchsorted(d, r, side="right")
    flagged = bool(counts.min() < 100)
    if flagged:
        warnings.warn(
            f"smallest radius bin has {int(counts.min())} hits (< 100); "
            "widen the grid or raise m", RuntimeWarning, stacklevel=2)
    keep = counts > 0
    if keep.sum() < 3:
        raise ParameterError("fewer than 3 radii with nonzero counts")
    phat = counts / m
    fit = fit_exponent(zip(r[keep], phat[keep]))
    return TailExponentFit(slope=fit.slope, stderr=fit.stderr, counts=counts,
                           phat=phat, r_grid=r, m=m, flagged=flagged)
