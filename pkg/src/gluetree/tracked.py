"""Coupled tree-plus-marked-point construction and exact height laws.

The marked point X_n of a size-n tree moves only at "jump" steps: step i
jumps with probability a_i/A_i, branches the new segment on X_{i-1} and
moves X to a uniform position on it.  The root distance of X_n is then
the sum of the jump contributions a_i V_i, which gives a tree-free
sampler for the typical-height law, a closed-form moment generating
function, and the exponential bound checked by ``exp_bound_check``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .jumps import cumulative_hazard, draw_jump_indices, jump_weighted_sum_batch
from .sequences import BranchLengthSequence, h_of_a, tail_h
from .streams import as_generator
from .tree import PointLocation, Tree

JUMP_LOG_CAP = 10 ** 6
_LOG_FLOAT_MAX = math.log(np.finfo(np.float64).max)


def jump_hazard(seq: BranchLengthSequence, n: int) -> np.ndarray:
    """Cumulative hazard of the jump indicators U_i <= a_i/A_i, i in 2..n."""
    a = seq.values(n)
    A = seq.partial_sums(n)
    return cumulative_hazard(a / A)


@dataclass
class TrackedBuild:
    """A build together with its marked point and jump history.

    ``jump_total`` equals the root distance of ``x`` by construction; the
    index/contribution log is capped at JUMP_LOG_CAP entries (jumps are
    rare, so the cap degrades the log to count+sum only in pathological
    runs).
    """
    tree: Tree
    x: PointLocation
    jump_indices: np.ndarray
    jump_contribs: np.ndarray
    jump_count: int
    jump_total: float

    def x_at_step(self, k: int) -> PointLocation:
        """The marked point of the step-k tree (its projection onto it)."""
        if not (1 <= k <= self.tree.n):
            raise ParameterError(f"k must be in 1..{self.tree.n}, got {k}")
        pos = int(np.searchsorted(self.jump_indices, k, side="right")) - 1
        return PointLocation(int(self.jump_indices[pos]),
                             float(self.jump_contribs[pos]))


def build_with_tracked_point(seq: BranchLengthSequence, n: int, seed) -> TrackedBuild:
    """Build T_n jointly with its marked point X_n.

    RNG consumption, in order: V_1; one exponential per jump-gap draw plus
    one uniform per jump; n-1 uniform graft coordinates (consumed for
    every step, used only at non-jump steps).
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    rng = as_generator(seed)
    a = seq.values(n)
    A = seq.partial_sums(n)

    v1 = rng.random()
    jump_idx = [1]
    if n >= 2:
        jump_idx += draw_jump_indices(jump_hazard(seq, n), 1, rng)
    vs = np.concatenate([[v1], rng.random(len(jump_idx) - 1)])
    jump_idx = np.asarray(jump_idx, dtype=np.int64)
    contribs = a[jump_idx - 1] * vs

    parent = np.zeros(n + 1, dtype=np.int64)
    offs = np.zeros(n + 1)
    length = np.concatenate([[np.nan], a])
    if n >= 2:
        u = rng.random(n - 1)
        w = u * A[: n - 1]
        j = np.searchsorted(A, w, side="right") + 1
        prefix = np.concatenate([[0.0], A])
        o = w - prefix[j - 1]
        np.minimum(o, length[j], out=o)
        np.maximum(o, 0.0, out=o)
        parent[2:] = j
        offs[2:] = o
        # jump steps branch on the marked point instead of the uniform draw
        parent[jump_idx[1:]] = jump_idx[:-1]
        offs[jump_idx[1:]] = contribs[:-1]

    tree = Tree(parent, offs, length, seed=seed, validate=False)
    x = PointLocation(int(jump_idx[-1]), float(contribs[-1]))
    total = float(np.sum(contribs, dtype=np.longdouble))
    if jump_idx.size > JUMP_LOG_CAP:
        count = int(jump_idx.size)
        jump_idx = jump_idx[:JUMP_LOG_CAP]
        contribs = contribs[:JUMP_LOG_CAP]
    else:
        count = int(jump_idx.size)
    return TrackedBuild(tree=tree, x=x, jump_indices=jump_idx,
                        jump_contribs=contribs, jump_count=count,
                        jump_total=total)


def truncation_index(seq: BranchLengthSequence, tol: float,
                     index_cap: int = 2 ** 24) -> int:
    """Smallest dyadic N with tail_h(N, 64N) < tol.

    Refuses (parameter error) when no such N exists below the cap, which
    is the numeric signal that the height series may diverge.
    """
    N = 64
    while True:
        if 64 * N > index_cap:
            raise ParameterError(
                f"tail budget did not reach {tol} below index {index_cap}; "
                "the typical-height series may diverge")
        if tail_h(seq, N, 64 * N) < tol:
            return N
        N *= 2


@dataclass(frozen=True)
class HeightSampleBatch:
    values: np.ndarray
    n_used: int
    truncation_error: float


def sample_height_law_batch(seq: BranchLengthSequence, n: int | None, m: int,
                            rng, *, tol: float = 1e-9,
                            index_cap: int = 2 ** 24) -> HeightSampleBatch:
    """m tree-free draws of the typical height of T_n.

    ``n=None`` samples the limit law, truncated at an index chosen so that
    the dropped tail of the height series stays below ``tol``; the batch
    reports that budget as its truncation error.
    """
    rng = as_generator(rng)
    if n is None:
        n_used = truncation_index(seq, tol, index_cap)
        trunc = tail_h(seq, n_used + 1, 64 * n_used)
    else:
        if n < 1:
            raise ParameterError(f"n must be >= 1, got {n}")
        n_used = n
        trunc = 0.0
    a = seq.values(n_used)
    vals = a[0] * rng.random(m)
    if n_used >= 2:
        a1 = np.concatenate([[np.nan], a])
        vals += jump_weighted_sum_batch(jump_hazard(seq, n_used), a1, 1, m, rng)
    return HeightSampleBatch(values=vals, n_used=n_used, truncation_error=trunc)


def sample_height_law(seq: BranchLengthSequence, n: int | None, rng, *,
                      tol: float = 1e-9, index_cap: int = 2 ** 24) -> float:
    """One draw of the typical height (see sample_height_law_batch)."""
    return float(sample_height_law_batch(seq, n, 1, rng, tol=tol,
                                         index_cap=index_cap).values[0])


def freeze_fraction_mc(seq: BranchLengthSequence, n0: int, N: int, m: int,
                       rng) -> float:
    """Empirical fraction of runs whose marked point never moves in (n0, N].

    A run freezes exactly when it has no jump there, i.e. when its first
    post-n0 jump gap exceeds the hazard increment; the population value
    telescopes to A_{n0}/A_N.
    """
    if not (1 <= n0 <= N):
        raise ParameterError(f"need 1 <= n0 <= N, got {n0}, {N}")
    rng = as_generator(rng)
    hz = jump_hazard(seq, N)
    e = rng.standard_exponential(m)
    return float(np.mean(e > hz[N] - hz[n0]))


# -- exact moment generating function -------------------------------------------

def height_log_mgf(seq: BranchLengthSequence, n: int, lam: float) -> float:
    """log E[exp(lam * ht(X_n))], evaluated as a stable product of factors.

    Each factor is 1 + (a_i/A_i) * ((exp(lam a_i) - 1)/(lam a_i) - 1); the
    ratio uses expm1 with a series fallback for lam*a_i below 1e-8.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    if lam == 0.0:
        return 0.0
    a = seq.values(n)
    A = seq.partial_sums(n)
    x = lam * a
    phi = np.empty_like(x)
    small = x < 1e-8
    xs = x[small]
    phi[small] = 1.0 + xs / 2.0 + xs * xs / 6.0
    xl = x[~small]
    phi[~small] = np.expm1(xl) / xl
    return float(np.sum(np.log1p((a / A) * (phi - 1.0)), dtype=np.longdouble))


def height_mgf(seq: BranchLengthSequence, n: int, lam: float) -> float:
    """E[exp(lam * ht(X_n))] as an exact product.

    Overflowing products return inf with a warning; callers needing the
    value then should use height_log_mgf.
    """
    lm = height_log_mgf(seq, n, lam)
    if lm > _LOG_FLOAT_MAX:
        warnings.warn(f"MGF overflows float64 (log-MGF = {lm:.6g}); "
                      "use height_log_mgf", RuntimeWarning, stacklevel=2)
        return math.inf
    return math.exp(lm)


@dataclass(frozen=True)
class MgfBoundCheck:
    mgf: float
    bound: float
    ok: bool
    log_mgf: float
    log_bound: float


def exp_bound_check(seq: BranchLengthSequence, n: int, lam: float) -> MgfBoundCheck:
    """Check E[exp(lam ht)] <= exp(lam * sum a_i^2/A_i) on the admissible range.

    lam must lie in [0, 1/sup a_i]; outside that range the bound is not a
    theorem and the call is a parameter error.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    sup = seq.sup_a(n)
    if not (0.0 <= lam <= 1.0 / sup):
        raise ParameterError(
            f"lambda must be in [0, {1.0 / sup:.6g}] for this sequence, got {lam}")
    log_mgf = height_log_mgf(seq, n, lam)
    log_bound = lam * h_of_a(seq, n)
    if log_mgf <= _LOG_FLOAT_MAX and log_bound <= _LOG_FLOAT_MAX:
        mgf = math.exp(log_mgf)
        bound = math.exp(log_bound)
        ok = mgf <= bound + 1e-12
    else:
        mgf = math.inf if log_mgf > _LOG_FLOAT_MAX else math.exp(log_mgf)
        bound = math.inf if log_bound > _LOG_FLOAT_MAX else math.exp(log_bound)
        ok = log_mgf <= log_bound + 1e-12
    return MgfBoundCheck(mgf=mgf, bound=bound, ok=ok,
                         log_mgf=log_mgf, log_bound=log_bound)
