"""Mass martingales, measure-convergence surrogates, and dimension probes.

The subtree mass below a fixed set evolves as a two-case reinforced
recursion (a generalized Polya urn): with probability M the next branch
lands inside and M moves to (A_n M + a_{n+1})/A_{n+1}, otherwise to
A_n M / A_{n+1}.  ``urn_simulate`` runs the recursion directly;
``track_mass`` recovers the same trajectory from an actual build, which
pins the tree dynamics to the urn dynamics step by step.

Dimension estimates are covering slopes: greedy farthest-point nets over
a large uniform sample give covering counts N(eps) whose log-log slope
against 1/eps estimates the box dimension (a greedy net is a
2-approximation, an additive constant in log N that leaves the slope
unbiased).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .sequences import BranchLengthSequence, ExponentFit, fit_exponent
from .streams import as_generator
from .tree import (PointLocation, Tree, build_tree, hang_points,
                   sample_uniform_batch)

try:
    from numba import njit as _njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

_LD = np.longdouble


# -- urns ------------------------------------------------------------------------

@dataclass
class UrnTrajectory:
    """Mass values M_s for s = steps[0]..steps[-1] of one run."""
    i0: int
    m0: float
    steps: np.ndarray
    values: np.ndarray

    def verify_recursion(self, seq: BranchLengthSequence, tol: float = 1e-10) -> bool:
        """Every increment matches one branch of the two-case recursion."""
        if not np.array_equal(np.diff(self.steps), np.ones(self.steps.size - 1)):
            raise ParameterError("recursion check needs a contiguous trajectory")
        n = int(self.steps[-1])
        a = seq.values(n)
        A = seq.partial_sums(n)
        s = self.steps[:-1]
        m_cur = self.values[:-1]
        m_next = self.values[1:]
        up = (A[s - 1] * m_cur + a[s]) / A[s]
        down = (A[s - 1] * m_cur) / A[s]
        err = np.minimum(np.abs(m_next - up), np.abs(m_next - down))
        return bool(np.all(err <= tol))


def urn_simulate(seq: BranchLengthSequence, i0: int, m0: float, n: int,
                 rng) -> UrnTrajectory:
    """One trajectory of the mass recursion, no tree involved."""
    if not (0.0 < m0 <= 1.0):
        raise ParameterError(f"m0 must be in (0, 1], got {m0}")
    if not (1 <= i0 <= n):
        raise ParameterError(f"need 1 <= i0 <= n, got i0={i0}, n={n}")
    rng = as_generator(rng)
    a = seq.values(n)
    A = seq.partial_sums(n)
    vals = np.empty(n - i0 + 1)
    vals[0] = m0
    m = m0
    u = rng.random(n - i0)
    for t, s in enumerate(range(i0, n)):
        if u[t] < m:
            # complement form keeps full mass exactly absorbing at m = 1
            m = 1.0 - (A[s - 1] * (1.0 - m)) / A[s]
        else:
            m = (A[s - 1] * m) / A[s]
        vals[t + 1] = m
    return UrnTrajectory(i0=i0, m0=m0, steps=np.arange(i0, n + 1), values=vals)


@dataclass(frozen=True)
class UrnEnsemble:
    i0: int
    m0: float
    reps: int
    checkpoints: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray


def urn_ensemble(seq: BranchLengthSequence, i0: int, m0: float, n: int,
                 reps: int, rng, checkpoints=None) -> UrnEnsemble:
    """Vectorized batch of urn trajectories, summarized at checkpoints."""
    if not (0.0 < m0 <= 1.0):
        raise ParameterError(f"m0 must be in (0, 1], got {m0}")
    if not (1 <= i0 <= n):
        raise ParameterError(f"need 1 <= i0 <= n, got i0={i0}, n={n}")
    rng = as_generator(rng)
    if checkpoints is None:
        checkpoints = [n]
    cps = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if cps[0] < i0 or cps[-1] > n:
        raise ParameterError(f"checkpoints must lie in [{i0}, {n}]")
    a = seq.values(n)
    A = seq.partial_sums(n)
    m = np.full(reps, m0)
    means = np.empty(cps.size)
    errs = np.empty(cps.size)
    nxt = 0
    if cps[nxt] == i0:
        means[0], errs[0] = m0, 0.0
        nxt += 1
    for s in range(i0, n):
        up = rng.random(reps) < m
        m = np.where(up, 1.0 - (A[s - 1] * (1.0 - m)) / A[s],
                     (A[s - 1] * m) / A[s])
        if nxt < cps.size and s + 1 == cps[nxt]:
            means[nxt] = float(np.mean(m))
            errs[nxt] = float(np.std(m, ddof=1) / math.sqrt(reps))
            nxt += 1
    return UrnEnsemble(i0=i0, m0=m0, reps=reps, checkpoints=cps,
                       means=means, stderrs=errs)


def track_mass(seq: BranchLengthSequence, n: int, i0: int,
               interval: tuple[int, float, float], seed) -> UrnTrajectory:
    """Mass trajectory of the subtree hanging from an interval, on a real build.

    Builds T_n and records mu_s(descendants of the interval) for every
    s in [i0, n]; the result must be pathwise reproducible by the urn
    recursion, which ``UrnTrajectory.verify_recursion`` checks.
    """
    bid, lo, hi = interval
    if not (1 <= bid <= i0 <= n):
        raise ParameterError(f"need branch <= i0 <= n, got ({bid}, {i0}, {n})")
    tree = build_tree(seq, n, seed)
    if not (0.0 <= lo <= hi <= tree.length[bid]):
        raise ParameterError(f"invalid interval [{lo}, {hi}] on branch {bid}")
    par = tree.parent.tolist()
    off = tree.attach_offset.tolist()
    desc = [False] * (n + 1)
    contrib = np.zeros(n + 1)
    for j in range(i0 + 1, n + 1):
        p = par[j]
        inside = desc[p] if p > i0 else (p == bid and lo <= off[j] <= hi)
        desc[j] = inside
        if inside:
            contrib[j] = tree.length[j]
    lengths = (hi - lo) + np.cumsum(contrib[i0:], dtype=_LD)
    A = seq.partial_sums(n)
    vals = (lengths / A[i0 - 1:].astype(_LD)).astype(np.float64)
    return UrnTrajectory(i0=i0, m0=float(vals[0]),
                         steps=np.arange(i0, n + 1), values=vals)


# -- projected measure distance ---------------------------------------------------

def lp_projected_distance(seq: BranchLengthSequence, n: int, m: int, n0: int,
                          parts: int, seed) -> float:
    """Half total variation between the step-m and step-n masses of an
    equal-length partition of the step-n0 tree, on one coupled build.

    This discretized projection is the quantity whose smallness makes the
    normalized length measures a Cauchy sequence, so its decay in m is the
    convergence diagnostic.
    """
    if not (1 <= n0 <= m <= n):
        raise ParameterError(f"need 1 <= n0 <= m <= n, got ({n0}, {m}, {n})")
    if parts < 1:
        raise ParameterError(f"parts must be >= 1, got {parts}")
    tree = build_tree(seq, n, seed)
    hb, ht = hang_points(tree, n0)
    sel = np.arange(n0 + 1, n + 1)
    coord = tree.prefix[hb[sel] - 1] + ht[sel]
    width = tree.prefix[n0] / parts
    piece = np.clip((coord / width).astype(np.int64), 0, parts - 1)
    w = tree.length[sel]
    base = np.full(parts, width)
    mass_m = base + np.bincount(piece[sel <= m], weights=w[sel <= m],
                                minlength=parts)
    mass_n = base + np.bincount(piece, weights=w, minlength=parts)
    mass_m /= mass_m.sum()
    mass_n /= mass_n.sum()
    return float(0.5 * np.sum(np.abs(mass_n - mass_m)))


# -- covering profiles --------------------------------------------------------------

@dataclass(frozen=True)
class CoveringEntry:
    root: PointLocation
    total_length: float
    height: float


@dataclass(frozen=True)
class CoveringProfile:
    m: int
    n: int
    entries: tuple[CoveringEntry, ...]

    @property
    def hanging_length(self) -> float:
        return float(sum(e.total_length for e in self.entries))


def covering_profile(tree: Tree, m: int) -> CoveringProfile:
    """Hanging subtrees of the step-m tree: root point, length, height each.

    Branches j > m are grouped by the point where their subtree enters the
    step-m tree; lengths partition A_n - A_m and heights are measured from
    the root point.
    """
    if not (1 <= m <= tree.n):
        raise ParameterError(f"m must be in 1..{tree.n}, got {m}")
    if m == tree.n:
        return CoveringProfile(m=m, n=tree.n, entries=())
    hb, ht = hang_points(tree, m)
    sel = np.arange(m + 1, tree.n + 1)
    pairs = np.stack([hb[sel].astype(np.float64), ht[sel]], axis=1)
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    totals = np.bincount(inv, weights=tree.length[sel], minlength=uniq.shape[0])
    tips = tree.attach_height[sel] + tree.length[sel]
    peak = np.full(uniq.shape[0], -np.inf)
    np.maximum.at(peak, inv, tips)
    root_b = uniq[:, 0].astype(np.int64)
    root_h = tree.attach_height[root_b] + uniq[:, 1]
    entries = tuple(
        CoveringEntry(root=PointLocation(int(root_b[g]), float(uniq[g, 1])),
                      total_length=float(totals[g]),
                      height=float(peak[g] - root_h[g]))
        for g in range(uniq.shape[0]))
    return CoveringProfile(m=m, n=tree.n, entries=entries)


# -- farthest-point nets and box dimension -------------------------------------------

class _SamplePaths:
    """Root paths of a point sample in CSR form.

    Row i holds, level by level, the branches visited climbing from sample
    i to the root, the offset at which each branch is entered, and the
    distance travelled so far.  Any two samples' distance is then read off
    at the first branch of one path marked by the other.
    """

    def __init__(self, tree: Tree, pb: np.ndarray, po: np.ndarray):
        par = tree.parent
        off = tree.attach_offset
        S = pb.size
        idx_parts = [np.arange(S)]
        b_parts = [pb.astype(np.int64)]
        o_parts = [po.astype(np.float64)]
        acc_parts = [np.zeros(S)]
        idx, b, o, acc = idx_parts[0], b_parts[0], o_parts[0], acc_parts[0]
        while True:
            m = b != 1
            if not m.any():
                break
            idx = idx[m]
            acc = acc[m] + o[m]
            b = b[m]
            o = off[b]
            b = par[b]
            idx_parts.append(idx)
            b_parts.append(b)
            o_parts.append(o)
            acc_parts.append(acc)
        all_idx = np.concatenate(idx_parts)
        order = np.argsort(all_idx, kind="stable")
        self.branch = np.concatenate(b_parts)[order]
        self.offset = np.concatenate(o_parts)[order]
        self.acc = np.concatenate(acc_parts)[order]
        counts = np.bincount(all_idx, minlength=S)
        self.indptr = np.concatenate([[0], np.cumsum(counts)])
        self.size = S
        self._mark = np.full(tree.n + 1, -1, dtype=np.int64)

    def row(self, i: int):
        sl = slice(self.indptr[i], self.indptr[i + 1])
        return self.branch[sl], self.offset[sl], self.acc[sl]

    def dists_to(self, center: int, cand: np.ndarray) -> np.ndarray:
        """Distances from sample ``center`` to the candidate samples."""
        cb, ct, cc = self.row(center)
        mark = self._mark
        mark[cb] = np.arange(cb.size)
        pos = self.indptr[cand].copy()
        hit_pos = np.empty(cand.size, dtype=np.int64)
        hit_j = np.empty(cand.size, dtype=np.int64)
        act = np.arange(cand.size)
        while act.size:
            j = mark[self.branch[pos[act]]]
            done = j >= 0
            di = act[done]
            hit_pos[di] = pos[di]
            hit_j[di] = j[done]
            act = act[~done]
            pos[act] += 1
        mark[cb] = -1
        return (self.acc[hit_pos] + cc[hit_j]
                + np.abs(self.offset[hit_pos] - ct[hit_j]))


def _fps_numpy(paths: _SamplePaths, hts: np.ndarray, eps_min: float,
               max_centers: int) -> np.ndarray:
    S = paths.size
    every = np.arange(S)
    dmin = paths.dists_to(0, every)
    dmin[0] = 0.0
    covers = []
    alive = every[dmin > eps_min]
    while True:
        r = float(dmin[alive].max()) if alive.size else 0.0
        covers.append(r)
        if r <= eps_min or len(covers) >= max_centers:
            break
        c = int(alive[np.argmax(dmin[alive])])
        # exact pruning: d(p,c) >= r - dmin[p] and >= |ht(p) - ht(c)|, so only
        # points with dmin[p] > r/2 inside the height band can improve
        da = dmin[alive]
        cand = alive[(da > 0.5 * r) & (np.abs(hts[alive] - hts[c]) < da)]
        d = paths.dists_to(c, cand)
        dmin[cand] = np.minimum(dmin[cand], d)
        alive = alive[dmin[alive] > eps_min]
    return np.asarray(covers)


if HAVE_NUMBA:
    @_njit(cache=True, nogil=True)
    def _fps_kernel(indptr, path_b, path_off, path_acc, hts, eps_min,
                    max_centers, nbranch):  # pragma: no cover - jitted
        S = indptr.shape[0] - 1
        dmin = np.empty(S)
        mark_t = np.zeros(nbranch + 1)
        mark_c = np.full(nbranch + 1, -1.0)
        covers = np.empty(max_centers)
        lo, hi = indptr[0], indptr[1]
        for t in range(lo, hi):
            b = path_b[t]
            mark_t[b] = path_off[t]
            mark_c[b] = path_acc[t]
        for p in range(S):
            pos = indptr[p]
            while mark_c[path_b[pos]] < 0.0:
                pos += 1
            b = path_b[pos]
            dmin[p] = (path_acc[pos] + mark_c[b]) + abs(path_off[pos] - mark_t[b])
        for t in range(lo, hi):
            mark_c[path_b[t]] = -1.0
        dmin[0] = 0.0
        alive = np.empty(S, np.int64)
        na = 0
        for p in range(S):
            if dmin[p] > eps_min:
                alive[na] = p
                na += 1
        k = 0
        while True:
            r = 0.0
            ci = -1
            for t in range(na):
                p = alive[t]
                if dmin[p] > r:
                    r = dmin[p]
                    ci = p
            covers[k] = r
            k += 1
            if r <= eps_min or k >= max_centers or ci < 0:
                break
            lo, hi = indptr[ci], indptr[ci + 1]
            for t in range(lo, hi):
                b = path_b[t]
                mark_t[b] = path_off[t]
                mark_c[b] = path_acc[t]
            hc = hts[ci]
            half = 0.5 * r
            for t in range(na):
                p = alive[t]
                dp = dmin[p]
                if dp > half and abs(hts[p] - hc) < dp:
                    pos = indptr[p]
                    while mark_c[path_b[pos]] < 0.0:
                        pos += 1
                    b = path_b[pos]
                    d = (path_acc[pos] + mark_c[b]) + abs(path_off[pos] - mark_t[b])
                    if d < dp:
                        dmin[p] = d
            for t in range(lo, hi):
                mark_c[path_b[t]] = -1.0
            w = 0
            for t in range(na):
                p = alive[t]
                if dmin[p] > eps_min:
                    alive[w] = p
                    w += 1
            na = w
        return covers[:k]


def farthest_point_radii(tree: Tree, sample_size: int, rng, eps_min: float,
                         max_centers: int | None = None,
                         engine: str = "auto") -> np.ndarray:
    """Covering radii of the greedy farthest-point net over a uniform sample.

    Entry k is the covering radius achieved by the first k+1 centers; the
    traversal stops once the sample is covered at radius eps_min.  Two
    exact prunings keep it tractable: points already covered at eps_min
    drop out, and a center at net distance r can only improve points with
    current radius above r/2 inside its height band.

    The compiled and the pure-numpy engines run the identical algorithm
    and return identical radii.
    """
    if eps_min <= 0:
        raise ParameterError(f"eps_min must be positive, got {eps_min}")
    rng = as_generator(rng)
    pb, po = sample_uniform_batch(tree, sample_size, rng)
    paths = _SamplePaths(tree, pb, po)
    hts = paths.acc[paths.indptr[1:] - 1] + paths.offset[paths.indptr[1:] - 1]
    if max_centers is None:
        max_centers = sample_size
    if engine not in ("auto", "numba", "numpy"):
        raise ParameterError(f"unknown engine {engine!r}")
    use_numba = HAVE_NUMBA if engine == "auto" else (engine == "numba")
    if use_numba and not HAVE_NUMBA:
        raise ParameterError("numba engine requested but numba is unavailable")
    if use_numba:
        return _fps_kernel(paths.indptr, paths.branch, paths.offset, paths.acc,
                           hts, float(eps_min), int(max_centers), tree.n)
    return _fps_numpy(paths, hts, float(eps_min), int(max_centers))


def net_counts(covers: np.ndarray, eps_grid: np.ndarray) -> np.ndarray:
    """N(eps) = centers needed before the covering radius drops to eps.

    Returns -1 for radii the traversal never reached.
    """
    out = np.empty(len(eps_grid), dtype=np.int64)
    for i, eps in enumerate(eps_grid):
        ok = covers <= eps
        out[i] = int(np.argmax(ok)) + 1 if ok.any() else -1
    return out


@dataclass(frozen=True)
class BoxDimensionResult:
    slope: float
    stderr: float
    table: tuple[dict, ...]
    flagged: bool


def box_dimension(seq: BranchLengthSequence, n_grid, eps_grid, seeds,
                  sample_size: int | None = None) -> BoxDimensionResult:
    """Covering-count slope over an epsilon grid, per (n, seed) replicate.

    The default sample size is scale-aware: max(10^5, 4 A_n / eps_min), so
    the mean gap between consecutive sample points along the skeleton stays
    well below the finest radius (a sparser sample systematically
    undercounts fine-scale nets).  Fits log N(eps) against log(1/eps)
    pooled over every replicate row; unresolved radii are flagged and
    excluded.
    """
    eps = np.asarray(sorted(set(float(e) for e in eps_grid)), dtype=np.float64)[::-1]
    if eps.size < 2 or np.any(eps <= 0):
        raise ParameterError("eps_grid needs >= 2 positive radii")
    ns = [int(n) for n in n_grid]
    if not ns or not seeds:
        raise ParameterError("n_grid and seeds must be non-empty")
    rows = []
    for n in ns:
        if sample_size is None:
            S = max(100_000, int(math.ceil(4.0 * seq.A(n) / float(eps[-1]))))
        else:
            S = sample_size
        for seed in seeds:
            rng = as_generator(seed)
            tree = build_tree(seq, n, rng)
            covers = farthest_point_radii(tree, S, rng, float(eps[-1]))
            counts = net_counts(covers, eps)
            for e, c in zip(eps, counts):
                # a net close to the sample size means the sample is too
                # sparse for that radius and the count is an undercount
                rows.append({"n": n, "seed": seed, "eps": float(e),
                             "count": int(c),
                             "resolved": bool(0 < c <= S // 10)})
    pairs = [(1.0 / row["eps"], row["count"]) for row in rows if row["count"] > 0]
    flagged = any(not row["resolved"] for row in rows)
    if len(pairs) < 3:
        raise ParameterError("not enough resolved radii to fit a slope")
    fit = fit_exponent(pairs)
    return BoxDimensionResult(slope=fit.slope, stderr=fit.stderr,
                              table=tuple(rows), flagged=flagged)


# -- good branches and boundedness ----------------------------------------------------

@dataclass(frozen=True)
class GoodBranchStats:
    n: int
    eps: float
    alpha: float
    count: int
    total_length: float


def good_branch_stats(seq: BranchLengthSequence, n: int, eps: float,
                      alpha: float | None = None) -> GoodBranchStats:
    """Count and total length of branches i in [n, 2n] with a_i >= i^(-alpha-eps).

    ``alpha`` defaults to the exponent of a power-law family and must be
    supplied for any other kind; it is never inferred from the data.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if eps < 0:
        raise ParameterError(f"eps must be >= 0, got {eps}")
    if alpha is None:
        if seq.kind == "power":
            alpha = seq.params[0]
        else:
            raise ParameterError(
                f"alpha must be supplied for sequence kind {seq.kind!r}")
    a = seq.values(2 * n)
    i = np.arange(n, 2 * n + 1, dtype=np.float64)
    good = a[n - 1: 2 * n] >= i ** (-alpha - eps)
    return GoodBranchStats(n=n, eps=eps, alpha=float(alpha),
                           count=int(np.sum(good)),
                           total_length=float(np.sum(a[n - 1: 2 * n][good],
                                                     dtype=_LD)))


@dataclass(frozen=True)
class ProbeResult:
    rows: tuple[dict, ...]
    fit: ExponentFit


def boundedness_probe(seq: BranchLengthSequence, n_grid, seeds) -> ProbeResult:
    """Maximal-height growth curves over n, one build per seed.

    Each build runs once to max(n_grid); heights at intermediate n are the
    running maxima of the same realization.  Purely exploratory: emits
    curves and a log-log slope, never a boundedness verdict.
    """
    ns = sorted(set(int(n) for n in n_grid))
    if len(ns) < 2:
        raise ParameterError("n_grid needs at least 2 sizes")
    if not seeds:
        raise ParameterError("seeds must be non-empty")
    rows = []
    for seed in seeds:
        tree = build_tree(seq, ns[-1], as_generator(seed))
        tips = tree.attach_height[1:] + tree.length[1:]
        running = np.maximum.accumulate(tips)
        for n in ns:
            rows.append({"seed": seed, "n": n,
                         "max_height": float(running[n - 1])})
    fit = fit_exponent([(row["n"], row["max_height"]) for row in rows])
    return ProbeResult(rows=tuple(rows), fit=fit)
