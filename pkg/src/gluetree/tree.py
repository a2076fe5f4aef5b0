"""Arena representation of the glued tree and its metric operations.

A tree with n branches is stored as three 1-indexed arrays (index 0 is a
pad): ``parent``, ``attach_offset`` and ``length``.  Branch 1 is the root
segment; branch i >= 2 is glued at distance ``attach_offset[i]`` from the
root-side endpoint of branch ``parent[i]``.  Distances, projections and
sampling only ever need this genealogy, so no coordinate embedding is
kept.

Points are ``(branch, offset)`` pairs with the offset measured from the
branch's root-side endpoint, which coincides with its graft point.  A
mass-coordinate draw that lands exactly on a prefix-sum boundary maps to
the next branch at offset 0, i.e. to the graft point itself.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileFormatError, LocationError, ParameterError
from .records import atomic_write_text
from .sequences import BranchLengthSequence
from .streams import as_generator

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class PointLocation:
    """A point of the tree: branch id plus offset from its root-side end."""
    branch: int
    offset: float


class Tree:
    """Immutable glued tree over branches 1..n.

    ``attach_height`` (distance from the tree root to each branch's graft
    point) is computed lazily since bulk law-level simulations never need
    it.
    """

    def __init__(self, parent: np.ndarray, attach_offset: np.ndarray,
                 length: np.ndarray, seed=None, validate: bool = True):
        self.parent = np.asarray(parent, dtype=np.int64)
        self.attach_offset = np.asarray(attach_offset, dtype=np.float64)
        self.length = np.asarray(length, dtype=np.float64)
        self.n = self.parent.size - 1
        self.seed = seed
        if validate:
            self._validate()
        cum = np.cumsum(self.length[1:], dtype=np.longdouble)
        self.prefix = np.concatenate([[0.0], cum.astype(np.float64)])
        self.total_length = float(self.prefix[-1])
        self._attach_height = None
        self._stem_cache = None

    def _validate(self) -> None:
        n = self.n
        if n < 1:
            raise ParameterError("tree needs at least one branch")
        if self.attach_offset.size != n + 1 or self.length.size != n + 1:
            raise ParameterError("branch arrays disagree on n")
        if self.parent[1] != 0 or self.attach_offset[1] != 0.0:
            raise ParameterError("branch 1 must have parent 0 and offset 0")
        if not np.all(self.length[1:] > 0):
            raise ParameterError("branch lengths must be positive")
        if n >= 2:
            ids = np.arange(2, n + 1)
            par = self.parent[2:]
            if not np.all((par >= 1) & (par < ids)):
                raise ParameterError("parent ids must satisfy 1 <= parent < id")
            off = self.attach_offset[2:]
            if not np.all((off >= 0) & (off <= self.length[par])):
                raise ParameterError("attach offsets must lie within the parent")

    @property
    def attach_height(self) -> np.ndarray:
        """Height of each branch's graft point above the root."""
        if self._attach_height is None:
            par = self.parent.tolist()
            off = self.attach_offset.tolist()
            ah = [0.0] * (self.n + 1)
            for i in range(2, self.n + 1):
                ah[i] = ah[par[i]] + off[i]
            self._attach_height = np.array(ah)
        return self._attach_height

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tree(n={self.n}, total_length={self.total_length:.6g}, seed={self.seed})"


def build_tree(seq: BranchLengthSequence, n: int, seed) -> Tree:
    """Glue n branches, each on a length-uniform point of the current tree.

    Branch i >= 2 lands on branch j with probability a_j/A_{i-1} (prefix-sum
    inversion of one uniform draw), at a uniform offset.  Consumes exactly
    one uniform per graft, in branch order.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    a = seq.values(n)
    A = seq.partial_sums(n)
    parent = np.zeros(n + 1, dtype=np.int64)
    offs = np.zeros(n + 1)
    length = np.concatenate([[np.nan], a])
    if n >= 2:
        rng = as_generator(seed)
        u = rng.random(n - 1)
        w = u * A[: n - 1]
        j = np.searchsorted(A, w, side="right") + 1
        prefix = np.concatenate([[0.0], A])
        o = w - prefix[j - 1]
        # one-ulp guard: prefix-sum differences can overshoot the branch length
        np.minimum(o, length[j], out=o)
        np.maximum(o, 0.0, out=o)
        parent[2:] = j
        offs[2:] = o
    return Tree(parent, offs, length, seed=seed, validate=False)


def _check_location(tree: Tree, p: PointLocation) -> None:
    if not (1 <= p.branch <= tree.n):
        raise LocationError(f"branch {p.branch} not in 1..{tree.n}")
    if not (0.0 <= p.offset <= tree.length[p.branch]):
        raise LocationError(
            f"offset {p.offset} outside [0, {tree.length[p.branch]}] "
            f"on branch {p.branch}")


def distance(tree: Tree, p: PointLocation, q: PointLocation) -> float:
    """Unique-path length between two points.

    Climbs whichever point sits on the younger branch until both reach a
    common branch; per-side accumulators keep the result exactly symmetric.
    """
    _check_location(tree, p)
    _check_location(tree, q)
    par = tree.parent
    off = tree.attach_offset
    b1, o1 = p.branch, p.offset
    b2, o2 = q.branch, q.offset
    acc1 = acc2 = 0.0
    while b1 != b2:
        if b1 > b2:
            acc1 += o1
            o1 = off[b1]
            b1 = par[b1]
        else:
            acc2 += o2
            o2 = off[b2]
            b2 = par[b2]
    return (acc1 + acc2) + abs(o1 - o2)


def pairwise_distance(tree: Tree, b1, o1, b2, o2) -> np.ndarray:
    """Vectorized ``distance`` over aligned arrays of point pairs."""
    par = tree.parent
    off = tree.attach_offset
    b1 = np.array(b1, dtype=np.int64)
    b2 = np.array(b2, dtype=np.int64)
    o1 = np.array(o1, dtype=np.float64)
    o2 = np.array(o2, dtype=np.float64)
    acc1 = np.zeros(b1.size)
    acc2 = np.zeros(b1.size)
    idx = np.flatnonzero(b1 != b2)
    while idx.size:
        m = b1[idx] > b2[idx]
        i1 = idx[m]
        acc1[i1] += o1[i1]
        o1[i1] = off[b1[i1]]
        b1[i1] = par[b1[i1]]
        i2 = idx[~m]
        acc2[i2] += o2[i2]
        o2[i2] = off[b2[i2]]
        b2[i2] = par[b2[i2]]
        idx = idx[b1[idx] != b2[idx]]
    return (acc1 + acc2) + np.abs(o1 - o2)


def project(tree: Tree, p: PointLocation, k: int) -> PointLocation:
    """Closest point of the k-branch subtree: climb until branch id <= k."""
    if not (1 <= k <= tree.n):
        raise ParameterError(f"k must be in 1..{tree.n}, got {k}")
    _check_location(tree, p)
    b, o = p.branch, p.offset
    while b > k:
        o = tree.attach_offset[b]
        b = tree.parent[b]
    return PointLocation(int(b), float(o))


def sample_uniform_batch(tree: Tree, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """m draws from the normalized length measure, as (branch, offset) arrays."""
    rng = as_generator(rng)
    w = rng.random(m) * tree.total_length
    b = np.searchsorted(tree.prefix[1:], w, side="right") + 1
    o = w - tree.prefix[b - 1]
    np.minimum(o, tree.length[b], out=o)
    np.maximum(o, 0.0, out=o)
    return b, o


def sample_uniform(tree: Tree, rng) -> PointLocation:
    """One draw from the normalized length measure on the tree."""
    b, o = sample_uniform_batch(tree, 1, rng)
    return PointLocation(int(b[0]), float(o[0]))


def height(tree: Tree, p: PointLocation) -> float:
    """Distance from the root, via the cached graft-point heights."""
    _check_location(tree, p)
    return float(tree.attach_height[p.branch] + p.offset)


def max_height(tree: Tree) -> float:
    """Largest root distance, attained at some branch tip."""
    return float(np.max(tree.attach_height[1:] + tree.length[1:]))


def root_path(tree: Tree, p: PointLocation):
    """Branches visited climbing from p to the root.

    Returns (branches, entry_offsets, cumdist): entry_offsets[k] is where the
    climb enters branches[k], cumdist[k] the distance travelled from p to
    that entry point.
    """
    _check_location(tree, p)
    bs = [p.branch]
    ts = [p.offset]
    cs = [0.0]
    b, o, c = p.branch, p.offset, 0.0
    while b != 1:
        c += o
        o = float(tree.attach_offset[b])
        b = int(tree.parent[b])
        bs.append(b)
        ts.append(o)
        cs.append(c)
    return (np.array(bs, dtype=np.int64), np.array(ts), np.array(cs))


# -- stems ---------------------------------------------------------------------

def _stem_arrays(tree: Tree):
    """Per-branch sorted child offsets, grouped: (parents, offsets, starts, ends)."""
    if tree._stem_cache is None:
        if tree.n == 1:
            tree._stem_cache = (np.empty(0, np.int64), np.empty(0),
                                np.empty(0, np.int64), np.empty(0, np.int64))
        else:
            par = tree.parent[2:]
            off = tree.attach_offset[2:]
            order = np.lexsort((off, par))
            ps = par[order]
            os_ = off[order]
            starts = np.flatnonzero(np.r_[True, ps[1:] != ps[:-1]])
            ends = np.r_[starts[1:], ps.size]
            tree._stem_cache = (ps, os_, starts, ends)
    return tree._stem_cache


def stem_gaps(tree: Tree, branch: int) -> np.ndarray:
    """Gap lengths between consecutive graft points on one branch.

    Includes the segments reaching the branch endpoints; a childless branch
    is a single stem of its full length.
    """
    if not (1 <= branch <= tree.n):
        raise ParameterError(f"branch {branch} not in 1..{tree.n}")
    mask = tree.parent[2:] == branch
    offs = np.sort(tree.attach_offset[2:][mask])
    edges = np.concatenate([[0.0], offs, [tree.length[branch]]])
    return np.diff(edges)


def longest_stem(tree: Tree) -> float:
    """Length of the longest graft-free segment anywhere in the tree."""
    if tree.n == 1:
        return float(tree.length[1])
    ps, os_, starts, ends = _stem_arrays(tree)
    prev = np.empty_like(os_)
    prev[1:] = os_[:-1]
    prev[starts] = 0.0
    best = float(np.max(os_ - prev))
    tail = tree.length[ps[ends - 1]] - os_[ends - 1]
    best = max(best, float(np.max(tail)))
    has_child = np.zeros(tree.n + 1, dtype=bool)
    has_child[ps] = True
    childless = ~has_child[1:]
    if childless.any():
        best = max(best, float(np.max(tree.length[1:][childless])))
    return best


# -- subtrees ------------------------------------------------------------------

def hang_points(tree: Tree, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Where each branch j > i hangs on the i-branch subtree.

    Returns arrays (branch, offset) of size n+1; entries for j <= i are 0.
    The hang point of j is its graft point if the parent is old enough,
    else the hang point inherited from the parent.
    """
    if not (1 <= i <= tree.n):
        raise ParameterError(f"i must be in 1..{tree.n}, got {i}")
    par = tree.parent.tolist()
    off = tree.attach_offset.tolist()
    hb = [0] * (tree.n + 1)
    ht = [0.0] * (tree.n + 1)
    for j in range(i + 1, tree.n + 1):
        p = par[j]
        if p <= i:
            hb[j] = p
            ht[j] = off[j]
        else:
            hb[j] = hb[p]
            ht[j] = ht[p]
    return np.array(hb, dtype=np.int64), np.array(ht)


def subtree_length(tree: Tree, i: int, interval: tuple[int, float, float]) -> float:
    """Total length of the subtree hanging from an interval of an old branch.

    ``interval`` is (branch_id, lo, hi) with branch_id <= i: the result is
    (hi - lo) plus the lengths of all branches whose hang point on the
    i-branch subtree falls inside [lo, hi].
    """
    bid, lo, hi = interval
    if not (1 <= bid <= i <= tree.n):
        raise ParameterError(f"need branch_id <= i <= n, got ({bid}, {i}, {tree.n})")
    if not (0.0 <= lo <= hi <= tree.length[bid]):
        raise ParameterError(f"invalid interval [{lo}, {hi}] on branch {bid}")
    total = hi - lo
    if i < tree.n:
        hb, ht = hang_points(tree, i)
        sel = (hb == bid) & (ht >= lo) & (ht <= hi)
        total += float(np.sum(tree.length[sel], dtype=np.longdouble))
    return float(total)


# -- edge-list serialization -----------------------------------------------------

def export_tree_text(tree: Tree) -> str:
    """Edge-list CSV: header id,parent_id,attach_offset,length, ids ascending."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["id", "parent_id", "attach_offset", "length"])
    for i in range(1, tree.n + 1):
        w.writerow([i, int(tree.parent[i]),
                    _FLOAT_FMT % tree.attach_offset[i],
                    _FLOAT_FMT % tree.length[i]])
    return buf.getvalue()


def export_tree(tree: Tree, path: str | Path) -> None:
    atomic_write_text(Path(path), export_tree_text(tree))


def import_tree(path: str | Path) -> Tree:
    """Load an edge-list CSV, validating every branch invariant row by row."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "parent_id", "attach_offset", "length"]:
            raise FileFormatError(f"bad header {header!r}", row=1)
        parent = [0]
        offs = [0.0]
        length = [np.nan]
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise FileFormatError(f"expected 4 fields, got {len(row)}", row=row_no)
            try:
                bid = int(row[0])
                pid = int(row[1])
                off = float(row[2])
                ln = float(row[3])
            except ValueError:
                raise FileFormatError(f"unparsable row {row!r}", row=row_no) from None
            expect = len(parent)
            if bid != expect:
                raise FileFormatError(
                    f"ids must ascend 1,2,...; expected {expect}, got {bid}",
                    row=row_no)
            if bid == 1:
                if pid != 0 or off != 0.0:
                    raise FileFormatError(
                        "branch 1 must have parent_id 0 and attach_offset 0",
                        row=row_no)
            else:
                if not (1 <= pid < bid):
                    raise FileFormatError(
                        f"parent_id must be in 1..{bid - 1}, got {pid}", row=row_no)
                if not (0.0 <= off <= length[pid]):
                    raise FileFormatError(
                        f"attach_offset {off} outside parent length {length[pid]}",
                        row=row_no)
            if not (ln > 0 and np.isfinite(ln)):
                raise FileFormatError(f"length must be positive, got {ln}", row=row_no)
            parent.append(pid)
            offs.append(off)
            length.append(ln)
    if len(parent) == 1:
        raise FileFormatError("no branch rows")
    return Tree(np.array(parent, dtype=np.int64), np.array(offs),
                np.array(length), validate=False)
