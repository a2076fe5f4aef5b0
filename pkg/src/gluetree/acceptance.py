"""Acceptance criteria, grouped into the named verification suites.

Three suites: ``exact`` (identities that must hold to fixed tolerance),
``montecarlo`` (statistical checks at 3 standard errors, fixed seeds) and
``dimension`` (scaling-exponent windows).  Each criterion returns its
measured values so CLI and pytest report the same numbers.

Seeds are pinned: every run reproduces the same numbers, and the
statistical windows were chosen at design time, not tuned to the draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp

from . import diagnostics, sequences, tracked, twopoint, tree
from .streams import substream

KS_LEVEL_FACTOR = 1.95  # 0.001-level two-sample Kolmogorov-Smirnov factor


@dataclass(frozen=True)
class CriterionResult:
    cid: str
    description: str
    ok: bool
    measured: dict


def _families():
    return {
        "power:0.5": sequences.power_law(0.5),
        "power:2": sequences.power_law(2.0),
        "logpow:2": sequences.log_power(2.0),
        "spiked": sequences.spiked(),
    }


# -- exact suite -----------------------------------------------------------------


def c01_weight_normalization() -> CriterionResult:
    worst = 0.0
    for name, seq in _families().items():
        for K in (1, 10, 10 ** 3, 10 ** 5):
            law = twopoint.mixture_weights(seq, K)
            dev = abs(float(math.fsum(law.weights[1:])) - 1.0)
            worst = max(worst, dev)
    return CriterionResult(
        "c01", "two-point mixture weights sum to 1 (K up to 1e5, 4 families)",
        worst <= 1e-12, {"max_deviation": worst, "tolerance": 1e-12})


def c02_mgf_bound() -> CriterionResult:
    n = 10 ** 4
    worst = -math.inf
    all_ok = True
    for alpha in (0.3, 0.5, 0.8, 2.0):
        seq = sequences.power_law(alpha)
        lam_max = 1.0 / seq.sup_a(n)
        for lam in np.linspace(0.0, lam_max, 11):
            chk = tracked.exp_bound_check(seq, n, float(lam))
            all_ok = all_ok and chk.ok
            worst = max(worst, chk.mgf - chk.bound)
    return CriterionResult(
        "c02", "height-MGF exponential bound on the admissible lambda grid",
        all_ok, {"max_excess": worst, "tolerance": 1e-12})


def c03_tree_metric() -> CriterionResult:
    n = 10 ** 4
    t = tree.build_tree(sequences.power_law(0.5), n, substream(3001, 0))
    rng = substream(3001, 1)
    m = 10 ** 4
    pts = [tree.sample_uniform_batch(t, m, rng) for _ in range(4)]
    (pb, po), (qb, qo), (rb, ro), (sb, so) = pts
    d_pq = tree.pairwise_distance(t, pb, po, qb, qo)
    d_rs = tree.pairwise_distance(t, rb, ro, sb, so)
    d_pr = tree.pairwise_distance(t, pb, po, rb, ro)
    d_qs = tree.pairwise_distance(t, qb, qo, sb, so)
    d_ps = tree.pairwise_distance(t, pb, po, sb, so)
    d_qr = tree.pairwise_distance(t, qb, qo, rb, ro)
    sums = np.sort(np.stack([d_pq + d_rs, d_pr + d_qs, d_ps + d_qr]), axis=0)
    four_point = float(np.max(sums[2] - sums[1]))
    triangle = float(np.max(d_pr - (d_pq + d_qr)))
    ok = four_point <= 1e-9 and triangle <= 1e-9
    return CriterionResult(
        "c03", "four-point condition and triangle inequality on 1e4 tuples",
        ok, {"four_point_excess": four_point, "triangle_excess": triangle,
             "tolerance": 1e-9})


def c04_covering_partition() -> CriterionResult:
    seq = sequences.power_law(0.5)
    n, m = 10 ** 4, 100
    t = tree.build_tree(seq, n, substream(3002, 0))
    prof = diagnostics.covering_profile(t, m)
    expect = seq.A(n) - seq.A(m)
    dev = abs(prof.hanging_length - expect)
    return CriterionResult(
        "c04", "hanging-subtree lengths partition the late mass",
        dev <= 1e-9, {"deviation": dev, "tolerance": 1e-9,
                      "subtrees": len(prof.entries)})


def c05_track_mass_recursion() -> CriterionResult:
    seq = sequences.power_law(0.5)
    ok = True
    worst_seed = -1
    for s in range(3):
        traj = diagnostics.track_mass(seq, 10 ** 3, 1, (1, 0.0, 0.5),
                                      substream(3003, s))
        if not traj.verify_recursion(seq, tol=1e-10):
            ok = False
            worst_seed = s
    return CriterionResult(
        "c05", "tree-tracked mass follows the urn recursion pathwise",
        ok, {"runs": 3, "tolerance": 1e-10, "failed_seed": worst_seed})


# -- Monte Carlo suite --------------------------------------------------------------


def c06_height_mean() -> CriterionResult:
    seq = sequences.power_law(0.5)
    n, m = 10 ** 5, 10 ** 6
    batch = tracked.sample_height_law_batch(seq, n, m, substream(3006, 0))
    mean = float(batch.values.mean())
    se = float(batch.values.std(ddof=1) / math.sqrt(m))
    target = 0.5 * sequences.h_of_a(seq, n)
    z = abs(mean - target) / se
    return CriterionResult(
        "c06", "typical-height mean matches half the height series (1e6 draws)",
        z <= 3.0, {"mean": mean, "target": target, "z": z})


def c07_mgf_monte_carlo() -> CriterionResult:
    seq = sequences.power_law(0.5)
    n, m = 10 ** 3, 10 ** 6
    lam = 0.5 / seq.sup_a(n)
    batch = tracked.sample_height_law_batch(seq, n, m, substream(3007, 0))
    ex = np.exp(lam * batch.values)
    mc = float(ex.mean())
    se = float(ex.std(ddof=1) / math.sqrt(m))
    exact = tracked.height_mgf(seq, n, lam)
    z = abs(mc - exact) / se
    return CriterionResult(
        "c07", "Monte Carlo MGF matches the exact product (1e6 draws)",
        z <= 3.0, {"mc": mc, "exact": exact, "z": z})


def c08_two_point_equivalence() -> CriterionResult:
    seq = sequences.power_law(0.5)
    n = 10 ** 4
    m = 10 ** 4
    pairs_per_tree = 10
    law = twopoint.mixture_weights(seq, n)
    crit = KS_LEVEL_FACTOR * math.sqrt(2.0 / m)
    passes = 0
    stats = []
    for s in range(5):
        pair_rng = substream(3008 + s, 1)
        emp = np.empty(m)
        for i in range(m // pairs_per_tree):
            t = tree.build_tree(seq, n, substream(3008 + s, 10 + i))
            emp[i * pairs_per_tree:(i + 1) * pairs_per_tree] = \
                twopoint.empirical_D(t, pair_rng, pairs_per_tree)
        d_law = twopoint.sample_D_batch(law, m, substream(3008 + s, 2))
        ks = float(ks_2samp(d_law, emp).statistic)
        stats.append(ks)
        passes += ks < crit
    return CriterionResult(
        "c08", "mixture law equals tree-sampled two-point law (KS, 5 seeds)",
        passes >= 3, {"passes": passes, "critical": crit,
                      "ks_max": max(stats), "ks_min": min(stats)})


def c09_urn_martingale() -> CriterionResult:
    seq = sequences.power_law(0.5)
    ens = diagnostics.urn_ensemble(seq, 10, 0.3, 10 ** 4, 10 ** 5,
                                   substream(3009, 0),
                                   checkpoints=[10 ** 2, 10 ** 3, 10 ** 4])
    zs = np.abs(ens.means - 0.3) / ens.stderrs
    return CriterionResult(
        "c09", "urn mass mean stays at m0 across checkpoints (1e5 runs)",
        bool(np.all(zs <= 3.0)), {"z_max": float(zs.max()),
                                  "means": [float(x) for x in ens.means]})


def c10_freezing_probability() -> CriterionResult:
    seq = sequences.power_law(2.0)
    n0, N, m = 100, 10 ** 5, 10 ** 5
    frac = tracked.freeze_fraction_mc(seq, n0, N, m, substream(3010, 0))
    target = seq.A(n0) / seq.A(N)
    sigma = math.sqrt(target * (1.0 - target) / m)
    z = abs(frac - target) / sigma
    return CriterionResult(
        "c10", "marked point freezing fraction matches the mass ratio",
        z <= 3.0, {"fraction": frac, "target": target, "z": z})


# -- dimension suite ------------------------------------------------------------------


def c11_two_point_tail() -> CriterionResult:
    grid = np.array([2.0 ** -k for k in range(2, 8)])
    m = 10 ** 6
    measured = {}
    ok = True
    for alpha, lo, hi in ((0.5, 1.6, 2.4), (0.75, 1.0, 1.7)):
        seq = sequences.power_law(alpha)
        # truncation level from the tail budget: the dropped mean must sit
        # well below the smallest probed radius
        K = twopoint.level_for_tail_budget(seq, float(grid[-1]) / 10.0)
        law = twopoint.mixture_weights(seq, K)
        fit = twopoint.tail_exponent(law, grid, m, substream(3011, 0))
        measured[f"slope_alpha_{alpha}"] = fit.slope
        measured[f"K_alpha_{alpha}"] = K
        ok = ok and (lo <= fit.slope <= hi)
    return CriterionResult(
        "c11", "small-distance tail exponent approximates 1/alpha",
        ok, measured)


def c12_box_dimension() -> CriterionResult:
    eps = [2.0 ** -k for k in range(3, 7)]
    res_half = diagnostics.box_dimension(sequences.power_law(0.5), [10 ** 6],
                                         eps, [3101, 3102, 3103])
    res_two = diagnostics.box_dimension(sequences.power_law(2.0), [10 ** 5],
                                        eps, [3201, 3202])
    res_seg = diagnostics.box_dimension(sequences.explicit([1.0]), [1],
                                        eps, [3301, 3302])
    ok = (1.6 <= res_half.slope <= 2.4 and 0.8 <= res_two.slope <= 1.2
          and 0.9 <= res_seg.slope <= 1.1)
    return CriterionResult(
        "c12", "covering-count slope matches 1/alpha (and 1 for thin trees)",
        ok, {"slope_alpha_0.5": res_half.slope, "slope_alpha_2": res_two.slope,
             "slope_segment": res_seg.slope})


def c13_longest_stem_scaling() -> CriterionResult:
    seq = sequences.power_law(0.5)
    pairs = []
    for ex in range(8, 16):
        n = 2 ** ex
        vals = [tree.longest_stem(tree.build_tree(seq, n, substream(3130 + s, ex)))
                for s in range(20)]
        pairs.append((n, float(np.exp(np.mean(np.log(vals))))))
    fit = sequences.fit_exponent(pairs)
    ok = -0.7 <= fit.slope <= -0.3
    return CriterionResult(
        "c13", "longest graft-free segment shrinks like a power of n",
        ok, {"slope": fit.slope, "stderr": fit.stderr})


def c14_good_branch_scaling() -> CriterionResult:
    measured = {}
    ok = True
    for alpha in (1.5, 2.0):
        seq = sequences.power_law(alpha)
        pairs = [(2 ** e,
                  diagnostics.good_branch_stats(seq, 2 ** e, 0.1).total_length)
                 for e in range(6, 17)]
        fit = sequences.fit_exponent(pairs)
        measured[f"slope_alpha_{alpha}"] = fit.slope
        ok = ok and abs(fit.slope - (1.0 - alpha)) <= 0.2
    return CriterionResult(
        "c14", "good-branch total length scales like n^(1-alpha)",
        ok, measured)


CRITERIA = {
    "c01": c01_weight_normalization,
    "c02": c02_mgf_bound,
    "c03": c03_tree_metric,
    "c04": c04_covering_partition,
    "c05": c05_track_mass_recursion,
    "c06": c06_height_mean,
    "c07": c07_mgf_monte_carlo,
    "c08": c08_two_point_equivalence,
    "c09": c09_urn_martingale,
    "c10": c10_freezing_probability,
    "c11": c11_two_point_tail,
    "c12": c12_box_dimension,
    "c13": c13_longest_stem_scaling,
    "c14": c14_good_branch_scaling,
}

SUITES = {
    "exact": ("c01", "c02", "c03", "c04", "c05"),
    "montecarlo": ("c06", "c07", "c08", "c09", "c10"),
    "dimension": ("c11", "c12", "c13", "c14"),
}


def run_criterion(cid: str) -> CriterionResult:
    return CRITERIA[cid]()


def run_suite(name: str) -> list[CriterionResult]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return [run_criterion(cid) for cid in SUITES[name]]
