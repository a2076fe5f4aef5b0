import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

import gluetree as gt
from gluetree.errors import ParameterError
from gluetree.tracked import truncation_index

KS_CRIT = lambda m: 1.95 * math.sqrt(2.0 / m)  # noqa: E731 - 0.001 level


def test_single_branch_marked_point():
    seq = gt.power_law(0.5)
    v1 = gt.substream(60, 0).random()
    tb = gt.build_with_tracked_point(seq, 1, gt.substream(60, 0))
    assert tb.x == gt.PointLocation(1, v1 * 1.0)
    assert tb.jump_total == pytest.approx(v1, rel=1e-15)


def test_marked_height_equals_jump_total():
    seq = gt.power_law(0.5)
    for s in range(5):
        tb = gt.build_with_tracked_point(seq, 2000, gt.substream(61, s))
        assert gt.height(tb.tree, tb.x) == pytest.approx(tb.jump_total,
                                                         abs=1e-12)
        assert np.all(tb.jump_contribs >= 0)


def test_marked_point_distance_is_suffix_jump_sum():
    seq = gt.power_law(0.5)
    tb = gt.build_with_tracked_point(seq, 3000, gt.substream(62, 0))
    rng = gt.substream(62, 1)
    for m in sorted(rng.integers(1, 3000, size=8)):
        xm = tb.x_at_step(int(m))
        suffix = float(np.sum(tb.jump_contribs[tb.jump_indices > m]))
        assert gt.distance(tb.tree, tb.x, xm) == pytest.approx(suffix,
                                                               abs=1e-10)


def test_marked_point_projects_onto_earlier_steps():
    seq = gt.power_law(0.5)
    tb = gt.build_with_tracked_point(seq, 1500, gt.substream(63, 0))
    for k in (1, 2, 10, 100, 1499, 1500):
        assert gt.project(tb.tree, tb.x, k) == tb.x_at_step(k)


def test_tracked_and_uniform_sampling_agree_in_law():
    # heights of the marked point vs heights of fresh uniform draws on
    # independently built trees
    seq = gt.power_law(0.5)
    n, m, per_tree = 1000, 10_000, 10
    tracked_hts = np.array([
        gt.build_with_tracked_point(seq, n, gt.substream(64, r)).jump_total
        for r in range(m)])
    uniform_hts = np.empty(m)
    rng = gt.substream(65, 0)
    for i in range(m // per_tree):
        t = gt.build_tree(seq, n, gt.substream(66, i))
        b, o = gt.sample_uniform_batch(t, per_tree, rng)
        uniform_hts[i * per_tree:(i + 1) * per_tree] = t.attach_height[b] + o
    ks = ks_2samp(tracked_hts, uniform_hts).statistic
    assert ks < KS_CRIT(m)


def test_sample_height_single_branch_mean():
    seq = gt.explicit([2.0])
    batch = gt.sample_height_law_batch(seq, 1, 100_000, gt.substream(67, 0))
    se = batch.values.std(ddof=1) / math.sqrt(batch.values.size)
    assert abs(batch.values.mean() - 1.0) <= 3 * se


def test_sample_height_mean_matches_half_height_series():
    seq = gt.power_law(0.5)
    n, m = 1000, 200_000
    batch = gt.sample_height_law_batch(seq, n, m, gt.substream(68, 0))
    se = batch.values.std(ddof=1) / math.sqrt(m)
    assert abs(batch.values.mean() - 0.5 * gt.h_of_a(seq, n)) <= 3 * se
    assert batch.truncation_error == 0.0


def test_sample_height_divergent_growth_for_constant_lengths():
    seq = gt.explicit([1.0] * 10_000)
    m = 100_000
    b1 = gt.sample_height_law_batch(seq, 100, m, gt.substream(69, 0))
    b2 = gt.sample_height_law_batch(seq, 10_000, m, gt.substream(69, 1))
    diff = b2.values.mean() - b1.values.mean()
    target = 0.5 * (gt.h_of_a(seq, 10_000) - gt.h_of_a(seq, 100))
    se = math.sqrt(b1.values.var(ddof=1) / m + b2.values.var(ddof=1) / m)
    assert abs(diff - target) <= 3 * se


def test_infinite_height_law_truncates_for_summable_tails():
    seq = gt.power_law(2.0)
    batch = gt.sample_height_law_batch(seq, None, 50_000, gt.substream(70, 0),
                                       tol=1e-6)
    assert batch.truncation_error < 1e-6
    # limit mean within noise of the half series at the truncation point
    target = 0.5 * gt.h_of_a(seq, batch.n_used)
    se = batch.values.std(ddof=1) / math.sqrt(batch.values.size)
    assert abs(batch.values.mean() - target) <= 3 * se + 1e-6


def test_infinite_height_law_refuses_divergent_series():
    seq = gt.explicit([1.0] * 100_000)
    with pytest.raises(ParameterError, match="diverge"):
        gt.sample_height_law(seq, None, gt.substream(71, 0),
                             index_cap=50_000)


def test_truncation_index_meets_budget():
    seq = gt.power_law(0.5)
    N = truncation_index(seq, 1e-2)
    assert gt.tail_h(seq, N, 64 * N) < 1e-2
    assert truncation_index(seq, 3e-2) <= N


def test_mgf_at_zero_is_one():
    assert gt.height_mgf(gt.power_law(0.5), 100, 0.0) == 1.0


def test_mgf_single_branch_closed_form():
    seq = gt.explicit([0.8])
    lam = 1.1
    expect = (math.exp(lam * 0.8) - 1.0) / (lam * 0.8)
    assert gt.height_mgf(seq, 1, lam) == pytest.approx(expect, rel=1e-14)


def test_mgf_tiny_lambda_series_branch():
    seq = gt.power_law(0.5)
    lam = 1e-12
    lm = gt.height_log_mgf(seq, 5, lam)
    assert lm == pytest.approx(lam * gt.h_of_a(seq, 5) / 2.0, rel=1e-3)


def test_mgf_monte_carlo_cross_check():
    seq = gt.power_law(0.5)
    n, m = 100, 200_000
    lam = 0.5 / seq.sup_a(n)
    batch = gt.sample_height_law_batch(seq, n, m, gt.substream(72, 0))
    ex = np.exp(lam * batch.values)
    se = ex.std(ddof=1) / math.sqrt(m)
    assert abs(ex.mean() - gt.height_mgf(seq, n, lam)) <= 3 * se


def test_exp_bound_holds_across_families_and_lambdas():
    n = 2000
    fams = [gt.power_law(0.3), gt.power_law(0.5), gt.power_law(2.0),
            gt.log_power(2.0), gt.spiked()]
    for seq in fams:
        lam_max = 1.0 / seq.sup_a(n)
        for lam in np.linspace(0.0, lam_max, 11):
            assert gt.exp_bound_check(seq, n, float(lam)).ok


def test_exp_bound_rejects_out_of_range_lambda():
    seq = gt.power_law(0.5)
    with pytest.raises(ParameterError):
        gt.exp_bound_check(seq, 100, 1.5)  # sup a = 1 so max lambda is 1
    with pytest.raises(ParameterError):
        gt.exp_bound_check(seq, 100, -0.1)


def test_freezing_fraction_small_scale_with_real_builds():
    seq = gt.power_law(2.0)
    n0, n, runs = 50, 2000, 2000
    frozen = 0
    for r in range(runs):
        tb = gt.build_with_tracked_point(seq, n, gt.substream(73, r))
        frozen += int(not np.any(tb.jump_indices > n0))
    target = seq.A(n0) / seq.A(n)
    sigma = math.sqrt(target * (1 - target) / runs)
    assert abs(frozen / runs - target) <= 3 * sigma


def test_freeze_fraction_mc_matches_mass_ratio():
    seq = gt.power_law(2.0)
    frac = gt.freeze_fraction_mc(seq, 100, 10_000, 50_000, gt.substream(74, 0))
    target = seq.A(100) / seq.A(10_000)
    sigma = math.sqrt(target * (1 - target) / 50_000)
    assert abs(frac - target) <= 3 * sigma
