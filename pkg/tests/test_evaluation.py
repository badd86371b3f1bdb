import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tsattack.attacks import AttackConfig, attack_dataset
from tsattack.errors import DataError, ShapeError
from tsattack.evaluation import (LossDistribution, grouped_rmse, high_freq_ratio, histogram,
                                 ks_pvalue, ks_statistic, ks_table, loss_distributions,
                                 mean_shift, sweep)
from tsattack.targets import AttackTargetSpec

sample = arrays(np.float64, st.integers(1, 40), elements=st.floats(-100, 100))


def ks_brute(a, b):
    """sup |F_a - F_b| evaluated at every pooled point by direct counting."""
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(v <= x for v in a) / len(a)
        fb = sum(v <= x for v in b) / len(b)
        best = max(best, abs(fa - fb))
    return best


def q_ks_series(lam, terms=100):
    if lam < 1e-3:
        return 1.0
    return 2 * sum((-1) ** (k - 1) * math.exp(-2 * k * k * lam * lam) for k in range(1, terms + 1))


def test_ks_matches_brute_force_on_random_pairs(rng):
    for _ in range(200):
        n, m = rng.integers(1, 40, size=2)
        # rounded values force ties
        a = np.round(rng.normal(size=n), 1)
        b = np.round(rng.normal(0.3, 1.2, size=m), 1)
        assert abs(ks_statistic(a, b) - ks_brute(a, b)) <= 1e-12


def test_ks_identical_and_disjoint():
    a = np.array([0.3, 0.1, 0.2])
    assert ks_statistic(a, a) == 0.0
    assert ks_statistic(a, a + 10) == 1.0
    assert ks_statistic([1.0, 2.0], [1.5]) == 0.5


def test_ks_empty_sample_rejected():
    with pytest.raises(DataError):
        ks_statistic([], [1.0])


@settings(max_examples=100, deadline=None)
@given(sample, sample)
def test_ks_properties(a, b):
    d = ks_statistic(a, b)
    assert 0.0 <= d <= 1.0
    assert d == ks_statistic(b, a)
    # invariant under a strictly increasing transform
    assert abs(ks_statistic(np.arctan(a / 7), np.arctan(b / 7)) - d) <= 1e-12


@pytest.mark.parametrize("d,n,m", [(0.05, 50, 50), (0.2, 40, 60), (0.5, 10, 10), (0.9, 5, 8),
                                   (0.01, 1000, 1000)])
def test_pvalue_matches_series(d, n, m):
    ne = math.sqrt(n * m / (n + m))
    lam = (ne + 0.12 + 0.11 / ne) * d
    assert ks_pvalue(d, n, m) == pytest.approx(min(1.0, q_ks_series(lam)), abs=1e-10)


def test_pvalue_extremes():
    assert ks_pvalue(0.0, 10, 10) == 1.0
    assert ks_pvalue(1.0, 500, 500) < 1e-100


def test_grouped_rmse_drops_partial_group():
    pred = np.array([1.0, 1.0, 3.0, 3.0, 9.0])
    ref = np.zeros(5)
    d = grouped_rmse(pred, ref, group_size=2)
    np.testing.assert_allclose(d.values, [1.0, 3.0])
    assert len(d) == 2 and d.n_forecasts == 5


def test_grouped_rmse_value():
    pred, ref = np.array([0.1, 0.2, 0.3, 0.4, 0.5]), np.array([0.1, 0.1, 0.1, 0.1, 0.1])
    expected = math.sqrt((0 + 0.01 + 0.04 + 0.09 + 0.16) / 5)
    assert grouped_rmse(pred, ref).values[0] == pytest.approx(expected, rel=1e-14)


def test_grouped_rmse_shape_mismatch():
    with pytest.raises(ShapeError):
        grouped_rmse(np.zeros(4), np.zeros(5))


def test_ks_table_pairs_and_grouping_check():
    o = LossDistribution([0.1, 0.2, 0.3], "original", 5, 15)
    t = LossDistribution([0.1, 0.2, 0.35], "targeted", 5, 15)
    u = LossDistribution([0.9, 1.0, 1.1], "untargeted", 5, 15)
    rep = ks_table(o, t, u)
    assert rep.statistics == {"O-T": pytest.approx(1 / 3), "O-U": 1.0, "T-U": 1.0}
    assert rep.sizes == {"O": 3, "T": 3, "U": 3}
    assert 0 <= rep.pvalues["O-T"] <= 1
    with pytest.raises(DataError):
        ks_table(o, t, LossDistribution([1.0] * 3, "untargeted", 4, 12))


def test_histogram_shares_edges():
    a = LossDistribution([0.0, 0.1, 0.2], "original", 5, 15)
    b = LossDistribution([0.5, 1.0], "targeted", 5, 10)
    edges, counts = histogram([a, b], bins=4)
    np.testing.assert_allclose(edges, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert counts["original"].tolist() == [3, 0, 0, 0]
    assert counts["targeted"].tolist() == [0, 0, 1, 1]


def test_high_freq_ratio():
    x0 = np.array([0.0, 1.0, 2.0, 3.0])
    assert high_freq_ratio(x0, x0) == 0.0
    assert high_freq_ratio(x0, x0 + 0.3) < 1e-30  # constant shift has no differences
    alt = x0 + 0.1 * np.array([1, -1, 1, -1])
    assert high_freq_ratio(x0, alt) == pytest.approx(3 * 0.04 / 3)
    assert high_freq_ratio(np.zeros(3), np.array([0.0, 0.1, 0.0])) == math.inf


def test_loss_distributions_from_results(ar1_model):
    model, _, te, _ = ar1_model
    sub = te.subset(slice(0, 52))
    tg = attack_dataset(model, sub, AttackTargetSpec("DTA", 1), AttackConfig("pgd", 0.1))
    ut = attack_dataset(model, sub, AttackTargetSpec("UNTARGETED"), AttackConfig("pgd", 0.1))
    o, t, u = loss_distributions(tg, ut)
    assert len(o) == len(t) == len(u) == 10
    np.testing.assert_allclose(o.values, grouped_rmse(tg.clean_pred, sub.y).values)
    o2, _, _ = loss_distributions(tg, ut, reference="clean")
    assert (o2.values == 0).all()
    ctl = attack_dataset(model, sub, AttackTargetSpec("DTA", 1), AttackConfig("pgd", 0.0))
    assert ks_table(*loss_distributions(ctl, ut)).statistics["O-T"] == 0.0
    with pytest.raises(DataError):
        loss_distributions(tg, attack_dataset(model, te.subset(slice(1, 53)),
                                              AttackTargetSpec("UNTARGETED"),
                                              AttackConfig("pgd", 0.1)))


def test_sweep_output_shift_grows_with_budget(ar1_model):
    model, _, te, _ = ar1_model
    sub = te.subset(slice(0, 40))
    curves = sweep(model, sub, AttackTargetSpec("DTA", 1), ["fgsm", "mapgd"], [0.0, 0.05, 0.2])
    for curve in curves.values():
        shifts = [p.output_rmse for p in curve.points]
        assert shifts[0] == 0.0 and shifts[0] < shifts[1] < shifts[2]
        assert all(p.mean_linf <= p.epsilon + 1e-12 for p in curve.points)
    res = attack_dataset(model, sub, AttackTargetSpec("DTA", -1), AttackConfig("pgd", 0.2))
    assert mean_shift(res) < 0


def test_grouped_rmse_spec_examples(rng):
    p = rng.normal(size=12)
    assert (grouped_rmse(p, p).values == 0).all()
    r = rng.normal(size=12)
    np.testing.assert_allclose(grouped_rmse(p, r, 1).values, np.abs(p - r), rtol=1e-15)
    assert len(grouped_rmse(p, r, 5)) == 2


def test_ks_spec_examples(rng):
    assert ks_statistic([1.0, 2.0, 3.0], [10.0, 11.0, 12.0]) == 1.0
    a, b = rng.normal(size=50), rng.normal(0.5, 1, size=50)
    assert abs(ks_statistic(a, b) - ks_brute(a, b)) <= 1e-12
    assert ks_pvalue(0.0, 50, 50) >= 0.999
    assert ks_pvalue(1.0, 50, 50) < 1e-10
    o = LossDistribution(a ** 2, "original", 5, 250)
    assert ks_table(o, LossDistribution(a ** 2, "targeted", 5, 250),
                    LossDistribution(b ** 2, "untargeted", 5, 250)).statistics["O-T"] == 0.0


def test_histogram_counts(rng):
    single = LossDistribution([0.3] * 7, "original", 5, 35)
    _, counts = histogram([single], bins=5)
    assert np.count_nonzero(counts["original"]) == 1 and counts["original"].sum() == 7
    d = [LossDistribution(rng.uniform(size=n), lab, 5, 5 * n)
         for n, lab in ((11, "original"), (11, "targeted"), (11, "untargeted"))]
    edges, counts = histogram(d, bins=7)
    assert len(edges) == 8 and all(c.sum() == 11 for c in counts.values())


def test_alternating_perturbation_is_high_frequency():
    x0 = np.linspace(0.2, 0.21, 5)
    alt = x0 + 0.05 * np.array([1, -1, 1, -1, 1])
    assert high_freq_ratio(x0, alt) > 100


def test_fgsm_l2_non_decreasing_in_budget(ar1_model):
    model, _, te, _ = ar1_model
    sub = te.subset(slice(0, 30))
    l2 = [attack_dataset(model, sub, AttackTargetSpec("ATA", tau=0.4),
                         AttackConfig("fgsm", e)).l2 for e in (0.0, 0.01, 0.05, 0.2)]
    assert (l2[0] == 0).all()
    for lo, hi in zip(l2, l2[1:]):
        assert (hi >= lo).all()
