import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pair_count_auc, threshold_ap
from safdnet.errors import TooFewSamplesError, UndefinedMetricError
from safdnet.evaluation import (
    bootstrap_ci, calibration_curve, classify_metrics, evaluate, platt_recalibrate,
    pr_auc, roc_auc,
)


def random_instance(r, n_max=200):
    n = int(r.integers(2, n_max + 1))
    y = r.integers(0, 2, n)
    y[0], y[1] = 0, 1
    # coarse scores so ties are common
    s = r.integers(0, max(2, n // 4), n) / 10.0 if r.random() < 0.5 else r.random(n)
    return s, y


def test_auc_examples():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.3] * 6, [0, 1] * 3) == 0.5


def test_auc_single_class():
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_pair_count_exact():
    r = np.random.default_rng(7)
    for _ in range(50):
        s, y = random_instance(r)
        assert roc_auc(s, y) == pair_count_auc(s, y)


def test_ap_examples():
    assert pr_auc([0.2, 0.9], [1, 0]) == 0.5
    assert pr_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    with pytest.raises(UndefinedMetricError):
        pr_auc([0.2, 0.9], [0, 0])


def test_ap_threshold_oracle():
    r = np.random.default_rng(8)
    for _ in range(50):
        s, y = random_instance(r)
        assert abs(pr_auc(s, y) - threshold_ap(s, y)) < 1e-12


@given(st.integers(0, 2**31))
def test_auc_monotone_invariance(seed):
    r = np.random.default_rng(seed)
    s, y = random_instance(r, 100)
    for f in (lambda v: v**3 + 2, lambda v: np.exp(4 * v), lambda v: np.arctan(v - 0.3)):
        assert abs(roc_auc(f(s), y) - roc_auc(s, y)) < 1e-12


@given(st.integers(0, 2**31))
def test_auc_complement_exact(seed):
    s, y = random_instance(np.random.default_rng(seed), 150)
    assert roc_auc(s, y) + roc_auc(s, 1 - y) == 1.0


def test_classify_hand_matrix():
    # precision 2/3, recall 1/2, f1 4/7 needs FN=2 (FN=1 would give recall 2/3)
    s = [0.9, 0.8, 0.7, 0.1, 0.15] + [0.2] * 6
    y = [1, 1, 0, 1, 1] + [0] * 6
    m = classify_metrics(s, y)
    assert m.precision == pytest.approx(2 / 3) and m.recall == 0.5
    assert m.f1 == pytest.approx(4 / 7) and m.accuracy == pytest.approx(8 / 11)
    m = classify_metrics(s[:4] + s[5:], y[:4] + y[5:])
    assert m.recall == pytest.approx(2 / 3) and m.accuracy == 0.8


def test_classify_conventions():
    assert classify_metrics([0.9, 0.1], [1, 0]) == (1.0, 1.0, 1.0, 1.0)
    m = classify_metrics([0.1, 0.2, 0.3], [1, 0, 1])
    assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0


@given(st.integers(0, 2**31), st.floats(0.05, 0.95))
def test_f1_harmonic_mean(seed, thr):
    s, y = random_instance(np.random.default_rng(seed), 80)
    m = classify_metrics(s, y, thr)
    if m.precision + m.recall > 0:
        assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall), abs=1e-15)


def test_bootstrap_constant_metric():
    s, y = np.linspace(0, 1, 40), np.tile([0, 1], 20)
    assert bootstrap_ci(lambda a, b: 0.42, s, y, n_boot=50) == (0.42, 0.42)


def test_bootstrap_deterministic_and_narrow():
    r = np.random.default_rng(3)
    y = r.integers(0, 2, 500)
    s = y * 2.5 + r.normal(size=500)
    a = bootstrap_ci(roc_auc, s, y, seed=11)
    assert a == bootstrap_ci(roc_auc, s, y, seed=11)
    assert a != bootstrap_ci(roc_auc, s, y, seed=12)
    assert a[1] - a[0] < 0.05 and a[0] <= roc_auc(s, y) <= a[1]


def test_bootstrap_needs_twenty():
    with pytest.raises(TooFewSamplesError):
        bootstrap_ci(roc_auc, np.arange(19.0), np.arange(19) % 2)


def test_bootstrap_all_degenerate():
    with pytest.raises(UndefinedMetricError):
        bootstrap_ci(roc_auc, np.arange(30.0), np.zeros(30), n_boot=5)


def test_calibration_simulation():
    r = np.random.default_rng(0)
    p = r.random(10_000)
    y = (r.random(10_000) < p).astype(int)
    curve = calibration_curve(p, y)
    assert sum(b.count for b in curve) == 10_000
    for b in curve:
        assert abs(b.mean_pred - b.frac_pos) < 0.05


def test_calibration_edges():
    curve = calibration_curve([0.05] * 7, [0, 1, 0, 0, 1, 0, 0])
    assert [b.count for b in curve] == [7] + [0] * 9
    assert math.isnan(curve[3].frac_pos)
    one = calibration_curve([0.2, 1.0, 0.7, 0.4], [1, 1, 0, 0], bins=1)
    assert one[0].frac_pos == 0.5 and one[0].count == 4
    assert calibration_curve([1.0], [1])[-1].count == 1
    with pytest.raises(ValueError):
        calibration_curve([1.2], [1])


def test_platt_calibrated_input():
    r = np.random.default_rng(1)
    p = r.uniform(0.02, 0.98, 10_000)
    y = (r.random(10_000) < p).astype(int)
    fit = platt_recalibrate(p, y)
    assert abs(fit.a - 1) < 0.1 and abs(fit.b) < 0.1


def test_platt_overconfident():
    r = np.random.default_rng(2)
    z = r.normal(0, 1.5, 20_000)
    y = (r.random(20_000) < 1 / (1 + np.exp(-z))).astype(int)
    over = 1 / (1 + np.exp(-2 * z))
    fit = platt_recalibrate(over, y)
    assert abs(fit.a - 0.5) < 0.05
    calibrated = fit.apply(over)
    assert abs(roc_auc(calibrated, y) - roc_auc(over, y)) < 1e-12
    assert np.all(np.diff(fit.apply(np.sort(over))) >= 0)


def test_platt_needs_both_classes():
    with pytest.raises(UndefinedMetricError):
        platt_recalibrate([0.2, 0.4], [0, 0])


def test_report_invariants():
    r = np.random.default_rng(5)
    y = r.integers(0, 2, 300)
    s = 1 / (1 + np.exp(-(y * 1.5 + r.normal(size=300))))
    rep = evaluate(s, y, horizon_min=5, n_boot=200, seed=4)
    assert rep.n == 300 and sum(c.count for c in rep.calibration) == 300
    for name in ("auroc", "auprc", "accuracy", "precision", "recall", "f1"):
        e = getattr(rep, name)
        assert 0 <= e.ci_lo <= e.point <= e.ci_hi <= 1
    assert rep.auroc.point == roc_auc(s, y)
    assert rep.to_json() == evaluate(s, y, horizon_min=5, n_boot=200, seed=4).to_json()
    assert rep.roc_points[0] == (0.0, 0.0) and rep.roc_points[-1] == (1.0, 1.0)
