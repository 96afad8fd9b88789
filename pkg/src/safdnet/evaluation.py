"""Ranking and thresholded metrics, percentile bootstrap CIs, calibration and Platt scaling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import rankdata

from .errors import FitError, TooFewSamplesError, UndefinedMetricError

log = logging.getLogger(__name__)


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores vs {len(y)} labels")
    return s, y


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUROC with half credit for ties."""
    s, y = _as_arrays(scores, labels)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUROC needs both classes")
    ranks = rankdata(s)  # average ranks, so tied pairs score 1/2
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def _sweep(s, y):
    """Cumulative TP/FP at each distinct threshold, scores descending."""
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return s[last], tp, fp


def roc_curve(scores, labels):
    s, y = _as_arrays(scores, labels)
    thr, tp, fp = _sweep(s, y)
    P, N = y.sum(), len(y) - y.sum()
    fpr = np.r_[0.0, fp / N] if N else np.r_[0.0, fp * 0.0]
    tpr = np.r_[0.0, tp / P] if P else np.r_[0.0, tp * 0.0]
    return fpr, tpr, np.r_[np.inf, thr]


def pr_curve(scores, labels):
    s, y = _as_arrays(scores, labels)
    thr, tp, fp = _sweep(s, y)
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    return recall, precision, thr


def pr_auc(scores, labels) -> float:
    """Average precision: sum of precision times recall increments, ties grouped."""
    s, y = _as_arrays(scores, labels)
    if y.sum() == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    recall, precision, _ = pr_curve(s, y)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


class ClassMetrics(NamedTuple):
    accuracy: float
    precision: float
    recall: float
    f1: float


def classify_metrics(scores, labels, threshold: float = 0.5) -> ClassMetrics:
    """Confusion-matrix metrics with ``score >= threshold`` predicted positive.

    Precision, recall and F1 are 0 when their denominator is 0.
    """
    s, y = _as_arrays(scores, labels)
    if len(s) == 0:
        raise ValueError("empty input")
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassMetrics((tp + tn) / len(s), precision, recall, f1)


def bootstrap_ci(
    metric_fn: Callable[[np.ndarray, np.ndarray], float],
    scores,
    labels,
    n_boot: int = 1000,
    seed: int = 0,
    level: float = 0.95,
    max_retries: int = 10,
) -> tuple[float, float]:
    """Percentile interval over resamples with replacement.

    Resamples lacking either class are redrawn up to ``max_retries`` times and
    then skipped.  Each resample has its own child seed, so results do not
    depend on evaluation order.
    """
    s, y = _as_arrays(scores, labels)
    n = len(s)
    if n < 20:
        raise TooFewSamplesError(f"bootstrap needs at least 20 samples, got {n}")
    values, skipped = [], 0
    for child in np.random.SeedSequence(seed).spawn(n_boot):
        rng = np.random.default_rng(child)
        for _ in range(max_retries + 1):
            idx = rng.integers(0, n, n)
            yb = y[idx]
            if 0 < yb.sum() < n:
                values.append(metric_fn(s[idx], yb))
                break
        else:
            skipped += 1
    if skipped:
        log.warning("bootstrap: %d of %d resamples skipped (single class)", skipped, n_boot)
    if not values:
        raise UndefinedMetricError("every bootstrap resample was single-class")
    alpha = (1 - level) / 2
    lo, hi = np.percentile(values, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


class CalibrationBin(NamedTuple):
    bin_lo: float
    bin_hi: float
    mean_pred: float
    frac_pos: float
    count: int


def calibration_curve(scores, labels, bins: int = 10) -> list[CalibrationBin]:
    """Equal-width bins on [0, 1]; a score of exactly 1 falls in the last bin."""
    s, y = _as_arrays(scores, labels)
    if np.any((s < 0) | (s > 1)):
        raise ValueError("scores must lie in [0, 1]")
    which = np.minimum((s * bins).astype(np.int64), bins - 1)
    out = []
    for b in range(bins):
        m = which == b
        c = int(m.sum())
        mean_pred = float(s[m].mean()) if c else math.nan
        frac = float(y[m].mean()) if c else math.nan
        out.append(CalibrationBin(b / bins, (b + 1) / bins, mean_pred, frac, c))
    return out


def _logit(s):
    s = np.clip(np.asarray(s, dtype=np.float64), 1e-7, 1 - 1e-7)
    return np.log(s) - np.log1p(-s)


class PlattScaling(NamedTuple):
    a: float
    b: float

    def apply(self, scores) -> np.ndarray:
        z = self.a * _logit(scores) + self.b
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def platt_recalibrate(dev_scores, dev_labels, max_iter: int = 1000, tol: float = 1e-10) -> PlattScaling:
    """Fit ``sigmoid(a * logit(s) + b)`` by Newton's method on the mean BCE."""
    s, y = _as_arrays(dev_scores, dev_labels)
    if y.min() == y.max():
        raise UndefinedMetricError("Platt scaling needs both classes")
    z = _logit(s)
    A = np.column_stack([z, np.ones_like(z)])
    theta = np.array([1.0, 0.0])
    for _ in range(max_iter):
        p = 0.5 * (1.0 + np.tanh(0.5 * (A @ theta)))
        grad = A.T @ (p - y) / len(y)
        w = p * (1 - p)
        hess = (A * w[:, None]).T @ A / len(y) + 1e-12 * np.eye(2)
        step = np.linalg.solve(hess, grad)
        # halve the step until the loss does not increase
        loss = _bce(A @ theta, y)
        t = 1.0
        while t > 1e-8 and _bce(A @ (theta - t * step), y) > loss + 1e-15:
            t *= 0.5
        theta = theta - t * step
        if np.max(np.abs(t * step)) < tol:
            return PlattScaling(float(theta[0]), float(theta[1]))
    raise FitError(f"Platt scaling did not converge in {max_iter} iterations")


def _bce(z, y):
    # log(1 + exp(-z)) for y=1 and log(1 + exp(z)) for y=0, stably
    return float(np.mean(np.logaddexp(0.0, np.where(y == 1, -z, z))))


# ---------------------------------------------------------------- report


@dataclass
class Estimate:
    point: float
    ci_lo: float
    ci_hi: float


@dataclass
class EvalReport:
    horizon_min: int
    n: int
    auroc: Estimate
    auprc: Estimate
    accuracy: Estimate
    precision: Estimate
    recall: Estimate
    f1: Estimate
    roc_points: list[tuple[float, float]] = field(default_factory=list)
    pr_points: list[tuple[float, float]] = field(default_factory=list)
    calibration: list[CalibrationBin] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["calibration"] = [c._asdict() for c in self.calibration]
        return d

    def to_json(self) -> str:
        def clean(o):
            if isinstance(o, float) and not math.isfinite(o):
                return None
            if isinstance(o, dict):
                return {k: clean(v) for k, v in o.items()}
            if isinstance(o, (list, tuple)):
                return [clean(v) for v in o]
            return o

        return json.dumps(clean(self.to_dict()), indent=2) + "\n"


def _estimate(fn, s, y, n_boot, seed) -> Estimate:
    point = fn(s, y)
    lo, hi = bootstrap_ci(fn, s, y, n_boot=n_boot, seed=seed)
    # percentile intervals need not cover the point estimate; widen to keep it inside
    return Estimate(point, min(lo, point), max(hi, point))


def evaluate(scores, labels, horizon_min: int = 0, n_boot: int = 1000, seed: int = 0,
             threshold: float = 0.5, bins: int = 10) -> EvalReport:
    s, y = _as_arrays(scores, labels)
    metrics = {
        "auroc": roc_auc,
        "auprc": pr_auc,
        "accuracy": lambda a, b: classify_metrics(a, b, threshold).accuracy,
        "precision": lambda a, b: classify_metrics(a, b, threshold).precision,
        "recall": lambda a, b: classify_metrics(a, b, threshold).recall,
        "f1": lambda a, b: classify_metrics(a, b, threshold).f1,
    }
    est = {k: _estimate(fn, s, y, n_boot, seed) for k, fn in metrics.items()}
    fpr, tpr, _ = roc_curve(s, y)
    recall, precision, _ = pr_curve(s, y)
    return EvalReport(
        horizon_min, len(s), **est,
        roc_points=list(zip(fpr.tolist(), tpr.tolist())),
        pr_points=list(zip(recall.tolist(), precision.tolist())),
        calibration=calibration_curve(s, y, bins),
    )
