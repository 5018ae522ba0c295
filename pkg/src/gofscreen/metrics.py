"""Evaluation metrics: AUROC, AUPRC, Brier score, log loss, TNR at fixed TPR."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

LOGLOSS_CLIP = 1e-15
METRIC_NAMES = ("auroc", "tnr_at_tpr95", "auprc", "brier", "log_loss")


class MetricUndefinedError(ValueError):
    """The metric needs both classes (or at least one positive)."""


@dataclass(frozen=True)
class MetricSet:
    auroc: float
    auprc: float
    brier: float
    log_loss: float
    tnr_at_tpr95: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _inputs(scores, labels):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return s, y.astype(bool)


def _need_both(y):
    if y.all() or not y.any():
        raise MetricUndefinedError("metric undefined when only one class is present")


def _average_ranks(s: np.ndarray) -> np.ndarray:
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # tie groups
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    avg = (starts + ends + 1) / 2.0  # 1-based average rank of each group
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auroc(scores, labels) -> float:
    """P(score of a positive > score of a negative), ties counting one half."""
    s, y = _inputs(scores, labels)
    _need_both(y)
    n1 = int(y.sum())
    n0 = y.size - n1
    r = _average_ranks(s)
    return float((r[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def _descending_counts(s, y):
    """Cumulative (TP, FP) after each distinct threshold, highest score first."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last]
    fp = np.cumsum(~y_sorted)[last]
    return s_sorted[last], tp, fp


def auprc(scores, labels) -> float:
    """Average precision: sum over thresholds of (recall step) * precision."""
    s, y = _inputs(scores, labels)
    P = int(y.sum())
    if P == 0:
        raise MetricUndefinedError("average precision undefined without positives")
    _, tp, fp = _descending_counts(s, y)
    precision = tp / (tp + fp)
    recall = tp / P
    dr = np.diff(np.r_[0.0, recall])
    return float(np.sum(dr * precision))


def brier_and_logloss(probs, labels) -> tuple[float, float]:
    p, y = _inputs(probs, labels)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    yf = y.astype(float)
    brier = float(np.mean((p - yf) ** 2))
    pc = np.clip(p, LOGLOSS_CLIP, 1.0 - LOGLOSS_CLIP)
    ll = float(-np.mean(yf * np.log(pc) + (1.0 - yf) * np.log(1.0 - pc)))
    return brier, ll


def tnr_at_tpr(scores, labels, target: float = 0.95) -> float:
    """TNR at the highest threshold ``t`` (rule: positive iff score >= t) with TPR >= target."""
    s, y = _inputs(scores, labels)
    _need_both(y)
    P = int(y.sum())
    N = y.size - P
    _, tp, fp = _descending_counts(s, y)
    ok = np.flatnonzero(tp / P >= target)
    if ok.size == 0:
        return 0.0
    k = ok[0]
    return float((N - fp[k]) / N)


def evaluate(probs, labels) -> MetricSet:
    b, ll = brier_and_logloss(probs, labels)
    return MetricSet(
        auroc=auroc(probs, labels),
        auprc=auprc(probs, labels),
        brier=b,
        log_loss=ll,
        tnr_at_tpr95=tnr_at_tpr(probs, labels, 0.95),
    )
