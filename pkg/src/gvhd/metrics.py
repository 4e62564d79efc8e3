"""Ranking and operating-point metrics for binary risk scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError


def _split(labels, scores):
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise ValueError(f"labels {y.shape} and scores {s.shape} differ")
    return y, s


def roc_auc(labels, scores) -> float:
    """P(random positive outranks random negative), ties counting one half.

    Computed from mid-ranks (Mann-Whitney U); the numerator is an exact
    half-integer so the result equals explicit pair counting.
    """
    y, s = _split(labels, scores)
    n_pos = int((y == 1).sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(labels, scores) -> float:
    """Average precision: sum over ranked prefixes of (recall gain) x precision.

    Ties are ordered by a stable sort on (score desc, index asc).
    """
    y, s = _split(labels, scores)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = (y[order] == 1).astype(np.float64)
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, y.size + 1)
    return float((hits * precision).sum() / n_pos)


@dataclass
class Confusion:
    recall: float
    specificity: float
    tp: int
    fp: int
    tn: int
    fn: int
    missing_class: str | None = None


def confusion_at_threshold(labels, scores, threshold: float) -> Confusion:
    """Counts with ``score >= threshold`` called positive.

    When a class is absent its rate is reported as NaN and named in
    ``missing_class``.
    """
    y, s = _split(labels, scores)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fn = int(np.sum(~pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    missing = None
    recall = tp / (tp + fn) if tp + fn else float("nan")
    spec = tn / (tn + fp) if tn + fp else float("nan")
    if tp + fn == 0:
        missing = "positive"
    elif tn + fp == 0:
        missing = "negative"
    return Confusion(recall, spec, tp, fp, tn, fn, missing)


def threshold_candidates(scores) -> np.ndarray:
    u = np.unique(np.asarray(scores, dtype=np.float64))
    if u.size == 1:
        return u
    return (u[:-1] + u[1:]) / 2.0


def select_threshold(labels, scores) -> float:
    """Threshold maximising Youden's J over midpoints of adjacent distinct scores.

    Ties in J go to the candidate with the higher specificity.
    """
    y, s = _split(labels, scores)
    if (y == 1).sum() == 0 or (y == 0).sum() == 0:
        raise UndefinedMetricError("threshold selection needs both classes")
    best = None
    for theta in threshold_candidates(s):
        c = confusion_at_threshold(y, s, theta)
        key = (c.recall + c.specificity - 1.0, c.specificity)
        if best is None or key > best[0]:
            best = (key, float(theta))
    return best[1]


def youden_j(labels, scores, threshold: float) -> float:
    c = confusion_at_threshold(labels, scores, threshold)
    return c.recall + c.specificity - 1.0
