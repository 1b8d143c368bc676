"""Ranking and threshold metrics for normality probabilities."""

from __future__ import annotations

import numpy as np


class SingleClass(ValueError):
    """Raised when a metric needs both classes but only one is present."""


def rankdata(values) -> np.ndarray:
    """Average (mid) ranks starting at 1; ties share the mean of their ranks."""
    values = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    mid = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(mid, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic.

    Equals P(score_pos > score_neg) + 0.5 * P(score_pos == score_neg),
    with label 1 as the positive class.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def acc(scores, labels, threshold: float = 0.5) -> float:
    """Fraction correct when predicting class 1 for score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if len(scores) == 0:
        return float("nan")
    return float(np.mean((scores >= threshold).astype(int) == labels))
