"""Evaluation metrics: MAE/RMSE (optionally circular), ranking AUC, recall.

AUC uses the rank statistic with half credit for ties, which equals exact
pair counting. Bearing errors use the minimal arc; multi-target bearing
sets are matched by minimum-cost assignment before scoring.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def _paired(predictions, truths) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("need at least one pair")
    return p, t


def _errors(predictions, truths, circular: bool) -> np.ndarray:
    p, t = _paired(predictions, truths)
    diff = p - t
    if circular:
        diff = (diff + 180.0) % 360.0 - 180.0
    return diff


def mae(predictions, truths, circular: bool = False) -> float:
    """Mean absolute error; circular uses the minimal arc in degrees."""
    return float(np.mean(np.abs(_errors(predictions, truths, circular))))


def rmse(predictions, truths, circular: bool = False) -> float:
    """Root mean squared error; circular as in mae."""
    return float(np.sqrt(np.mean(_errors(predictions, truths, circular) ** 2)))


def auc(scores, labels) -> float:
    """Probability that a positive outscores a negative, ties worth 0.5.

    Computed from average ranks (Mann-Whitney); equals brute-force pair
    counting exactly.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative sample")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def recall(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of positives scoring strictly above the threshold."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos = y == 1
    if not np.any(pos):
        raise ValueError("need at least one positive sample")
    return float(np.mean(s[pos] > threshold))


def match_bearings(predicted, truths) -> tuple[np.ndarray, np.ndarray]:
    """Pair predicted and true bearing sets by minimum total circular error.

    Unequal sizes are handled by scoring the matched pairs only; callers
    account for misses/false alarms separately. Returns matched
    (predictions, truths) arrays.
    """
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.size == 0 or t.size == 0:
        return np.empty(0), np.empty(0)
    diff = np.abs(p[:, None] - t[None, :]) % 360.0
    cost = np.minimum(diff, 360.0 - diff)
    rows, cols = linear_sum_assignment(cost)
    return p[rows], t[cols]
