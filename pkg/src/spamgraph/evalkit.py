"""Ranking metrics: AUC and precision/recall over a top-ranked budget."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata


def auc(scores, labels) -> float:
    """Rank-based AUC (Mann-Whitney), ties handled via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores, method="average")
    r_pos = float(np.sum(ranks[labels == 1]))
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def precision_recall_at_ratio(scores, labels, ratio: float) -> tuple[float, float]:
    """Flag the top round(ratio*n) nodes as spam; score ties break by index.

    Returns (precision, recall) against the binary labels.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(scores)
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0:
        raise ValueError("labels contain no positives")
    k = math.floor(ratio * n + 0.5)  # round half up
    if k == 0:
        raise ValueError(f"ratio {ratio} selects zero nodes out of {n}")
    # Descending score, ascending index on ties; stable sort keeps index order.
    order = np.argsort(-scores, kind="stable")[:k]
    tp = int(np.sum(labels[order] == 1))
    return tp / k, tp / n_pos


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) points of the ROC curve at every distinct threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    for i in range(len(order)):
        if sorted_labels[i] == 1:
            tp += 1
        else:
            fp += 1
        if i + 1 == len(order) or sorted_scores[i + 1] != sorted_scores[i]:
            points.append((fp / n_neg, tp / n_pos))
    return points
