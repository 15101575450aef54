"""Ranking metrics: binary/macro AUROC (Mann-Whitney) and the KS statistic."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


def _binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("binary labels must be 0 or 1")
    pos = labels == 1
    if pos.all() or not pos.any():
        raise UndefinedMetricError("metric needs both positive and negative examples")
    return scores, pos


def auroc_binary(scores, labels) -> float:
    """P(random positive outranks random negative), ties counted as one half."""
    scores, pos = _binary(scores, labels)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_macro(scores, labels) -> float:
    """Unweighted mean of one-vs-rest AUROC over classes present in ``labels``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise ValueError("scores must be [N, C] with one label per row")
    present = [c for c in np.unique(labels) if 0 <= c < scores.shape[1]]
    if len(present) < 2:
        raise UndefinedMetricError("macro AUROC needs at least two classes present")
    return float(np.mean([auroc_binary(scores[:, c], (labels == c).astype(int)) for c in present]))


def ks_score(scores, labels) -> float:
    """max_t |F_pos(t) - F_neg(t)| with F the empirical CDF P(score <= t)."""
    scores, pos = _binary(scores, labels)
    thresholds = np.unique(scores)
    sp = np.sort(scores[pos])
    sn = np.sort(scores[~pos])
    cdf_pos = np.searchsorted(sp, thresholds, side="right") / len(sp)
    cdf_neg = np.searchsorted(sn, thresholds, side="right") / len(sn)
    return float(np.max(np.abs(cdf_pos - cdf_neg)))
