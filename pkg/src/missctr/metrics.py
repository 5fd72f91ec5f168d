"""Ranking and calibration metrics.

AUC is the Mann-Whitney rank statistic with average ranks on ties,
which matches brute-force pair counting (ties worth 0.5) exactly, not
just approximately: both numerators are sums of halves, exact in
float64 at these scales, and the denominators are identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .base_model import logloss as _logloss_op
from .errors import MetricError


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUC undefined: {n_pos} positives, {n_neg} negatives")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[order[j]] == s[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)  # average of 1-based ranks i+1..j
        i = j
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss_value(scores: np.ndarray, labels: np.ndarray) -> float:
    """Same clipped binary cross-entropy the trainer optimizes."""
    with ad.no_grad():
        return float(_logloss_op(ad.constant(np.asarray(scores, dtype=np.float64)), labels).data)


@dataclass
class EvalReport:
    auc: float
    logloss: float
    n_pos: int
    n_neg: int


def evaluate_scores(scores: np.ndarray, labels: np.ndarray) -> EvalReport:
    y = np.asarray(labels)
    return EvalReport(
        auc=auc(scores, y),
        logloss=logloss_value(scores, y),
        n_pos=int((y == 1).sum()),
        n_neg=int((y == 0).sum()),
    )
