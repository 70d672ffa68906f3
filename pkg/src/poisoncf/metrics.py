"""Attack evaluation: prediction shift, per-item averages and a detection test."""
from __future__ import annotations

import numpy as np
from scipy.special import stdtr

from .ratings import MaliciousMatrix, SparseRatings


def rmse_unseen(Mhat, Mbar, observed) -> float:
    Mhat = np.asarray(Mhat, dtype=float)
    Mbar = np.asarray(Mbar, dtype=float)
    unseen = ~np.asarray(observed, dtype=bool)
    if Mhat.shape != Mbar.shape or unseen.shape != Mhat.shape:
        raise ValueError("shape mismatch")
    count = int(unseen.sum())
    if count == 0:
        raise ValueError("no unseen entries to evaluate")
    return float(np.sqrt(np.sum((Mhat - Mbar)[unseen] ** 2) / count))


def avg_item_rating(Mhat, j: int) -> float:
    Mhat = np.asarray(Mhat, dtype=float)
    if not 0 <= j < Mhat.shape[1]:
        raise IndexError(f"item {j} out of range")
    return float(Mhat[:, j].mean())


def paired_t_test(x, y) -> tuple[float, float]:
    """Two-sided paired t-test; returns ``(t, p)``.

    Fewer than two pairs or zero-variance differences give ``(0.0, 1.0)``.
    """
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    n = len(d)
    if n < 2:
        return 0.0, 1.0
    sd = d.std(ddof=1)
    if not sd > 0:
        return 0.0, 1.0
    t = d.mean() / (sd / np.sqrt(n))
    p = 2.0 * stdtr(n - 1, -abs(t))
    return float(t), float(min(max(p, 0.0), 1.0))


def item_popularity(normal: SparseRatings) -> np.ndarray:
    """Fraction of normal users who rated each item."""
    return normal.col_counts() / max(normal.num_users, 1)


def item_choice_t_test(normal: SparseRatings, malicious: MaliciousMatrix) -> tuple[float, float]:
    """Test whether malicious profiles pick items the way normal users do.

    Every malicious profile is scored by the mean popularity of the items it
    rated and paired with the score expected of a normal profile, which is
    the popularity of the item behind an average normal rating. Uniformly
    chosen items score low against a skewed catalogue.
    """
    if normal.num_items < 2:
        raise ValueError("need at least two items")
    if malicious.num_items != normal.num_items:
        raise ValueError("item counts differ")
    pop = item_popularity(normal)
    expected = float(pop[normal.items].mean()) if normal.nnz else 0.0
    counts = malicious.row_counts()
    sums = np.bincount(malicious.users, pop[malicious.items], malicious.num_users)
    active = counts > 0
    scores = sums[active] / counts[active]
    return paired_t_test(scores, np.full(len(scores), expected))
