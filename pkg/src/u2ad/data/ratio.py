"""Anomaly-ratio selection by two-cluster partitioning of training scores."""

from __future__ import annotations

import numpy as np

MIN_SCORES = 100


class DegenerateScoresError(ValueError):
    """All scores identical; no two-cluster partition exists."""


def gap_statistic_ratio(train_scores) -> float:
    """Percentage of scores falling in the upper of two 1-D clusters.

    The partition is the exact two-cluster k-means solution, found by
    scanning all contiguous splits of the sorted scores (optimal clusters
    are contiguous in one dimension).  Returns 100 * upper / total.
    """
    scores = np.asarray(train_scores, dtype=np.float64).ravel()
    if scores.size < MIN_SCORES:
        raise ValueError(f"need at least {MIN_SCORES} scores, got {scores.size}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if np.any(scores < 0):
        raise ValueError("scores must be nonnegative")
    s = np.sort(scores)
    if s[0] == s[-1]:
        raise DegenerateScoresError(
            "all scores are identical; no two-cluster partition exists "
            "(fall back to the configured default anomaly ratio)"
        )
    n = s.size
    csum = np.concatenate([[0.0], np.cumsum(s)])
    csq = np.concatenate([[0.0], np.cumsum(s * s)])

    def sse(i: int, j: int) -> np.ndarray:
        # within-cluster sum of squares of s[i:j], vectorized over split index
        cnt = j - i
        tot = csum[j] - csum[i]
        return (csq[j] - csq[i]) - tot * tot / cnt

    k = np.arange(1, n)
    cost = sse(0, k) + sse(k, n)
    split = int(k[np.argmin(cost)])
    upper = n - split
    return 100.0 * upper / n
