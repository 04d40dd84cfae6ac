"""Per-point anomaly scores and ratio-based thresholding.

The composite criterion for one window combines three evaluation-pass
quantities: a softmax over the negated contextual gain reweights the
per-point reconstruction error, and the per-point distance of the score
field from the volume center is added on top:

    score_i = softmax(-gamma)_i * ||x_i - x_hat_i||^2 + ||s_i - c_i||^2
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class WindowScore:
    """Composite score plus its three ingredients, all length-N vectors."""

    scores: np.ndarray
    gain_weight: np.ndarray
    rec_err: np.ndarray
    center_dist: np.ndarray


@dataclass
class AnomalyScoreSeries:
    """Stitched per-point scores over a full series, with diagnostics."""

    scores: np.ndarray
    components: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class DetectionResult:
    threshold: float
    predictions: np.ndarray
    anomaly_ratio: float


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def window_anomaly_score(
    x0: np.ndarray,
    x_hat: np.ndarray,
    score_at_trec: np.ndarray,
    gamma: np.ndarray,
    center: np.ndarray,
) -> WindowScore:
    x0 = np.asarray(x0, dtype=np.float64)
    n = x0.shape[0]
    if x_hat.shape != x0.shape or score_at_trec.shape != x0.shape:
        raise ValueError("x_hat and score_at_trec must match the window shape")
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (n,):
        raise ValueError(f"gamma must have length {n}, got shape {gamma.shape}")
    if np.asarray(center).shape != x0.shape:
        raise ValueError("center must match the window shape")
    rec_err = ((x0 - x_hat) ** 2).sum(axis=-1)
    center_dist = ((np.asarray(score_at_trec) - np.asarray(center)) ** 2).sum(axis=-1)
    weights = _softmax(-gamma)
    return WindowScore(
        scores=weights * rec_err + center_dist,
        gain_weight=weights,
        rec_err=rec_err,
        center_dist=center_dist,
    )


def stitch(window_scores: list[WindowScore], starts: list[int], L: int) -> AnomalyScoreSeries:
    """Average window scores into one length-L series.

    Points covered by several windows take the mean of their window values;
    a coverage gap is an error naming the first uncovered index.
    """
    if len(window_scores) != len(starts):
        raise ValueError("window_scores and starts must have equal length")
    fields = ("scores", "gain_weight", "rec_err", "center_dist")
    sums = {f: np.zeros(L) for f in fields}
    counts = np.zeros(L)
    for ws, start in zip(window_scores, starts):
        n = ws.scores.shape[0]
        if start < 0 or start + n > L:
            raise ValueError(f"window at {start} of length {n} falls outside [0, {L})")
        for f in fields:
            sums[f][start : start + n] += getattr(ws, f)
        counts[start : start + n] += 1
    uncovered = np.flatnonzero(counts == 0)
    if uncovered.size:
        raise ValueError(f"coverage gap: index {uncovered[0]} is not covered by any window")
    out = {f: sums[f] / counts for f in fields}
    return AnomalyScoreSeries(
        scores=out["scores"],
        components={f: out[f] for f in ("gain_weight", "rec_err", "center_dist")},
    )


def threshold_by_ratio(scores: np.ndarray, ratio_percent: float, pool: np.ndarray | None = None) -> DetectionResult:
    """Binarize scores at the (100 - ratio)-th percentile of the pool.

    The pool defaults to the scores themselves; pass a train+test
    concatenation to threshold against the full evaluated distribution.
    Comparison is strict, so an all-equal pool flags nothing.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty scores")
    if not 0.0 < ratio_percent < 100.0:
        raise ValueError(f"ratio must lie in (0, 100), got {ratio_percent}")
    pool = scores if pool is None else np.asarray(pool, dtype=np.float64)
    if pool.size == 0:
        raise ValueError("empty threshold pool")
    threshold = float(np.percentile(pool, 100.0 - ratio_percent, method="linear"))
    return DetectionResult(
        threshold=threshold,
        predictions=(scores > threshold).astype(np.int8),
        anomaly_ratio=float(ratio_percent),
    )


def export_scores(path: str | Path, series: AnomalyScoreSeries, predictions: np.ndarray | None = None) -> None:
    """Write scores and diagnostics as CSV for plotting and re-thresholding."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    preds = predictions if predictions is not None else np.zeros(series.scores.shape[0], dtype=np.int8)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "score", "gain_weight", "rec_err", "center_dist", "prediction"])
        for i in range(series.scores.shape[0]):
            writer.writerow(
                [
                    i,
                    f"{series.scores[i]:.9g}",
                    f"{series.components['gain_weight'][i]:.9g}",
                    f"{series.components['rec_err'][i]:.9g}",
                    f"{series.components['center_dist'][i]:.9g}",
                    int(preds[i]),
                ]
            )
