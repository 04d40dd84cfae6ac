"""Evaluation suite: episode handling, point-adjusted P/R/F1, detection
delays (ADD and its duration-normalized variant NRD), threshold-free AUC,
and range-based VUS over a swept soft-label buffer."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class EventSpan:
    """Half-open anomaly episode [start, end)."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError(f"need start < end, got [{self.start}, {self.end})")

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class EvaluationReport:
    precision: float
    recall: float
    f1: float
    add: float | None
    nrd: float | None
    auc_roc: float
    auc_pr: float
    vus_roc: float
    vus_pr: float
    n_episodes: int
    n_detected: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_table(self, name: str = "series") -> str:
        headers = ["dataset", "P", "R", "F1", "ADD", "NRD%", "AUC-ROC", "AUC-PR", "VUS-ROC", "VUS-PR"]
        row = [
            name,
            f"{self.precision:.4f}",
            f"{self.recall:.4f}",
            f"{self.f1:.4f}",
            "-" if self.add is None else f"{self.add:.2f}",
            "-" if self.nrd is None else f"{100.0 * self.nrd:.2f}",
            f"{self.auc_roc:.4f}",
            f"{self.auc_pr:.4f}",
            f"{self.vus_roc:.4f}",
            f"{self.vus_pr:.4f}",
        ]
        widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        return fmt.format(*headers) + "\n" + fmt.format(*row) + "\n"


def _as_binary(v, name: str) -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be binary")
    return arr.astype(np.int8)


def episodes(labels) -> list[EventSpan]:
    """Maximal runs of 1s as half-open spans, in order."""
    labels = _as_binary(labels, "labels")
    padded = np.concatenate([[0], labels, [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return [EventSpan(int(s), int(e)) for s, e in zip(starts, ends)]


def point_adjust(labels, predictions) -> np.ndarray:
    """Credit whole labeled episodes that contain at least one flagged point."""
    labels = _as_binary(labels, "labels")
    predictions = _as_binary(predictions, "predictions")
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions must have equal length")
    adjusted = predictions.copy()
    for span in episodes(labels):
        if adjusted[span.start : span.end].any():
            adjusted[span.start : span.end] = 1
    return adjusted


def prf1(labels, predictions) -> tuple[float, float, float]:
    labels = _as_binary(labels, "labels")
    predictions = _as_binary(predictions, "predictions")
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions must have equal length")
    tp = int(np.sum((labels == 1) & (predictions == 1)))
    fp = int(np.sum((labels == 0) & (predictions == 1)))
    fn = int(np.sum((labels == 1) & (predictions == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def add_nrd(spans: list[EventSpan], predictions) -> tuple[float | None, float | None, int]:
    """Average detection delay and its duration-normalized variant.

    The first flagged index inside an episode (raw, pre-adjustment
    predictions) sets the delay; an undetected episode contributes its full
    duration (normalized term 1).  With no episodes both are undefined.
    """
    predictions = _as_binary(predictions, "predictions")
    if not spans:
        return None, None, 0
    delays, normalized, detected = [], [], 0
    for span in spans:
        hits = np.flatnonzero(predictions[span.start : span.end])
        if hits.size:
            delay = int(hits[0])
            detected += 1
        else:
            delay = span.duration
        delays.append(delay)
        normalized.append(delay / span.duration)
    return float(np.mean(delays)), float(np.mean(normalized)), detected


def _curve_stats(pos_weight: np.ndarray, scores: np.ndarray):
    """Cumulative soft confusion over descending distinct score thresholds."""
    order = np.argsort(-scores, kind="stable")
    w = pos_weight[order]
    s = scores[order]
    boundaries = np.flatnonzero(np.diff(s) != 0)
    idx = np.concatenate([boundaries, [s.size - 1]])
    tp = np.cumsum(w)[idx]
    fp = np.cumsum(1.0 - w)[idx]
    return tp, fp, float(pos_weight.sum()), float((1.0 - pos_weight).sum())


def _auc_roc_pr(pos_weight: np.ndarray, scores: np.ndarray) -> tuple[float, float]:
    tp, fp, p_total, n_total = _curve_stats(pos_weight, scores)
    if p_total == 0 or n_total == 0:
        raise ValueError("need positive mass in both classes")
    tpr = np.concatenate([[0.0], tp / p_total])
    fpr = np.concatenate([[0.0], fp / n_total])
    auc_roc = float(np.trapezoid(tpr, fpr))
    precision = tp / np.maximum(tp + fp, 1e-300)
    recall = tp / p_total
    auc_pr = float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))
    return auc_roc, auc_pr


def auc(labels, scores, curve: str = "roc") -> float:
    """Threshold-sweep area under the ROC (trapezoidal) or PR (step) curve."""
    labels = _as_binary(labels, "labels")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ValueError("labels and scores must have equal length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if labels.min() == labels.max():
        raise ValueError("labels must contain both classes")
    roc, pr = _auc_roc_pr(labels.astype(np.float64), scores)
    if curve == "roc":
        return roc
    if curve == "pr":
        return pr
    raise ValueError(f"unknown curve {curve!r}")


def soft_labels(labels, buffer: int) -> np.ndarray:
    """Continuous labels: 1 inside episodes, ramping down as 1 - dist/(l+1)
    over ``buffer`` points on each side; overlapping ramps take the max."""
    labels = _as_binary(labels, "labels")
    if buffer < 0:
        raise ValueError("buffer must be >= 0")
    soft = labels.astype(np.float64)
    L = labels.shape[0]
    for span in episodes(labels):
        for dist in range(1, buffer + 1):
            val = 1.0 - dist / (buffer + 1.0)
            left = span.start - dist
            right = span.end - 1 + dist
            if left >= 0:
                soft[left] = max(soft[left], val)
            if right < L:
                soft[right] = max(soft[right], val)
    return soft


def vus(labels, scores, fixed_buffer: int | None = None) -> tuple[float, float]:
    """Mean soft-label AUC over buffer lengths 0..median episode duration.

    ``fixed_buffer`` restricts the sweep to a single buffer length.
    """
    labels = _as_binary(labels, "labels")
    scores = np.asarray(scores, dtype=np.float64)
    spans = episodes(labels)
    if not spans:
        raise ValueError("need at least one anomaly episode")
    if fixed_buffer is not None:
        buffers = [int(fixed_buffer)]
    else:
        l_max = max(1, int(np.floor(np.median([s.duration for s in spans]))))
        buffers = list(range(0, l_max + 1))
    rocs, prs = [], []
    for buf in buffers:
        roc, pr = _auc_roc_pr(soft_labels(labels, buf), scores)
        rocs.append(roc)
        prs.append(pr)
    return float(np.mean(rocs)), float(np.mean(prs))


def build_report(labels, scores, predictions, fixed_buffer: int | None = None) -> EvaluationReport:
    """Full evaluation: point-adjusted P/R/F1, delays on raw predictions,
    and the threshold-free curve metrics."""
    labels = _as_binary(labels, "labels")
    predictions = _as_binary(predictions, "predictions")
    spans = episodes(labels)
    adjusted = point_adjust(labels, predictions)
    precision, recall, f1 = prf1(labels, adjusted)
    add, nrd, n_detected = add_nrd(spans, predictions)
    auc_roc = auc(labels, scores, "roc")
    auc_pr = auc(labels, scores, "pr")
    vus_roc, vus_pr = vus(labels, scores, fixed_buffer)
    return EvaluationReport(
        precision=precision,
        recall=recall,
        f1=f1,
        add=add,
        nrd=nrd,
        auc_roc=auc_roc,
        auc_pr=auc_pr,
        vus_roc=vus_roc,
        vus_pr=vus_pr,
        n_episodes=len(spans),
        n_detected=n_detected,
    )
