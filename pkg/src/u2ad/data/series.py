"""Core series containers, normalization, and windowing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_STD = 1e-8


@dataclass
class LabeledSeries:
    """A multivariate series of shape (L, d) with optional per-point labels."""

    values: np.ndarray
    labels: np.ndarray | None = None
    channel_names: list[str] | None = None
    source: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"series values must be a non-empty (L, d) matrix, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise ValueError(f"series contains a non-finite value at row {bad[0]}, column {bad[1]}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != (self.values.shape[0],):
                raise ValueError(
                    f"labels length {self.labels.shape} does not match series length {self.values.shape[0]}"
                )

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TimeSeriesWindow:
    """One model input of shape (N, d) plus its offset into the parent series."""

    x0: np.ndarray
    start_index: int

    def __post_init__(self) -> None:
        if self.x0.ndim != 2 or self.x0.shape[0] < 2:
            raise ValueError(f"window must be an (N, d) matrix with N >= 2, got shape {self.x0.shape}")

    @property
    def N(self) -> int:
        return self.x0.shape[0]


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean and (clamped) standard deviation from the training split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.maximum(np.asarray(self.std, dtype=np.float64), EPS_STD))


def fit_stats(series: LabeledSeries) -> NormalizationStats:
    """Per-channel mean/std (population std, clamped at EPS_STD)."""
    return NormalizationStats(mean=series.values.mean(axis=0), std=series.values.std(axis=0))


def normalize(series: LabeledSeries, stats: NormalizationStats) -> LabeledSeries:
    """Z-score each channel; labels and metadata pass through unchanged."""
    if stats.mean.shape[0] != series.channels:
        raise ValueError(f"stats dimension {stats.mean.shape[0]} does not match series channels {series.channels}")
    values = (series.values - stats.mean) / stats.std
    return LabeledSeries(values=values, labels=series.labels, channel_names=series.channel_names, source=series.source)


def denormalize(series: LabeledSeries, stats: NormalizationStats) -> LabeledSeries:
    if stats.mean.shape[0] != series.channels:
        raise ValueError(f"stats dimension {stats.mean.shape[0]} does not match series channels {series.channels}")
    values = series.values * stats.std + stats.mean
    return LabeledSeries(values=values, labels=series.labels, channel_names=series.channel_names, source=series.source)


def window(series: LabeledSeries, N: int, stride: int) -> list[TimeSeriesWindow]:
    """Slice the series into windows starting at 0, stride, 2*stride, ...

    If the last regular window does not reach the end of the series, one
    extra tail window [L-N, L) is appended so every point is covered.
    """
    L = series.length
    if N > L:
        raise ValueError(f"window length {N} exceeds series length {L}")
    if not 1 <= stride <= N:
        # stride beyond N would leave mid-series gaps, breaking full coverage
        raise ValueError(f"stride must lie in [1, {N}], got {stride}")
    starts = list(range(0, L - N + 1, stride))
    if starts[-1] + N < L and starts[-1] != L - N:
        starts.append(L - N)
    return [TimeSeriesWindow(x0=series.values[s : s + N], start_index=s) for s in starts]
