"""Seeded synthetic series with five injected anomaly classes.

The base signal is a per-channel sum of sinusoids plus Gaussian noise.
Injected anomalies follow a small taxonomy:

* global      single point pushed far outside the channel's value range
* contextual  single point plausible globally but far from its local mean
* shapelet    span rewritten with a different waveform of the same amplitude
* seasonal    span regenerated with its frequencies scaled up >= 2x
* trend       span with an added linear drift

Each anomaly lands on one randomly chosen channel; labels mark the injected
points/spans exactly.  A seed fully determines the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .series import LabeledSeries

ANOMALY_KINDS = ("global", "contextual", "shapelet", "seasonal", "trend")
POINT_KINDS = ("global", "contextual")


@dataclass(frozen=True)
class SyntheticSpec:
    length: int
    channels: int
    noise: float = 0.05
    amplitude: float = 1.0
    components: int = 2
    period_range: tuple[int, int] = (25, 80)
    mix: dict[str, int] = field(default_factory=dict)
    length_range: tuple[int, int] = (20, 50)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.length < 1 or self.channels < 1:
            raise ValueError("length and channels must be >= 1")
        if self.noise < 0:
            raise ValueError("noise level must be >= 0")
        for kind, count in self.mix.items():
            if kind not in ANOMALY_KINDS:
                raise ValueError(f"unknown anomaly kind {kind!r}, expected one of {ANOMALY_KINDS}")
            if count < 0:
                raise ValueError(f"anomaly count for {kind!r} must be >= 0")
        if not 1 <= self.length_range[0] <= self.length_range[1]:
            raise ValueError(f"invalid anomaly length range {self.length_range}")
        worst = sum(
            count * (1 if kind in POINT_KINDS else self.length_range[1]) for kind, count in self.mix.items()
        )
        if worst > 0.2 * self.length:
            raise ValueError(
                f"anomaly mix can cover up to {worst} points, more than 20% of length {self.length}"
            )


def _base_signal(spec: SyntheticSpec, rng: np.random.Generator):
    """Per-channel sinusoid parameters and the resulting clean signal."""
    t = np.arange(spec.length, dtype=np.float64)
    periods = rng.uniform(spec.period_range[0], spec.period_range[1], size=(spec.channels, spec.components))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(spec.channels, spec.components))
    weights = rng.uniform(0.5, 1.0, size=(spec.channels, spec.components))
    weights *= spec.amplitude / weights.sum(axis=1, keepdims=True)
    clean = np.zeros((spec.length, spec.channels))
    for c in range(spec.channels):
        for j in range(spec.components):
            clean[:, c] += weights[c, j] * np.sin(2.0 * np.pi * t / periods[c, j] + phases[c, j])
    return clean, periods, phases, weights


def _plan_events(spec: SyntheticSpec, rng: np.random.Generator) -> list[tuple[str, int, int]]:
    """Disjoint (kind, start, length) placements, one per segment of the series."""
    kinds: list[str] = []
    for kind in ANOMALY_KINDS:
        kinds.extend([kind] * spec.mix.get(kind, 0))
    if not kinds:
        return []
    rng.shuffle(kinds)
    margin = 10
    segment = spec.length // len(kinds)
    events = []
    for i, kind in enumerate(kinds):
        length = 1 if kind in POINT_KINDS else int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
        lo = i * segment + margin
        hi = (i + 1) * segment - margin - length
        if hi < lo:
            raise ValueError(
                f"anomaly mix infeasible for length {spec.length}: "
                f"segment of {segment} points cannot host a {kind} anomaly of length {length}"
            )
        start = int(rng.integers(lo, hi + 1))
        events.append((kind, start, length))
    return events


def generate_synthetic(spec: SyntheticSpec) -> LabeledSeries:
    rng = np.random.default_rng(spec.seed)
    clean, periods, phases, weights = _base_signal(spec, rng)
    noise = rng.normal(0.0, spec.noise, size=clean.shape) if spec.noise > 0 else np.zeros_like(clean)
    values = clean + noise
    labels = np.zeros(spec.length, dtype=np.int8)
    events = _plan_events(spec, rng)
    t = np.arange(spec.length, dtype=np.float64)
    # magnitude scale for point anomalies; keeps the 5-sigma rule meaningful
    # even for noise-free specs
    sigma = spec.noise if spec.noise > 0 else 0.05 * spec.amplitude

    for kind, start, length in events:
        c = int(rng.integers(0, spec.channels))
        amp = float(weights[c].sum())
        if kind == "global":
            mag = amp + (7.0 + 3.0 * rng.random()) * sigma
            values[start, c] = rng.choice([-1.0, 1.0]) * mag
        elif kind == "contextual":
            lo, hi = max(0, start - 10), min(spec.length, start + 11)
            mu_loc = float(clean[lo:hi, c].mean())
            mag = (4.5 + rng.random()) * sigma
            cand = (mu_loc + mag, mu_loc - mag)
            values[start, c] = min(cand, key=abs)
        elif kind == "shapelet":
            p = float(periods[c, 0])
            square = amp * np.sign(np.sin(2.0 * np.pi * t[start : start + length] / p + phases[c, 0]))
            values[start : start + length, c] = square + noise[start : start + length, c]
        elif kind == "seasonal":
            f_scale = 2.0 + rng.random()
            seg = np.zeros(length)
            for j in range(spec.components):
                seg += weights[c, j] * np.sin(
                    2.0 * np.pi * t[start : start + length] * f_scale / periods[c, j] + phases[c, j]
                )
            values[start : start + length, c] = seg + noise[start : start + length, c]
        else:  # trend
            drift = rng.choice([-1.0, 1.0]) * (1.0 + rng.random()) * amp
            values[start : start + length, c] += np.linspace(0.0, drift, length)
        labels[start : start + length] = 1

    return LabeledSeries(values=values, labels=labels, source=f"synthetic(seed={spec.seed})")
