from .io import DataError, load_series, save_series
from .ratio import DegenerateScoresError, gap_statistic_ratio
from .series import (
    EPS_STD,
    LabeledSeries,
    NormalizationStats,
    TimeSeriesWindow,
    denormalize,
    fit_stats,
    normalize,
    window,
)
from .synthetic import ANOMALY_KINDS, SyntheticSpec, generate_synthetic

__all__ = [
    "ANOMALY_KINDS",
    "EPS_STD",
    "DataError",
    "DegenerateScoresError",
    "LabeledSeries",
    "NormalizationStats",
    "SyntheticSpec",
    "TimeSeriesWindow",
    "denormalize",
    "fit_stats",
    "gap_statistic_ratio",
    "generate_synthetic",
    "load_series",
    "normalize",
    "save_series",
    "window",
]
