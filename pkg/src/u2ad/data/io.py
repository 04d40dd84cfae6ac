"""File ingestion and emission for series data.

Two on-disk formats:

* csv     one timestep per row, one column per channel, optional header row
* f32bin  little-endian float32, timestep-major, with a JSON sidecar
          ``{"L": int, "d": int}`` next to it

A label sidecar (same stem, ``.labels`` suffix, one 0/1 per line) is picked
up automatically when present.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .series import LabeledSeries


class DataError(Exception):
    """Raised for missing files, parse failures, and malformed values."""


def _label_path(path: Path) -> Path:
    return path.with_suffix(".labels")


def _read_labels(path: Path, length: int) -> np.ndarray | None:
    lp = _label_path(path)
    if not lp.exists():
        return None
    lines = [ln for ln in lp.read_text().splitlines() if ln.strip()]
    try:
        labels = np.array([int(ln) for ln in lines], dtype=np.int8)
    except ValueError as exc:
        raise DataError(f"{lp}: label file must contain one 0/1 per line ({exc})") from exc
    if labels.shape[0] != length:
        raise DataError(f"{lp}: label length {labels.shape[0]} does not match series length {length}")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError(f"{lp}: labels must be 0 or 1")
    return labels


def _check_cells(values: np.ndarray, where: str) -> None:
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = bad[0]
        raise DataError(f"{where}: non-finite value at row {r}, column {c}")


def load_series(
    path: str | Path, format: str = "csv", has_header: bool = False, attach_labels: bool = True
) -> LabeledSeries:
    """Load a series from disk, attaching a label sidecar when one exists.

    ``attach_labels=False`` skips the sidecar entirely (it is not even read).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    if format == "csv":
        try:
            values = np.loadtxt(path, delimiter=",", skiprows=1 if has_header else 0, ndmin=2, dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}: csv parse failure ({exc})") from exc
    elif format == "f32bin":
        sidecar = path.with_suffix(".json")
        if not sidecar.exists():
            raise DataError(f"{sidecar}: shape sidecar not found")
        try:
            meta = json.loads(sidecar.read_text())
            L, d = int(meta["L"]), int(meta["d"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{sidecar}: invalid shape sidecar ({exc})") from exc
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != L * d:
            raise DataError(f"{path}: expected {L * d} float32 values, found {raw.size}")
        values = raw.astype(np.float64).reshape(L, d)
    else:
        raise DataError(f"unknown series format {format!r}")
    _check_cells(values, str(path))
    labels = _read_labels(path, values.shape[0]) if attach_labels else None
    try:
        return LabeledSeries(values=values, labels=labels, source=str(path))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_series(series: LabeledSeries, path: str | Path, format: str = "csv") -> None:
    """Write a series (and its labels, when present) in the given format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        np.savetxt(path, series.values, delimiter=",", fmt="%.9g")
    elif format == "f32bin":
        series.values.astype("<f4").tofile(path)
        path.with_suffix(".json").write_text(
            json.dumps({"L": int(series.length), "d": int(series.channels)}) + "\n"
        )
    else:
        raise DataError(f"unknown series format {format!r}")
    if series.labels is not None:
        _label_path(path).write_text("".join(f"{int(v)}\n" for v in series.labels))
