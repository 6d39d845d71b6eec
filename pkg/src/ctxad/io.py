"""Canonical on-disk dataset format: one CSV per series plus a JSON manifest.

Series CSV header is ``timestamp,ch_0,...,ch_{D-1},label`` with labels in
{0, 1, -1}. Values are written with ``repr`` so they parse back bit-exactly;
missing values are empty cells.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .series import Dataset, LabelState, TimeSeries

__all__ = ["DataError", "write_series_csv", "read_series_csv", "write_dataset", "read_dataset", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def _parse(cell: str, where: str) -> float:
    cell = cell.strip()
    if cell == "" or cell.lower() == "nan":
        return float("nan")
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"{where}: cannot parse {cell!r} as a number") from None


def write_series_csv(series: TimeSeries, path: str | Path) -> None:
    path = Path(path)
    ts = series.timestamps if series.timestamps is not None else np.arange(series.length)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *[f"ch_{i}" for i in range(series.channels)], "label"])
        for t, row, lab in zip(ts, series.values, series.labels):
            w.writerow([t if isinstance(t, str) else _stamp(t), *map(_fmt, row), int(lab)])


def _stamp(t) -> str:
    if isinstance(t, (float, np.floating)) and float(t).is_integer():
        return str(int(t))
    return str(t)


def read_series_csv(path: str | Path, series_id: str | None = None) -> TimeSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0] != "timestamp" or header[-1] != "label":
        raise DataError(f"{path}: header must be timestamp,ch_0,...,label; got {','.join(header)}")
    channels = header[1:-1]
    expected = [f"ch_{i}" for i in range(len(channels))]
    if channels != expected:
        unknown = [c for c in channels if c not in expected]
        raise DataError(f"{path}: unexpected column(s) {unknown or channels}; expected {expected}")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    values = np.empty((len(body), len(channels)))
    labels = np.empty(len(body), dtype=np.int8)
    stamps = []
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
        stamps.append(row[0])
        values[i - 2] = [_parse(c, f"{path}:{i}") for c in row[1:-1]]
        try:
            labels[i - 2] = LabelState.parse(row[-1])
        except (ValueError, KeyError):
            raise DataError(f"{path}:{i}: invalid label {row[-1]!r}") from None
    timestamps = _timestamps(stamps)
    return TimeSeries(series_id or path.stem, values, labels, timestamps=timestamps)


def _timestamps(stamps: Sequence[str]) -> np.ndarray | None:
    try:
        ints = np.array([int(s) for s in stamps], dtype=np.int64)
    except ValueError:
        return np.array(stamps)
    return None if np.array_equal(ints, np.arange(len(ints))) else ints


def _safe_name(series_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in series_id)


def write_dataset(
    root: str | Path,
    splits: Mapping[str, Iterable[TimeSeries]],
    provenance: Mapping | None = None,
) -> Path:
    """Write every split under ``root`` and return the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries, used = [], set()
    for split, series in splits.items():
        (root / split).mkdir(exist_ok=True)
        for s in series:
            rel = f"{split}/{_safe_name(s.id)}.csv"
            if rel in used:
                raise DataError(f"two series map to file {rel}")
            used.add(rel)
            write_series_csv(s, root / rel)
            entry = {"id": s.id, "file": rel, "split": split}
            if s.period is not None:
                entry["period"] = s.period
            entries.append(entry)
    manifest = {"version": MANIFEST_VERSION, "series": entries}
    if provenance:
        manifest["provenance"] = dict(provenance)
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(manifest, dict) or "series" not in manifest:
        raise DataError(f"{path}: manifest needs a 'series' list")
    for entry in manifest["series"]:
        missing = {"id", "file", "split"} - set(entry)
        if missing:
            raise DataError(f"{path}: manifest entry missing {sorted(missing)}")
    manifest["_root"] = str(path.parent)
    return manifest


def read_dataset(path: str | Path, split: str | None = None) -> dict[str, Dataset]:
    """Load a manifest (file or directory) into ``{split: Dataset}``; ``split`` keeps only one."""
    manifest = load_manifest(path)
    root = Path(manifest["_root"])
    grouped: dict[str, list[TimeSeries]] = {}
    for entry in manifest["series"]:
        if split is not None and entry["split"] != split:
            continue
        s = read_series_csv(root / entry["file"], entry["id"])
        if entry.get("period") is not None:
            s = TimeSeries(s.id, s.values, s.labels, entry["period"], s.timestamps)
        grouped.setdefault(entry["split"], []).append(s)
    if split is not None and split not in grouped:
        raise DataError(f"no series with split {split!r} in {path}")
    try:
        return {k: Dataset(tuple(v), k) for k, v in grouped.items()}
    except ValueError as exc:
        raise DataError(str(exc)) from None
