"""Converters from public benchmark layouts into canonical series.

Each adapter returns ``{split: [TimeSeries, ...]}`` ready for
:func:`ctxad.io.write_dataset`. Values pass through unchanged.

Layouts handled:

* nasa: ``train/<chan>.npy``, ``test/<chan>.npy`` and ``labeled_anomalies.csv``
  (``chan_id,spacecraft,anomaly_sequences,class,num_values``); sequences are
  inclusive index pairs.
* smd: ``train/<machine>.txt``, ``test/<machine>.txt``, ``test_label/<machine>.txt``;
  comma-separated rows, one label per line.
* yahoo: one CSV per series (any subdirectory) with a timestamp, a value and an
  anomaly flag column; split by time into train / validation / test.
* kpi: a single CSV with ``timestamp,value,label,KPI ID`` rows, grouped by KPI.
"""

from __future__ import annotations

import ast
import csv
from pathlib import Path

import numpy as np

from .io import DataError
from .series import LabelState, SeriesTooShortError, TimeSeries, split_yahoo_style

__all__ = ["nasa_format", "smd_format", "yahoo_format", "kpi_format", "ADAPTERS"]


def _require_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise DataError(f"{what}: expected directory {path}")
    return path


def _float(cell: str, where: str) -> float:
    try:
        return float(cell) if cell.strip() not in ("", "nan", "NaN") else float("nan")
    except ValueError:
        raise DataError(f"{where}: cannot parse {cell!r}") from None


def _sequences_to_labels(text: str, n: int, where: str) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int8)
    try:
        seqs = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise DataError(f"{where}: malformed anomaly_sequences {text!r}") from None
    for start, stop in seqs:
        if not 0 <= start <= stop < n:
            raise DataError(f"{where}: anomaly range [{start}, {stop}] outside series of length {n}")
        labels[start : stop + 1] = LabelState.ANOMALOUS
    return labels


def nasa_format(root: str | Path) -> dict[str, list[TimeSeries]]:
    root = Path(root)
    _require_dir(root / "train", "nasa")
    _require_dir(root / "test", "nasa")
    meta_path = root / "labeled_anomalies.csv"
    if not meta_path.exists():
        raise DataError(f"nasa: missing {meta_path}")
    with meta_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"chan_id", "spacecraft", "anomaly_sequences", "class", "num_values"}
        unknown = set(reader.fieldnames or ()) - expected
        if unknown or not {"chan_id", "anomaly_sequences"} <= set(reader.fieldnames or ()):
            raise DataError(f"nasa: unexpected columns in {meta_path.name}: {sorted(unknown) or reader.fieldnames}")
        rows = list(reader)
    out: dict[str, list[TimeSeries]] = {"train": [], "test": []}
    for row in sorted(rows, key=lambda r: r["chan_id"]):
        chan = row["chan_id"]
        train = np.load(root / "train" / f"{chan}.npy")
        test = np.load(root / "test" / f"{chan}.npy")
        test_labels = _sequences_to_labels(row["anomaly_sequences"], len(test), f"nasa {chan}")
        out["train"].append(TimeSeries(chan, np.asarray(train, dtype=np.float64)))
        out["test"].append(TimeSeries(chan, np.asarray(test, dtype=np.float64), test_labels))
    return out


def _read_rows(path: Path) -> np.ndarray:
    rows = []
    with path.open() as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                rows.append([_float(c, f"{path}:{i}") for c in line.split(",")])
    if not rows or len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: empty or ragged rows")
    return np.array(rows)


def smd_format(root: str | Path) -> dict[str, list[TimeSeries]]:
    root = Path(root)
    for sub in ("train", "test", "test_label"):
        _require_dir(root / sub, "smd")
    out: dict[str, list[TimeSeries]] = {"train": [], "test": []}
    for path in sorted((root / "train").glob("*.txt")):
        name = path.stem
        train = _read_rows(path)
        test = _read_rows(root / "test" / path.name)
        labels = _read_rows(root / "test_label" / path.name)
        if labels.shape != (len(test), 1):
            raise DataError(f"smd {name}: {labels.shape[0]} labels for {len(test)} test rows")
        if train.shape[1] != test.shape[1]:
            raise DataError(f"smd {name}: train has {train.shape[1]} channels, test {test.shape[1]}")
        out["train"].append(TimeSeries(name, train))
        out["test"].append(TimeSeries(name, test, labels[:, 0].astype(np.int8)))
    if not out["train"]:
        raise DataError(f"smd: no *.txt files under {root / 'train'}")
    return out


_YAHOO_TIME = ("timestamp", "timestamps")
_YAHOO_LABEL = ("is_anomaly", "anomaly")
# extra columns present in the A3/A4 benchmark files; ignored
_YAHOO_EXTRA = ("changepoint", "trend", "noise", "seasonality1", "seasonality2", "seasonality3")


def _yahoo_series(path: Path, series_id: str) -> TimeSeries:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [c.strip() for c in reader.fieldnames or ()]
        allowed = set(_YAHOO_TIME) | set(_YAHOO_LABEL) | set(_YAHOO_EXTRA) | {"value"}
        unknown = [c for c in cols if c not in allowed]
        if unknown:
            raise DataError(f"yahoo {path.name}: unknown column(s) {unknown}")
        time_col = next((c for c in _YAHOO_TIME if c in cols), None)
        label_col = next((c for c in _YAHOO_LABEL if c in cols), None)
        if "value" not in cols or time_col is None or label_col is None:
            raise DataError(f"yahoo {path.name}: need timestamp, value and anomaly columns, got {cols}")
        stamps, values, labels = [], [], []
        for i, row in enumerate(reader, start=2):
            stamps.append(int(_float(row[time_col], f"{path}:{i}")))
            values.append(_float(row["value"], f"{path}:{i}"))
            labels.append(int(_float(row[label_col], f"{path}:{i}")))
    return TimeSeries(series_id, np.array(values), np.array(labels, dtype=np.int8), timestamps=np.array(stamps))


def yahoo_format(root: str | Path, split: bool = True) -> dict[str, list[TimeSeries]]:
    """Every CSV under ``root``; with ``split`` each series is cut into train/validation/test by time."""
    root = _require_dir(Path(root), "yahoo")
    files = sorted(root.rglob("*.csv"))
    if not files:
        raise DataError(f"yahoo: no CSV files under {root}")
    out: dict[str, list[TimeSeries]] = {"train": [], "validation": [], "test": []} if split else {"test": []}
    for path in files:
        sid = str(path.relative_to(root).with_suffix("")).replace("/", "__")
        s = _yahoo_series(path, sid)
        if not split:
            out["test"].append(s)
            continue
        try:
            parts = split_yahoo_style(s)
        except SeriesTooShortError as exc:
            raise DataError(f"yahoo {sid}: {exc}") from None
        for name, part in zip(("train", "validation", "test"), parts):
            out[name].append(part)
    return out


def kpi_format(path: str | Path, split: str = "train") -> dict[str, list[TimeSeries]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"kpi: expected a CSV file, got {path}")
    groups: dict[str, tuple[list, list, list]] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [c.strip() for c in reader.fieldnames or ()]
        expected = ["timestamp", "value", "label", "KPI ID"]
        unknown = [c for c in cols if c not in expected]
        if unknown or sorted(cols) != sorted(expected):
            raise DataError(f"kpi: unexpected columns {unknown or cols}; expected {expected}")
        for i, row in enumerate(reader, start=2):
            stamps, values, labels = groups.setdefault(row["KPI ID"].strip(), ([], [], []))
            stamps.append(int(_float(row["timestamp"], f"{path}:{i}")))
            values.append(_float(row["value"], f"{path}:{i}"))
            labels.append(int(_float(row["label"], f"{path}:{i}")))
    series = []
    for kpi, (stamps, values, labels) in sorted(groups.items()):
        order = np.argsort(stamps, kind="stable")
        series.append(
            TimeSeries(
                kpi,
                np.asarray(values)[order],
                np.asarray(labels, dtype=np.int8)[order],
                timestamps=np.asarray(stamps)[order],
            )
        )
    return {split: series}


ADAPTERS = {"nasa": nasa_format, "smd": smd_format, "yahoo": yahoo_format, "kpi": kpi_format}
