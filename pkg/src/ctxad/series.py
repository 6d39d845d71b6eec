"""Time series data model, standardization, windowing and splits."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "LabelState",
    "TimeSeries",
    "WindowSpec",
    "Window",
    "Dataset",
    "StandardizationStats",
    "SeriesTooShortError",
    "impute",
    "fit_standardizer",
    "standardize",
    "unstandardize",
    "window_label",
    "sliding_windows",
    "random_crops",
    "pad_left",
    "split_yahoo_style",
    "stack_windows",
]

UNLABELED_AS_NORMAL = "unlabeled-as-normal"
UNLABELED_EXCLUDED = "unlabeled-excluded"
LABEL_POLICIES = (UNLABELED_AS_NORMAL, UNLABELED_EXCLUDED)


class SeriesTooShortError(ValueError):
    pass


class LabelState(enum.IntEnum):
    """Per-timestep label; the integer value is the on-disk encoding."""

    NORMAL = 0
    ANOMALOUS = 1
    UNLABELED = -1

    @classmethod
    def parse(cls, value) -> "LabelState":
        if isinstance(value, str):
            value = value.strip()
            try:
                return cls[value.upper()]
            except KeyError:
                value = int(float(value))
        return cls(int(value))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    id: str
    values: np.ndarray
    labels: np.ndarray = None  # type: ignore[assignment]
    period: float | None = None
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"series {self.id!r}: values must be T x D with T, D >= 1, got shape {values.shape}")
        labels = self.labels
        if labels is None:
            labels = np.full(values.shape[0], LabelState.UNLABELED, dtype=np.int8)
        labels = np.array(labels, dtype=np.int8)
        if labels.shape != (values.shape[0],):
            raise ValueError(f"series {self.id!r}: {labels.shape[0]} labels for {values.shape[0]} timesteps")
        if not np.isin(labels, (-1, 0, 1)).all():
            raise ValueError(f"series {self.id!r}: labels must be in {{-1, 0, 1}}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "labels", _frozen(labels))
        if self.timestamps is not None:
            ts = np.array(self.timestamps)
            if ts.shape != (values.shape[0],):
                raise ValueError(f"series {self.id!r}: timestamps length mismatch")
            object.__setattr__(self, "timestamps", _frozen(ts))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray, labels: np.ndarray | None = None) -> "TimeSeries":
        return replace(self, values=values, labels=self.labels if labels is None else labels)

    def slice(self, start: int, stop: int, suffix: str = "") -> "TimeSeries":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return TimeSeries(self.id + suffix, self.values[start:stop], self.labels[start:stop], self.period, ts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class WindowSpec:
    context_length: int
    suspect_length: int
    stride: int = 1

    def __post_init__(self):
        for name in ("context_length", "suspect_length", "stride"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def length(self) -> int:
        return self.context_length + self.suspect_length


@dataclass(frozen=True, eq=False)
class Window:
    values: np.ndarray
    label: float
    origin: tuple[str, int]
    spec: WindowSpec
    skip: bool = False

    def __post_init__(self):
        if self.values.shape[0] != self.spec.length:
            raise ValueError(f"window has {self.values.shape[0]} rows, spec length is {self.spec.length}")
        if not 0.0 <= self.label <= 1.0:
            raise ValueError(f"window label {self.label} outside [0, 1]")

    @property
    def context(self) -> np.ndarray:
        return self.values[: self.spec.context_length]

    @property
    def suspect(self) -> np.ndarray:
        return self.values[self.spec.context_length :]


@dataclass(frozen=True)
class Dataset:
    series: tuple[TimeSeries, ...]
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        if self.split not in ("train", "validation", "test"):
            raise ValueError(f"unknown split tag {self.split!r}")
        ids = [s.id for s in self.series]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate series ids in {self.split} split")

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self) -> Iterator[TimeSeries]:
        return iter(self.series)

    def __getitem__(self, i: int) -> TimeSeries:
        return self.series[i]

    @property
    def channels(self) -> int:
        return self.series[0].channels

    def has_labels(self) -> bool:
        """True when at least one normal and one anomalous timestep are labeled."""
        labels = np.concatenate([s.labels for s in self.series]) if self.series else np.zeros(0)
        return bool((labels == LabelState.ANOMALOUS).any() and (labels == LabelState.NORMAL).any())

    def map(self, fn) -> "Dataset":
        return Dataset(tuple(fn(s) for s in self.series), self.split)


@dataclass(frozen=True)
class StandardizationStats:
    location: np.ndarray
    scale: np.ndarray
    method: str = "mean-std"

    def __post_init__(self):
        loc = _frozen(np.array(self.location, dtype=np.float64).reshape(-1))
        scale = _frozen(np.array(self.scale, dtype=np.float64).reshape(-1))
        if loc.shape != scale.shape:
            raise ValueError("location and scale must have the same length")
        if not (scale > 0).all():
            raise ValueError("every scale must be positive")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "scale", scale)

    def to_dict(self) -> dict:
        return {"method": self.method, "location": self.location.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(np.asarray(d["location"]), np.asarray(d["scale"]), d.get("method", "mean-std"))


def impute(series: TimeSeries) -> TimeSeries:
    """Forward-fill NaNs per channel; leading NaNs become 0."""
    values = np.array(series.values)
    if not np.isnan(values).any():
        return series
    for c in range(values.shape[1]):
        col = values[:, c]
        mask = np.isnan(col)
        idx = np.where(~mask, np.arange(len(col)), 0)
        np.maximum.accumulate(idx, out=idx)
        filled = col[idx]
        filled[np.isnan(filled)] = 0.0
        values[:, c] = filled
    return series.with_values(values)


def fit_standardizer(dataset: Dataset | Sequence[TimeSeries], method: str = "mean-std") -> StandardizationStats:
    series = list(dataset)
    if not series:
        raise ValueError("cannot fit standardizer on an empty dataset")
    pooled = np.concatenate([s.values for s in series], axis=0)
    if method == "mean-std":
        location = np.nanmean(pooled, axis=0)
        scale = np.nanstd(pooled, axis=0)
    elif method == "median-iqr":
        location = np.nanmedian(pooled, axis=0)
        q75, q25 = np.nanpercentile(pooled, [75, 25], axis=0)
        scale = q75 - q25
    else:
        raise ValueError(f"unknown standardization method {method!r}")
    scale = np.where(np.isfinite(scale) & (scale > 0), scale, 1.0)
    location = np.where(np.isfinite(location), location, 0.0)
    return StandardizationStats(location, scale, method)


def _check_dims(series: TimeSeries, stats: StandardizationStats) -> None:
    if stats.location.shape[0] != series.channels:
        raise ValueError(f"stats have {stats.location.shape[0]} channels, series {series.id!r} has {series.channels}")


def standardize(series: TimeSeries, stats: StandardizationStats) -> TimeSeries:
    _check_dims(series, stats)
    return series.with_values((series.values - stats.location) / stats.scale)


def unstandardize(series: TimeSeries, stats: StandardizationStats) -> TimeSeries:
    _check_dims(series, stats)
    return series.with_values(series.values * stats.scale + stats.location)


def window_label(suspect_labels: Sequence[int] | np.ndarray, policy: str = UNLABELED_AS_NORMAL) -> float | None:
    """Aggregate suspect-segment labels into a window label.

    Returns 1.0 if any timestep is anomalous, otherwise 0.0. Under the
    ``unlabeled-excluded`` policy a fully unlabeled suspect segment returns
    ``None``, meaning the window should be skipped in the loss.
    """
    if policy not in LABEL_POLICIES:
        raise ValueError(f"unknown label policy {policy!r}")
    labels = np.asarray(suspect_labels)
    if labels.size == 0:
        raise ValueError("suspect segment is empty")
    if (labels == LabelState.ANOMALOUS).any():
        return 1.0
    if policy == UNLABELED_EXCLUDED and (labels == LabelState.UNLABELED).all():
        return None
    return 0.0


def _make_window(series: TimeSeries, start: int, spec: WindowSpec, policy: str) -> Window:
    stop = start + spec.length
    label = window_label(series.labels[start + spec.context_length : stop], policy)
    return Window(series.values[start:stop], 0.0 if label is None else label, (series.id, start), spec, label is None)


def window_starts(length: int, spec: WindowSpec) -> np.ndarray:
    if length < spec.length:
        raise SeriesTooShortError(f"series of length {length} is shorter than window length {spec.length}")
    return np.arange(0, length - spec.length + 1, spec.stride)


def sliding_windows(series: TimeSeries, spec: WindowSpec, policy: str = UNLABELED_AS_NORMAL) -> list[Window]:
    """Overlapping windows starting at ``0, stride, 2*stride, ...``."""
    return [_make_window(series, int(s), spec, policy) for s in window_starts(series.length, spec)]


def pad_left(series: TimeSeries, length: int) -> tuple[TimeSeries, int]:
    """Edge-replicate the first row until the series has ``length`` rows; returns (series, pad)."""
    pad = max(0, length - series.length)
    if pad == 0:
        return series, 0
    values = np.concatenate([np.repeat(series.values[:1], pad, axis=0), series.values])
    labels = np.concatenate([np.full(pad, LabelState.UNLABELED, dtype=np.int8), series.labels])
    return TimeSeries(series.id, values, labels, series.period), pad


def random_crops(
    dataset: Dataset | Sequence[TimeSeries],
    series_per_batch: int,
    crops_per_series: int,
    spec: WindowSpec,
    rng: np.random.Generator,
    policy: str = UNLABELED_AS_NORMAL,
) -> list[Window]:
    """Pick ``series_per_batch`` series uniformly with replacement, then ``crops_per_series`` uniform crops of each.

    Series shorter than the window are never selected.
    """
    if series_per_batch < 1 or crops_per_series < 1:
        raise ValueError("series_per_batch and crops_per_series must be >= 1")
    eligible = [s for s in dataset if s.length >= spec.length]
    if not eligible:
        raise SeriesTooShortError(f"no series has at least {spec.length} timesteps")
    windows = []
    for i in rng.integers(0, len(eligible), size=series_per_batch):
        series = eligible[i]
        starts = rng.integers(0, series.length - spec.length + 1, size=crops_per_series)
        windows.extend(_make_window(series, int(s), spec, policy) for s in starts)
    return windows


def stack_windows(windows: Iterable[Window]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack into ``values (B, L, D)``, ``labels (B,)`` and ``skip (B,)`` arrays."""
    windows = list(windows)
    values = np.stack([w.values for w in windows])
    labels = np.array([w.label for w in windows], dtype=np.float64)
    skip = np.array([w.skip for w in windows], dtype=bool)
    return values, labels, skip


def split_yahoo_style(series: TimeSeries) -> tuple[TimeSeries, TimeSeries, TimeSeries]:
    """Last half of the timesteps is test; the first half splits 60/40 into train/validation."""
    n = series.length
    n_test = n // 2
    prefix = n - n_test
    n_train = (prefix * 3) // 5
    if n < 10 or n_train < 1 or prefix - n_train < 1 or n_test < 1:
        raise SeriesTooShortError(f"series {series.id!r} of length {n} is too short to split into three parts")
    return (
        series.slice(0, n_train),
        series.slice(n_train, prefix),
        series.slice(prefix, n),
    )
