"""Synthetic anomalies: contextual outlier exposure, point outliers, mixup and slopes.

Window-level generators (COE, mixup) take a batch and return only the new
windows. Series-level injectors (point outliers, slopes) return a new series
with the affected timesteps labeled anomalous.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .series import LabelState, TimeSeries, Window

__all__ = [
    "AugmentConfig",
    "SlopeParams",
    "random_channel_subset",
    "coe_splice",
    "coe_augment",
    "local_iqr",
    "spike_scale",
    "inject_point_outliers",
    "mixup_windows",
    "mixup_augment",
    "inject_slopes",
]

IQR_EPS = 1e-2


@dataclass(frozen=True)
class AugmentConfig:
    coe_rate: float = 0.0
    mixup_rate: float = 0.0
    mixup_alpha: float = 0.05
    po_count_per_series: int = 0
    po_magnitude_range: tuple[float, float] = (0.5, 3.0)
    po_neighborhood: int = 100

    def __post_init__(self):
        if self.coe_rate < 0 or self.mixup_rate < 0:
            raise ValueError("augmentation rates must be >= 0")
        if self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be > 0")
        if self.po_count_per_series < 0:
            raise ValueError("po_count_per_series must be >= 0")
        low, high = self.po_magnitude_range
        if low > high:
            raise ValueError(f"po_magnitude_range low {low} exceeds high {high}")
        if self.po_neighborhood < 1:
            raise ValueError("po_neighborhood must be >= 1")
        object.__setattr__(self, "po_magnitude_range", (float(low), float(high)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["po_magnitude_range"] = list(self.po_magnitude_range)
        return d


@dataclass(frozen=True)
class SlopeParams:
    count: int = 0
    duration_range: tuple[int, int] = (10, 50)
    magnitude_range: tuple[float, float] = (1.0, 3.0)
    neighborhood: int = 100


def random_channel_subset(n_channels: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw over the ``2**D - 1`` nonempty channel subsets; returns sorted indices."""
    if n_channels == 1:
        return np.array([0])
    while True:
        mask = rng.integers(0, 2, size=n_channels).astype(bool)
        if mask.any():
            return np.flatnonzero(mask)


# -- contextual outlier exposure ----------------------------------------------


def coe_splice(receiver: Window, donor: Window, start: int, stop: int, channels: Sequence[int] | None = None) -> Window:
    """Copy ``donor`` values into ``receiver`` at suspect positions ``[start, stop]`` (inclusive, suspect-relative)."""
    c = receiver.spec.context_length
    if not 0 <= start <= stop < receiver.spec.suspect_length:
        raise ValueError(f"chunk [{start}, {stop}] outside suspect segment of length {receiver.spec.suspect_length}")
    values = np.array(receiver.values)
    cols = slice(None) if channels is None else np.asarray(channels)
    rows = slice(c + start, c + stop + 1)
    if channels is None:
        values[rows] = donor.values[rows]
    else:
        values[rows, cols] = donor.values[rows][:, cols]
    return Window(values, 1.0, receiver.origin, receiver.spec)


def coe_augment(batch: Sequence[Window], rate: float, rng: np.random.Generator) -> list[Window]:
    """Return ``floor(len(batch) * rate)`` windows whose suspect chunk is swapped in from another window."""
    n_new = int(np.floor(len(batch) * rate))
    if n_new == 0:
        return []
    if len(batch) < 2:
        raise ValueError("contextual outlier exposure needs at least two windows in the batch")
    out = []
    for _ in range(n_new):
        r, d = rng.choice(len(batch), size=2, replace=False)
        receiver, donor = batch[r], batch[d]
        s = receiver.spec.suspect_length
        if s == 1:
            t1 = t2 = 0
        else:
            t1, t2 = sorted(rng.choice(s, size=2, replace=False))
        channels = random_channel_subset(receiver.values.shape[1], rng)
        out.append(coe_splice(receiver, donor, int(t1), int(t2), channels))
    return out


# -- point outliers -------------------------------------------------------------


def local_iqr(values: np.ndarray, t: int, neighborhood: int) -> float:
    """Inter-quartile range of ``neighborhood`` points centered at ``t``, clipped to the series bounds."""
    half = neighborhood // 2
    lo = max(0, t - half)
    hi = min(len(values), lo + neighborhood)
    lo = max(0, hi - neighborhood)
    q75, q25 = np.percentile(values[lo:hi], [75, 25])
    return float(q75 - q25)


def spike_scale(values: np.ndarray, t: int, neighborhood: int) -> float:
    """Local IQR, falling back to the series std and then to ``IQR_EPS`` for flat data."""
    iqr = local_iqr(values, t, neighborhood)
    if iqr > 0:
        return iqr
    return max(float(np.std(values)), IQR_EPS)


def inject_point_outliers(series: TimeSeries, config: AugmentConfig, rng: np.random.Generator) -> TimeSeries:
    count = min(config.po_count_per_series, series.length)
    if count == 0:
        return series
    original = series.values
    values = np.array(original)
    labels = np.array(series.labels)
    low, high = config.po_magnitude_range
    for t in rng.choice(series.length, size=count, replace=False):
        t = int(t)
        for ch in random_channel_subset(series.channels, rng):
            sign = 1.0 if rng.random() < 0.5 else -1.0
            w = rng.uniform(low, high)
            values[t, ch] += sign * w * spike_scale(original[:, ch], t, config.po_neighborhood)
        labels[t] = LabelState.ANOMALOUS
    return series.with_values(values, labels)


# -- mixup ----------------------------------------------------------------------


def mixup_windows(a: Window, b: Window, lam: float) -> Window:
    values = lam * a.values + (1.0 - lam) * b.values
    label = float(np.clip(lam * a.label + (1.0 - lam) * b.label, 0.0, 1.0))
    if a.label == b.label:
        label = a.label
    return Window(values, label, a.origin, a.spec)


def mixup_augment(
    batch: Sequence[Window], rate: float, alpha: float, rng: np.random.Generator, count: int | None = None
) -> list[Window]:
    """Return ``floor(len(batch) * rate)`` convex combinations with ``lambda ~ Beta(alpha, alpha)``.

    ``count`` overrides the number of mixed windows while still drawing pairs from all of ``batch``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    n_new = int(np.floor(len(batch) * rate)) if count is None else count
    if n_new == 0:
        return []
    if len(batch) < 2:
        raise ValueError("mixup needs at least two windows in the batch")
    out = []
    for _ in range(n_new):
        i, j = rng.choice(len(batch), size=2, replace=False)
        lam = float(rng.beta(alpha, alpha))
        out.append(mixup_windows(batch[i], batch[j], lam))
    return out


# -- slopes ---------------------------------------------------------------------


def inject_slopes(series: TimeSeries, params: SlopeParams, rng: np.random.Generator) -> TimeSeries:
    """Add linear ramps over random regions and label them anomalous.

    Each ramp rises from 0 to ``m * scale`` across its region, where ``scale`` is
    the channel std over the region's neighborhood (1 when that std is 0).
    """
    if params.count == 0:
        return series
    d_lo, d_hi = params.duration_range
    if d_hi > series.length:
        raise ValueError(f"slope duration up to {d_hi} exceeds series length {series.length}")
    values = np.array(series.values)
    labels = np.array(series.labels)
    m_lo, m_hi = params.magnitude_range
    for _ in range(params.count):
        d = int(rng.integers(d_lo, d_hi + 1))
        t = int(rng.integers(0, series.length - d + 1))
        m = rng.uniform(m_lo, m_hi)
        half = params.neighborhood // 2
        lo, hi = max(0, t - half), min(series.length, t + d + half)
        for ch in random_channel_subset(series.channels, rng):
            scale = float(np.std(series.values[lo:hi, ch]))
            scale = scale if scale > 0 else 1.0
            values[t : t + d, ch] += ramp(d, m * scale)
        labels[t : t + d] = LabelState.ANOMALOUS
    return series.with_values(values, labels)


def ramp(duration: int, height: float) -> np.ndarray:
    if duration == 1:
        return np.array([height])
    return np.linspace(0.0, height, duration)
