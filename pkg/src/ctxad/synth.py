"""Noisy sinusoids with Gaussian-widened spike anomalies."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .series import Dataset, LabelState, TimeSeries

__all__ = ["SuiteConfig", "SuiteCell", "gen_sine", "gaussian_bump", "widen_anomalies", "make_base", "make_width_suite"]

LABEL_FRACTION = 0.1
SLOT_MARGIN = 20


def gen_sine(T: int, period: float, amplitude: float, noise_std: float, rng: np.random.Generator, series_id: str = "sine") -> TimeSeries:
    """``amplitude * sin(2 pi t / period)`` plus i.i.d. Gaussian noise; all labels normal."""
    if T < 1 or period <= 0:
        raise ValueError("need T >= 1 and period > 0")
    t = np.arange(T)
    values = amplitude * np.sin(2 * np.pi * t / period)
    if noise_std > 0:
        values = values + rng.normal(0.0, noise_std, size=T)
    return TimeSeries(series_id, values, np.zeros(T, dtype=np.int8), period=period)


def gaussian_bump(width: float) -> np.ndarray:
    """Peak-normalized Gaussian kernel truncated at 4 standard deviations; ``[1.0]`` for width 0."""
    if width <= 0:
        return np.array([1.0])
    half = int(np.ceil(4 * width))
    offsets = np.arange(-half, half + 1)
    return np.exp(-0.5 * (offsets / width) ** 2)


def widen_anomalies(series: TimeSeries, spike_positions: Sequence[int], base_magnitude: float | Sequence[float], width: float) -> TimeSeries:
    """Add spikes convolved with a peak-normalized Gaussian of std ``width``.

    ``base_magnitude`` may be one value or one per spike (signs allowed).
    Timesteps where the added perturbation exceeds 10% of the spike's
    magnitude are labeled anomalous; overlapping supports merge.
    """
    positions = np.asarray(spike_positions, dtype=int)
    if positions.size and (positions.min() < 0 or positions.max() >= series.length):
        raise ValueError("spike positions must lie within the series")
    mags = np.broadcast_to(np.asarray(base_magnitude, dtype=np.float64), positions.shape)
    kernel = gaussian_bump(width)
    half = len(kernel) // 2
    n = series.length
    perturbation = np.zeros(n)
    labels = np.array(series.labels)
    for pos, mag in zip(positions, mags):
        lo, hi = max(0, pos - half), min(n, pos + half + 1)
        bump = mag * kernel[lo - pos + half : hi - pos + half]
        perturbation[lo:hi] += bump
        support = np.abs(bump) > LABEL_FRACTION * abs(mag)
        labels[lo:hi][support] = LabelState.ANOMALOUS
    values = series.values + perturbation[:, None]
    return series.with_values(values, labels)


@dataclass(frozen=True)
class SuiteConfig:
    n_series: int = 50
    length: int = 2000
    period: float = 100.0
    amplitude: float = 1.0
    noise_std: float = 0.1
    anomalies_per_series: int = 5
    base_magnitude: float = 1.0
    warmup: int = 200
    n_test_series: int | None = None

    def __post_init__(self):
        if self.n_series < 1 or self.length < 1 or self.period <= 0 or self.anomalies_per_series < 0:
            raise ValueError("n_series, length, anomalies_per_series must be positive and period > 0")
        if not 0 <= self.warmup < self.length:
            raise ValueError(f"warmup {self.warmup} must lie in [0, length)")
        if self.anomalies_per_series and (self.length - self.warmup) // self.anomalies_per_series < 2 * SLOT_MARGIN + 1:
            raise ValueError(
                f"{self.anomalies_per_series} anomalies do not fit after warmup {self.warmup} in length {self.length}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SuiteCell:
    width: float
    seed: int
    train: Dataset
    test: Dataset

    def checksum(self) -> str:
        h = hashlib.sha256()
        for ds in (self.train, self.test):
            for s in ds:
                h.update(s.values.tobytes())
                h.update(s.labels.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class _Base:
    train: tuple[TimeSeries, ...]
    test: tuple[TimeSeries, ...]
    positions: tuple[np.ndarray, ...]
    magnitudes: tuple[np.ndarray, ...]


def make_base(config: SuiteConfig, seed: int) -> _Base:
    """Clean training sines plus test sines with chosen spike positions and signed magnitudes."""
    rng = np.random.default_rng(seed)
    n_test = config.n_series if config.n_test_series is None else config.n_test_series
    train = tuple(
        gen_sine(config.length, config.period, config.amplitude, config.noise_std, rng, f"train-{i:03d}")
        for i in range(config.n_series)
    )
    test, positions, mags = [], [], []
    for i in range(n_test):
        test.append(gen_sine(config.length, config.period, config.amplitude, config.noise_std, rng, f"test-{i:03d}"))
        positions.append(_spread_positions(rng, config.warmup, config.length, config.anomalies_per_series))
        signs = rng.choice([-1.0, 1.0], size=config.anomalies_per_series)
        mags.append(signs * config.base_magnitude)
    return _Base(train, tuple(test), tuple(positions), tuple(mags))


def _spread_positions(rng: np.random.Generator, lo: int, hi: int, count: int) -> np.ndarray:
    """One position per equal-width slot so supports rarely overlap."""
    edges = np.linspace(lo, hi, count + 1).astype(int)
    margin = SLOT_MARGIN
    return np.array([rng.integers(a + margin, max(a + margin + 1, b - margin)) for a, b in zip(edges[:-1], edges[1:])])


def make_width_suite(widths: Sequence[float], seeds: Sequence[int], config: SuiteConfig | None = None) -> list[SuiteCell]:
    """One train/test pair per (width, seed); widths sharing a seed share the same base data."""
    if not widths or not seeds:
        raise ValueError("widths and seeds must be non-empty")
    config = config or SuiteConfig()
    cells = []
    for seed in seeds:
        base = make_base(config, seed)
        train = Dataset(base.train, "train")
        for width in widths:
            test = Dataset(
                tuple(widen_anomalies(s, p, m, width) for s, p, m in zip(base.test, base.positions, base.magnitudes)),
                "test",
            )
            cells.append(SuiteCell(float(width), int(seed), train, test))
    return cells


def with_overrides(config: SuiteConfig, **overrides) -> SuiteConfig:
    return replace(config, **overrides)
