"""Distances, the hypersphere losses and window/series scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EncoderConfig, TCNEncoder
from .nn import tensor as T
from .nn.params import ParameterSet
from .nn.tensor import Tensor
from .series import TimeSeries, Window, WindowSpec, pad_left, window_starts

__all__ = [
    "DISTANCES",
    "EPS_PROB",
    "EPS_COS",
    "ScoreTrace",
    "dist_l2",
    "dist_cos",
    "distance_sq",
    "contextual_hsc_loss",
    "hsc_loss",
    "batch_contextual_loss",
    "batch_hsc_loss",
    "bce",
    "score_to_probability",
    "score_window",
    "score_windows",
    "rolling_score",
]

DISTANCES = ("euclidean", "cosine-log")
AGGREGATIONS = ("max", "mean")
AGGREGATION_ALIASES = {"max-first-alert": "max", "max": "max", "mean": "mean"}
PROBABILITY_MAPS = ("exp-sq", "exp-abs")

EPS_PROB = 1e-9
EPS_COS = 1e-8
# clamp exp(-d^2) to [EPS_PROB, 1 - EPS_PROB]  <=>  clamp d^2 to [D2_MIN, D2_MAX]
D2_MIN = -np.log1p(-EPS_PROB)
D2_MAX = -np.log(EPS_PROB)


# -- distances ------------------------------------------------------------------


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"embedding dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def dist_l2(x, y) -> float:
    x, y = _check_pair(x, y)
    return float(np.sqrt(np.sum((x - y) ** 2)))


def dist_cos(x, y) -> float:
    """``-log((1 + cos(x, y)) / 2)``, with ``1 + cos`` floored at ``EPS_COS``."""
    x, y = _check_pair(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("cosine distance is undefined for a zero vector")
    cos = float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))
    return float(-np.log(max(1.0 + cos, EPS_COS) / 2.0))


def distance_sq(z: Tensor, zc: Tensor, kind: str = "euclidean") -> Tensor:
    """Squared distance per row of two ``(B, E)`` embedding batches."""
    if kind == "euclidean":
        return T.sum(T.square(z - zc), axis=-1)
    if kind == "cosine-log":
        dot = T.sum(z * zc, axis=-1)
        nz = T.norm(z, axis=-1)
        nc = T.norm(zc, axis=-1)
        one_plus_cos = T.maximum_const(dot / (nz * nc) + 1.0, EPS_COS)
        d = -T.log(one_plus_cos * 0.5)
        return T.square(d)
    raise ValueError(f"unknown distance {kind!r}; expected one of {DISTANCES}")


# -- losses ---------------------------------------------------------------------


def _bce_from_d2(d2: Tensor, y: Tensor) -> Tensor:
    """Per-example ``-(1-y) log q - y log(1-q)`` with ``q = exp(-d2)`` clamped to ``[eps, 1-eps]``."""
    d2c = T.clip(d2, D2_MIN, D2_MAX)
    return (1.0 - y) * d2c - y * T.log1mexp(d2c)


def _mean_over(per_example: Tensor, skip: np.ndarray | None) -> Tensor:
    if skip is None or not skip.any():
        return T.mean(per_example)
    keep = (~skip).astype(per_example.dtype)
    n = max(int(keep.sum()), 1)
    return T.sum(per_example * keep) * (1.0 / n)


def batch_contextual_loss(z: Tensor, zc: Tensor, y, kind: str = "euclidean", skip: np.ndarray | None = None) -> Tensor:
    """Mean contextual hypersphere loss; the center of each example is its context embedding."""
    y = T.as_tensor(np.asarray(y, dtype=z.dtype))
    return _mean_over(_bce_from_d2(distance_sq(z, zc, kind), y), skip)


def batch_hsc_loss(z: Tensor, y, center: np.ndarray, skip: np.ndarray | None = None) -> Tensor:
    """Mean fixed-center hypersphere loss with Euclidean distance to ``center``."""
    y = T.as_tensor(np.asarray(y, dtype=z.dtype))
    d2 = T.sum(T.square(z - Tensor(np.asarray(center, dtype=z.dtype))), axis=-1)
    return _mean_over(_bce_from_d2(d2, y), skip)


def contextual_hsc_loss(z, z_c, y: float, dist: str = "euclidean") -> float:
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"label {y} outside [0, 1]")
    z, z_c = _check_pair(z, z_c)
    return float(batch_contextual_loss(Tensor(z[None]), Tensor(z_c[None]), [y], dist).data)


def hsc_loss(z, y: float, center=None) -> float:
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"label {y} outside [0, 1]")
    z = np.asarray(z, dtype=np.float64)
    center = np.zeros_like(z) if center is None else np.asarray(center, dtype=np.float64)
    return float(batch_hsc_loss(Tensor(z[None]), [y], center).data)


def bce(p, y) -> np.ndarray:
    """Plain binary cross-entropy, no clamping."""
    p, y = np.asarray(p, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


# -- scoring ---------------------------------------------------------------------


def score_to_probability(score, kind: str = "exp-sq"):
    score = np.asarray(score, dtype=np.float64)
    if kind == "exp-sq":
        return -np.expm1(-(score**2))
    if kind == "exp-abs":
        return -np.expm1(-np.abs(score))
    raise ValueError(f"unknown probability map {kind!r}; expected one of {PROBABILITY_MAPS}")


def score_windows(
    values: np.ndarray,
    params: ParameterSet,
    config: EncoderConfig,
    context_length: int,
    dist: str = "euclidean",
    batch_size: int = 512,
    center: np.ndarray | None = None,
) -> np.ndarray:
    """Anomaly scores for a stack of windows ``(N, L, D)``.

    With ``center`` given, the score is the Euclidean distance of the full
    window embedding to that fixed point instead of to the context embedding.
    """
    encoder = TCNEncoder(config, params)
    dtype = next(iter(params.values())).dtype
    out = np.empty(values.shape[0], dtype=np.float64)
    for lo in range(0, values.shape[0], batch_size):
        chunk = Tensor(np.ascontiguousarray(values[lo : lo + batch_size], dtype=dtype))
        if center is None:
            z, zc = encoder.embed_pair(chunk, context_length)
            d2 = distance_sq(z, zc, dist).data.astype(np.float64)
        else:
            z = encoder(chunk).data.astype(np.float64)
            d2 = np.sum((z - center) ** 2, axis=-1)
        out[lo : lo + batch_size] = np.sqrt(np.maximum(d2, 0.0))
    return out


def score_window(params: ParameterSet, config: EncoderConfig, window: Window, dist: str = "euclidean", prob: str = "exp-sq") -> tuple[float, float]:
    """Return ``(score, probability)`` for one window.

    Encodes the full window and the context rows in two separate passes.
    """
    encoder = TCNEncoder(config, params)
    dtype = next(iter(params.values())).dtype
    z = encoder(Tensor(window.values[None].astype(dtype))).data[0]
    zc = encoder(Tensor(window.context[None].astype(dtype))).data[0]
    score = dist_l2(z, zc) if dist == "euclidean" else dist_cos(z, zc)
    return score, float(score_to_probability(score, prob))


@dataclass(frozen=True, eq=False)
class ScoreTrace:
    """Per-timestep scores for one series; NaN marks timesteps no suspect segment covered."""

    series_id: str
    scores: np.ndarray
    probabilities: np.ndarray
    aggregation: str = "mean"

    @property
    def scored(self) -> np.ndarray:
        return ~np.isnan(self.scores)

    def __len__(self) -> int:
        return len(self.scores)

    def to_csv(self, path: str | Path, timestamps: Sequence | None = None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp", "score", "probability", "scored"])
            for i, (s, p) in enumerate(zip(self.scores, self.probabilities)):
                ts = i if timestamps is None else timestamps[i]
                if np.isnan(s):
                    writer.writerow([ts, "", "", 0])
                else:
                    writer.writerow([ts, repr(float(s)), repr(float(p)), 1])

    @classmethod
    def from_csv(cls, path: str | Path, series_id: str | None = None, aggregation: str = "mean") -> "ScoreTrace":
        scores, probs = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"timestamp", "score", "probability", "scored"} - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"{path}: missing trace column(s) {sorted(missing)}")
            for row in reader:
                if row["scored"].strip() in ("0", ""):
                    scores.append(np.nan)
                    probs.append(np.nan)
                else:
                    scores.append(float(row["score"]))
                    probs.append(float(row["probability"]))
        return cls(series_id or Path(path).stem, np.array(scores), np.array(probs), aggregation)


def aggregate_suspect_scores(
    window_scores: np.ndarray, starts: np.ndarray, spec: WindowSpec, length: int, aggregation: str
) -> np.ndarray:
    """Spread each window's score over its suspect rows and aggregate per timestep."""
    if aggregation not in AGGREGATION_ALIASES:
        raise ValueError(f"unknown aggregation {aggregation!r}; expected one of {sorted(AGGREGATION_ALIASES)}")
    aggregation = AGGREGATION_ALIASES[aggregation]
    offsets = np.arange(spec.context_length, spec.length)
    rows = (starts[:, None] + offsets[None, :]).ravel()
    vals = np.repeat(window_scores, spec.suspect_length)
    counts = np.bincount(rows, minlength=length)
    if aggregation == "mean":
        out = np.bincount(rows, weights=vals, minlength=length)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = out / counts
    else:
        out = np.full(length, -np.inf)
        np.maximum.at(out, rows, vals)
    out[counts == 0] = np.nan
    return out


def rolling_score(
    params: ParameterSet,
    config: EncoderConfig,
    series: TimeSeries,
    spec: WindowSpec,
    aggregation: str = "mean",
    dist: str = "euclidean",
    prob: str = "exp-sq",
    batch_size: int = 512,
    center: np.ndarray | None = None,
) -> ScoreTrace:
    """Score every window of ``series`` and aggregate over overlapping suspect segments.

    Series shorter than the window are left-padded by edge replication. Labels
    are never read.
    """
    padded, pad = pad_left(series, spec.length)
    starts = window_starts(padded.length, spec)
    view = np.lib.stride_tricks.sliding_window_view(padded.values, spec.length, axis=0)[starts]
    stacked = np.transpose(view, (0, 2, 1))
    scores = score_windows(stacked, params, config, spec.context_length, dist, batch_size, center)
    probs = score_to_probability(scores, prob)
    per_step = aggregate_suspect_scores(scores, starts, spec, padded.length, aggregation)
    per_prob = aggregate_suspect_scores(probs, starts, spec, padded.length, aggregation)
    return ScoreTrace(series.id, per_step[pad:], per_prob[pad:], aggregation)
