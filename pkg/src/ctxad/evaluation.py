"""Point-adjusted and point-wise precision / recall / F1 with a global threshold."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .detector import ScoreTrace
from .series import LabelState, TimeSeries

__all__ = [
    "EvalResult",
    "segments",
    "point_adjust",
    "prf",
    "ThresholdSweep",
    "select_threshold",
    "evaluate_dataset",
]

MODES = ("adjusted", "pointwise")


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    threshold: float | None = None
    mode: str = "adjusted"

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, threshold: float | None = None, mode: str = "adjusted") -> "EvalResult":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f1, int(tp), int(fp), int(fn), threshold, mode)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = [
            ("mode", self.mode),
            ("threshold", "n/a" if self.threshold is None else f"{self.threshold:.6g}"),
            ("precision", f"{self.precision:.4f}"),
            ("recall", f"{self.recall:.4f}"),
            ("f1", f"{self.f1:.4f}"),
            ("tp", str(self.tp)),
            ("fp", str(self.fp)),
            ("fn", str(self.fn)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>12}" for k, v in rows)


def segments(y_true: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of 1 as half-open ``(start, stop)`` pairs; any other value ends a run."""
    y = (np.asarray(y_true) == 1).astype(np.int8)
    edges = np.diff(np.concatenate([[0], y, [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), stops.tolist()))


def point_adjust(y_true, y_pred) -> np.ndarray:
    """Mark a whole true anomalous segment as detected when any point in it is predicted."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    adjusted = y_pred.astype(bool).copy()
    for start, stop in segments(y_true):
        if adjusted[start:stop].any():
            adjusted[start:stop] = True
    return adjusted.astype(np.int8)


def prf(y_true, y_pred, mode: str = "adjusted", mask=None) -> EvalResult:
    """Precision/recall/F1 over binary vectors; ``mask`` drops timesteps (e.g. unlabeled) from the counts."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    mask = np.ones(y_true.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("evaluation mask is empty")
    pred = point_adjust(y_true, y_pred) if mode == "adjusted" else y_pred.astype(np.int8)
    t, p = y_true[mask] == 1, pred[mask] == 1
    return EvalResult.from_counts(int((t & p).sum()), int((~t & p).sum()), int((t & ~p).sum()), None, mode)


class ThresholdSweep:
    """Pooled counts for every threshold over many series.

    A timestep is predicted anomalous when ``score >= threshold``. Timesteps
    that are unscored or unlabeled are excluded. A true segment counts as
    detected (adjusted mode) when its highest valid score reaches the threshold.
    """

    def __init__(self, traces: Sequence[ScoreTrace], labels: Sequence[np.ndarray]):
        if len(traces) != len(labels):
            raise ValueError("one label vector per trace is required")
        normal, anomalous, seg_max, seg_len = [], [], [], []
        for trace, lab in zip(traces, labels):
            lab = np.asarray(lab)
            if len(trace) != len(lab):
                raise ValueError(f"trace {trace.series_id!r} has {len(trace)} steps, labels have {len(lab)}")
            valid = trace.scored & (lab != LabelState.UNLABELED)
            normal.append(trace.scores[valid & (lab == LabelState.NORMAL)])
            anomalous.append(trace.scores[valid & (lab == LabelState.ANOMALOUS)])
            for start, stop in segments(lab):
                v = valid[start:stop]
                if v.any():
                    seg_max.append(trace.scores[start:stop][v].max())
                    seg_len.append(int(v.sum()))
        self.normal = np.sort(np.concatenate(normal)) if normal else np.zeros(0)
        self.anomalous = np.sort(np.concatenate(anomalous)) if anomalous else np.zeros(0)
        order = np.argsort(seg_max)
        self.seg_max = np.asarray(seg_max, dtype=np.float64)[order]
        self.seg_len_cum = np.concatenate([[0], np.cumsum(np.asarray(seg_len, dtype=np.int64)[order])])
        self.n_anomalous = self.anomalous.size

    def counts(self, thresholds, mode: str = "adjusted") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        thr = np.atleast_1d(np.asarray(thresholds, dtype=np.float64))
        fp = self.normal.size - np.searchsorted(self.normal, thr, side="left")
        if mode == "pointwise":
            tp = self.n_anomalous - np.searchsorted(self.anomalous, thr, side="left")
        elif mode == "adjusted":
            below = np.searchsorted(self.seg_max, thr, side="left")
            tp = self.seg_len_cum[-1] - self.seg_len_cum[below]
        else:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        return tp, fp, self.n_anomalous - tp

    def f1(self, thresholds, mode: str = "adjusted") -> np.ndarray:
        tp, fp, fn = (c.astype(np.float64) for c in self.counts(thresholds, mode))
        with np.errstate(invalid="ignore", divide="ignore"):
            f1 = 2 * tp / (2 * tp + fp + fn)
        return np.nan_to_num(f1)

    def candidates(self) -> np.ndarray:
        values = np.unique(np.concatenate([self.normal, self.anomalous]))
        if values.size == 0:
            raise ValueError("no valid scored timesteps")
        mids = (values[:-1] + values[1:]) / 2.0
        return np.concatenate([[values[0]], mids, [np.nextafter(values[-1], np.inf)]])

    def best(self, mode: str = "adjusted") -> tuple[float, float]:
        cands = self.candidates()
        f1 = self.f1(cands, mode)
        i = int(np.argmax(f1))
        return float(cands[i]), float(f1[i])


def _labels_for(traces: Sequence[ScoreTrace], series: Sequence[TimeSeries] | Mapping[str, TimeSeries]) -> list[np.ndarray]:
    by_id = series if isinstance(series, Mapping) else {s.id: s for s in series}
    out = []
    for trace in traces:
        if trace.series_id not in by_id:
            raise KeyError(f"no series for trace {trace.series_id!r}")
        out.append(by_id[trace.series_id].labels)
    return out


def _check_coverage(traces: Sequence[ScoreTrace], series) -> None:
    ids = {t.series_id for t in traces}
    for s in series.values() if isinstance(series, Mapping) else series:
        if (s.labels != LabelState.UNLABELED).any() and s.id not in ids:
            raise KeyError(f"missing score trace for labeled series {s.id!r}")


def select_threshold(
    traces: Sequence[ScoreTrace],
    series: Sequence[TimeSeries] | Mapping[str, TimeSeries],
    mode: str = "adjusted",
) -> float:
    """Single global threshold maximizing pooled F1 over all series."""
    sweep = ThresholdSweep(traces, _labels_for(traces, series))
    if sweep.n_anomalous == 0 or sweep.normal.size == 0:
        raise ValueError("threshold selection needs both anomalous and normal labeled timesteps")
    return sweep.best(mode)[0]


def evaluate_dataset(
    traces: Sequence[ScoreTrace],
    series: Sequence[TimeSeries] | Mapping[str, TimeSeries],
    threshold: float,
    mode: str = "adjusted",
) -> EvalResult:
    _check_coverage(traces, series)
    sweep = ThresholdSweep(traces, _labels_for(traces, series))
    tp, fp, fn = (int(c[0]) for c in sweep.counts([threshold], mode))
    return EvalResult.from_counts(tp, fp, fn, float(threshold), mode)
