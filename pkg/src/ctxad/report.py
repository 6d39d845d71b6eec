"""Figures for score traces and benchmark grids.

matplotlib is imported lazily (optional ``plot`` extra) and always with the
non-interactive Agg backend; nothing here is needed to train or score.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .detector import ScoreTrace
from .series import LabelState, TimeSeries

__all__ = ["plot_trace", "plot_bench", "plotting_available"]

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def plotting_available() -> bool:
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("figures need matplotlib; install the 'plot' extra") from exc
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    plt.rcParams.update(STYLE)
    return plt


def _spans(mask: np.ndarray):
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1))


def plot_trace(series: TimeSeries, trace: ScoreTrace, path: str | Path, threshold: float | None = None) -> Path:
    """Values (top) and scores (bottom); true anomalies shaded, alarms marked."""
    plt = _pyplot()
    t = np.arange(series.length)
    fig, (ax_v, ax_s) = plt.subplots(2, 1, sharex=True, figsize=(8, 4))
    for d in range(series.channels):
        ax_v.plot(t, series.values[:, d], lw=0.7)
    for start, stop in _spans(series.labels == LabelState.ANOMALOUS):
        for ax in (ax_v, ax_s):
            ax.axvspan(start - 0.5, stop - 0.5, color="tab:red", alpha=0.2, lw=0)
    ax_v.set_ylabel("value")
    ax_v.set_title(series.id)
    ax_s.plot(t, trace.scores, color="k", lw=0.7)
    if threshold is not None:
        ax_s.axhline(threshold, color="tab:orange", ls="--", lw=0.8, label=f"threshold {threshold:.3g}")
        with np.errstate(invalid="ignore"):
            alarms = trace.scores >= threshold
        ax_s.plot(t[alarms], trace.scores[alarms], "o", ms=2.5, color="tab:orange")
        ax_s.legend(loc="upper right", frameon=False)
    ax_s.set_ylabel("score")
    ax_s.set_xlabel("t")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_bench(rows: Sequence[Mapping], path: str | Path, x: str = "width", metric: str = "f1") -> Path:
    """Mean metric (with std error bars) against ``x``, one line per configuration label."""
    plt = _pyplot()
    groups: dict[str, list[Mapping]] = {}
    for row in rows:
        groups.setdefault(str(row.get("label", "")), []).append(row)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, items in sorted(groups.items()):
        items = sorted(items, key=lambda r: r[x])
        xs = [r[x] for r in items]
        ax.errorbar(
            xs,
            [r[f"{metric}_mean"] for r in items],
            yerr=[r[f"{metric}_std"] for r in items],
            marker="o",
            ms=3,
            capsize=2,
            lw=1,
            label=label or None,
        )
    ax.set_xlabel(x)
    ax.set_ylabel(metric)
    ax.set_ylim(0, 1.02)
    if len(groups) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path
