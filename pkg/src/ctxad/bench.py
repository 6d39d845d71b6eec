"""Benchmark suites: a grid (or random sample) of training overrides crossed with seeds.

One cell is one (overrides, seed) training run, evaluated on every requested
width of the synthetic suite (or on the test split of a dataset manifest).
Cell results are written as individual JSON files so an interrupted suite
resumes where it stopped.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .evaluation import ThresholdSweep
from .synth import SuiteConfig, make_width_suite
from .trainer import ConfigError, TrainConfig, fit

__all__ = ["BenchSpec", "expand_grid", "run_cell", "run_bench", "consolidate", "format_table", "config_hash", "set_dotted"]

log = logging.getLogger(__name__)

METRICS = ("f1", "precision", "recall", "pointwise_f1")


def config_hash(obj: Any, n: int = 10) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:n]


def set_dotted(d: dict, key: str, value: Any) -> None:
    *parents, leaf = key.split(".")
    for p in parents:
        d = d.setdefault(p, {})
        if not isinstance(d, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a table")
    d[leaf] = value


@dataclass(frozen=True)
class BenchSpec:
    seeds: tuple[int, ...] = (0,)
    widths: tuple[float, ...] = (0.0,)
    synth: SuiteConfig = field(default_factory=SuiteConfig)
    train: Mapping[str, Any] = field(default_factory=dict)
    grid: Mapping[str, Sequence[Any]] = field(default_factory=dict)
    search: str = "grid"
    samples: int = 0
    search_seed: int = 0
    mode: str = "adjusted"
    aggregation: str = "mean"
    manifest: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BenchSpec":
        known = {"suite", "synth", "train", "grid", "search", "data"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown bench section(s): {sorted(unknown)}")
        suite = dict(d.get("suite", {}))
        search = dict(d.get("search", {}))
        synth = dict(d.get("synth", {}))
        bad = set(synth) - {f.name for f in fields(SuiteConfig)}
        if bad:
            raise ConfigError(f"unknown key(s) in [synth]: {sorted(bad)}")
        bad = set(suite) - {"seeds", "widths", "mode", "aggregation"}
        if bad:
            raise ConfigError(f"unknown key(s) in [suite]: {sorted(bad)}")
        bad = set(search) - {"mode", "samples", "seed"}
        if bad:
            raise ConfigError(f"unknown key(s) in [search]: {sorted(bad)}")
        grid = dict(d.get("grid", {}))
        for k, v in grid.items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"grid entry {k!r} must be a non-empty list")
        spec = cls(
            seeds=tuple(int(s) for s in suite.get("seeds", (0,))),
            widths=tuple(float(w) for w in suite.get("widths", (0.0,))),
            synth=SuiteConfig(**synth),
            train=dict(d.get("train", {})),
            grid=grid,
            search=search.get("mode", "grid"),
            samples=int(search.get("samples", 0)),
            search_seed=int(search.get("seed", 0)),
            mode=suite.get("mode", "adjusted"),
            aggregation=suite.get("aggregation", "mean"),
            manifest=d.get("data", {}).get("manifest"),
        )
        if spec.search not in ("grid", "random"):
            raise ConfigError("search.mode must be 'grid' or 'random'")
        if spec.search == "random" and spec.samples < 1:
            raise ConfigError("random search needs search.samples >= 1")
        if not spec.seeds:
            raise ConfigError("suite.seeds must be non-empty")
        # fail early on a bad training section
        for overrides in expand_grid(spec):
            build_config(spec, overrides, spec.seeds[0])
        return spec


def expand_grid(spec: BenchSpec) -> list[dict[str, Any]]:
    """Every override combination (grid) or ``samples`` uniform draws from the grid (random)."""
    keys = sorted(spec.grid)
    if not keys:
        return [{}]
    if spec.search == "grid":
        return [dict(zip(keys, combo)) for combo in itertools.product(*(spec.grid[k] for k in keys))]
    rng = np.random.default_rng(spec.search_seed)
    out = []
    for _ in range(spec.samples):
        out.append({k: spec.grid[k][int(rng.integers(len(spec.grid[k])))] for k in keys})
    return out


def build_config(spec: BenchSpec, overrides: Mapping[str, Any], seed: int) -> TrainConfig:
    d = copy.deepcopy(dict(spec.train))
    for k, v in overrides.items():
        set_dotted(d, k, v)
    d["seed"] = seed
    return TrainConfig.from_dict(d)


def label_for(overrides: Mapping[str, Any]) -> str:
    return ", ".join(f"{k}={v}" for k, v in sorted(overrides.items()))


def _evaluate(model, test, aggregation: str, stride: int) -> dict[str, float]:
    traces = model.score_dataset(test, aggregation, stride)
    sweep = ThresholdSweep(traces, [s.labels for s in test])
    thr, f1 = sweep.best("adjusted")
    tp, fp, fn = (int(c[0]) for c in sweep.counts([thr], "adjusted"))
    _, pw = sweep.best("pointwise")
    return {
        "f1": f1,
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
        "pointwise_f1": pw,
        "threshold": thr,
    }


def run_cell(spec: BenchSpec, overrides: Mapping[str, Any], seed: int) -> dict[str, Any]:
    """Train once and evaluate on each width (threshold chosen on the test labels)."""
    config = build_config(spec, overrides, seed)
    started = time.perf_counter()
    if spec.manifest is not None:
        from .io import read_dataset

        data = read_dataset(spec.manifest)
        targets = [(None, data["test"])]
        train, validation = data["train"], data.get("validation")
    else:
        cells = make_width_suite(list(spec.widths), [seed], spec.synth)
        train, validation = cells[0].train, None
        targets = [(c.width, c.test) for c in cells]
    model, report = fit(train, config, validation)
    train_seconds = time.perf_counter() - started
    results = []
    for width, test in targets:
        t0 = time.perf_counter()
        metrics = _evaluate(model, test, spec.aggregation, config.score_stride)
        metrics.update(width=width, score_seconds=time.perf_counter() - t0)
        results.append(metrics)
    return {
        "overrides": dict(overrides),
        "label": label_for(overrides),
        "seed": seed,
        "train_seconds": train_seconds,
        "epochs_run": report.epochs_run,
        "epoch_losses": report.epoch_losses,
        "results": results,
    }


def _cell_job(args):
    spec, overrides, seed, path = args
    cell = run_cell(spec, overrides, seed)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(cell, indent=2, sort_keys=True))
    tmp.replace(path)
    return cell


def run_bench(
    spec: BenchSpec,
    out_dir: str | Path,
    jobs: int = 1,
    progress: Callable[[str], None] | None = None,
) -> list[dict[str, Any]]:
    """Run (or resume) every cell; returns all cell records."""
    cell_dir = Path(out_dir) / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    todo, cells = [], []
    for overrides in expand_grid(spec):
        for seed in spec.seeds:
            key = config_hash({"overrides": overrides, "train": spec.train, "synth": spec.synth.__dict__,
                               "widths": spec.widths, "manifest": spec.manifest, "aggregation": spec.aggregation})
            path = cell_dir / f"{key}-seed{seed}.json"
            if path.exists():
                cells.append(json.loads(path.read_text()))
                if progress:
                    progress(f"cached {path.name}")
            else:
                todo.append((spec, overrides, seed, path))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for cell in pool.map(_cell_job, todo):
                cells.append(cell)
                if progress:
                    progress(f"done {cell['label'] or 'base'} seed {cell['seed']}")
    else:
        for job in todo:
            cell = _cell_job(job)
            cells.append(cell)
            if progress:
                progress(f"done {cell['label'] or 'base'} seed {cell['seed']}")
    return cells


def consolidate(cells: Sequence[Mapping[str, Any]]) -> list[dict[str, Any]]:
    """Mean and population std of each metric over seeds, per (configuration, width)."""
    groups: dict[tuple, list[Mapping]] = {}
    for cell in cells:
        for res in cell["results"]:
            groups.setdefault((cell["label"], res["width"]), []).append(res)
    rows = []
    for (label, width), items in sorted(groups.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])):
        row: dict[str, Any] = {"label": label, "width": width, "n_runs": len(items)}
        for m in METRICS:
            vals = np.array([r[m] for r in items], dtype=np.float64)
            row[f"{m}_mean"] = float(vals.mean())
            row[f"{m}_std"] = float(vals.std())
        rows.append(row)
    return rows


def format_table(rows: Sequence[Mapping[str, Any]]) -> str:
    header = ["configuration", "width", "runs", *METRICS]
    body = []
    for r in rows:
        body.append(
            [r["label"] or "base", "-" if r["width"] is None else f"{r['width']:g}", str(r["n_runs"])]
            + [f"{r[m + '_mean']:.4f} ± {r[m + '_std']:.4f}" for m in METRICS]
        )
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body)
    return "\n".join(lines)


def write_rows_csv(rows: Sequence[Mapping[str, Any]], path: str | Path) -> None:
    import csv

    keys = ["label", "width", "n_runs"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in keys})
