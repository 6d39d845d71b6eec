"""Command-line entry point: ``ctxad <subcommand> ...``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .adapters import ADAPTERS
from .augment import AugmentConfig, SlopeParams, inject_point_outliers, inject_slopes
from .bench import BenchSpec, config_hash, consolidate, format_table, run_bench, set_dotted, write_rows_csv
from .detector import ScoreTrace
from .evaluation import ThresholdSweep, evaluate_dataset, select_threshold
from .io import DataError, read_dataset, write_dataset
from .nn.tensor import NonFiniteError
from .series import SeriesTooShortError
from .synth import SuiteConfig, make_width_suite
from .trainer import ConfigError, Model, TrainConfig, fit

log = logging.getLogger("ctxad")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# -- config files -------------------------------------------------------------------------


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        if path.suffix == ".json":
            return json.loads(text)
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        return tomllib.loads(text.decode())
    except ValueError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def _coerce(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, pairs: Sequence[str]) -> dict:
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        set_dotted(d, key.strip(), _coerce(value))
    return d


def _dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- subcommands --------------------------------------------------------------------------


def cmd_train(args) -> int:
    raw = load_config_file(args.config) if args.config else {}
    apply_overrides(raw, args.set or [])
    data = dict(raw.pop("data", {}) or {})
    if args.seed is not None:
        raw["seed"] = args.seed
    config = TrainConfig.from_dict(raw)
    manifest = args.data or data.get("manifest")
    if manifest is None:
        raise ConfigError("no dataset: pass --data or set [data] manifest")
    if args.config and not args.data and not Path(manifest).is_absolute():
        manifest = str(Path(args.config).parent / manifest)
    train_split = data.get("train_split", "train")
    val_split = args.val_split if args.val_split is not None else data.get("validation_split")
    splits = read_dataset(manifest)
    if train_split not in splits:
        raise DataError(f"dataset has no {train_split!r} split (found {sorted(splits)})")
    validation = splits.get(val_split) if val_split else None
    if val_split and validation is None:
        raise DataError(f"dataset has no {val_split!r} split")

    resolved = config.to_dict()
    resolved["data"] = {"manifest": str(manifest), "train_split": train_split, "validation_split": val_split}
    key = dict(resolved)
    key.pop("seed")
    run_dir = Path(args.out) / f"{config_hash(key)}-seed{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(resolved, run_dir / "config.resolved.json")
    model, report = fit(splits[train_split], config, validation, checkpoint_path=run_dir / "model.ckpt")
    _dump_json(report.to_dict(), run_dir / "report.json")
    print(run_dir)
    return EXIT_OK


def _trace_name(series_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in series_id) + ".csv"


def write_traces(traces: Sequence[ScoreTrace], out: Path, meta: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for trace in traces:
        name = _trace_name(trace.series_id)
        trace.to_csv(out / name)
        index[trace.series_id] = name
    _dump_json({**meta, "traces": index}, out / "traces.json")


def read_traces(path: str | Path) -> list[ScoreTrace]:
    path = Path(path)
    index_path = path / "traces.json"
    if not index_path.exists():
        raise DataError(f"{path}: no traces.json index (write traces with `ctxad score`)")
    index = json.loads(index_path.read_text())
    out = []
    for sid, name in index["traces"].items():
        trace = ScoreTrace.from_csv(path / name)
        out.append(ScoreTrace(sid, trace.scores, trace.probabilities, index.get("aggregation", trace.aggregation)))
    return out


def cmd_score(args) -> int:
    model = Model.load(args.checkpoint)
    series = read_dataset(args.data, args.split)[args.split]
    traces = model.score_dataset(series, args.aggregation, args.stride)
    meta = {"checkpoint": str(args.checkpoint), "split": args.split, "aggregation": args.aggregation,
            "stride": args.stride or model.window.stride}
    write_traces(traces, Path(args.out), meta)
    if args.plot:
        from .report import plot_trace

        fig_dir = Path(args.out) / "figures"
        fig_dir.mkdir(exist_ok=True)
        for s, tr in zip(series, traces):
            plot_trace(s, tr, fig_dir / _trace_name(s.id).replace(".csv", ".png"))
    print(f"wrote {len(traces)} trace(s) to {args.out}")
    return EXIT_OK


def _read_threshold_file(path: str) -> float:
    text = Path(path).read_text().strip()
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        raise ConfigError(f"{path}: expected a number or JSON with a 'threshold' field") from None
    if isinstance(value, dict):
        value = value.get("threshold")
    if not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: no numeric threshold")
    return float(value)


def cmd_evaluate(args) -> int:
    traces = read_traces(args.traces)
    splits = read_dataset(args.data)
    if args.split not in splits:
        raise DataError(f"dataset has no {args.split!r} split")
    test = splits[args.split]
    if args.threshold_from == "test":
        threshold = select_threshold(traces, list(test), args.mode)
    elif args.threshold_from == "val":
        if not args.val_traces:
            raise ConfigError("--threshold-from val needs --val-traces")
        if args.val_split not in splits:
            raise DataError(f"dataset has no {args.val_split!r} split")
        threshold = select_threshold(read_traces(args.val_traces), list(splits[args.val_split]), args.mode)
    else:
        if not args.threshold_file:
            raise ConfigError("--threshold-from file needs --threshold-file")
        threshold = _read_threshold_file(args.threshold_file)
    result = evaluate_dataset(traces, list(test), threshold, args.mode)
    print(result.to_json() if args.format == "json" else result.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "result.json").write_text(result.to_json() + "\n")
        (out / "result.txt").write_text(result.to_text() + "\n")
        _write_sweep_csv(traces, test, out / "sweep.csv", args.mode)
        if args.plot:
            from .report import plot_trace

            by_id = {t.series_id: t for t in traces}
            for s in test:
                if s.id in by_id:
                    plot_trace(s, by_id[s.id], out / _trace_name(s.id).replace(".csv", ".png"), threshold)
    return EXIT_OK


def _write_sweep_csv(traces, test, path: Path, mode: str) -> None:
    """F1 against threshold for every candidate cut, as a delimited file."""
    by_id = {s.id: s for s in test}
    sweep = ThresholdSweep(traces, [by_id[t.series_id].labels for t in traces])
    cands = sweep.candidates()
    tp, fp, fn = sweep.counts(cands, mode)
    f1 = sweep.f1(cands, mode)
    with path.open("w") as fh:
        fh.write("threshold,tp,fp,fn,f1\n")
        for row in zip(cands, tp, fp, fn, f1):
            fh.write(f"{row[0]!r},{row[1]},{row[2]},{row[3]},{row[4]!r}\n")


def cmd_inject(args) -> int:
    splits = read_dataset(args.data)
    if args.split not in splits:
        raise DataError(f"dataset has no {args.split!r} split")
    try:
        augment = AugmentConfig(po_count_per_series=args.po_count, po_magnitude_range=tuple(args.po_range))
        slopes = SlopeParams(args.slope_count, tuple(args.slope_duration), tuple(args.slope_magnitude))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rng = np.random.default_rng(args.seed)
    injected = []
    for s in splits[args.split]:
        s = inject_point_outliers(s, augment, rng)
        if slopes.count:
            s = inject_slopes(s, slopes, rng)
        injected.append(s)
    out = dict(splits)
    out[args.split] = injected
    provenance = {"source": str(args.data), "split": args.split, "seed": args.seed,
                  "augment": {"po_count_per_series": args.po_count, "po_magnitude_range": list(args.po_range)},
                  "slopes": {"count": args.slope_count, "duration_range": list(args.slope_duration),
                             "magnitude_range": list(args.slope_magnitude)}}
    print(write_dataset(args.out, out, provenance))
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        config = SuiteConfig(n_series=args.n_series, length=args.length, period=args.period,
                             amplitude=args.amplitude, noise_std=args.noise_std,
                             anomalies_per_series=args.anomalies, base_magnitude=args.magnitude,
                             warmup=args.warmup)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cells = make_width_suite(args.widths, [args.seed], config)
    for cell in cells:
        target = Path(args.out) if len(cells) == 1 else Path(args.out) / f"width-{cell.width:g}"
        provenance = {"generator": "sine-width-suite", "seed": args.seed, "width": cell.width,
                      "config": config.to_dict(), "checksum": cell.checksum()}
        print(write_dataset(target, {"train": cell.train, "test": cell.test}, provenance))
    return EXIT_OK


def cmd_convert(args) -> int:
    adapter = ADAPTERS[args.format]
    if args.format == "kpi":
        splits = adapter(args.input, args.split or "train")
    elif args.format == "yahoo":
        splits = adapter(args.input, split=not args.no_split)
    else:
        splits = adapter(args.input)
    provenance = {"format": args.format, "source": str(args.input)}
    print(write_dataset(args.out, splits, provenance))
    return EXIT_OK


def cmd_bench(args) -> int:
    raw = load_config_file(args.config)
    apply_overrides(raw, args.set or [])
    if raw.get("data", {}).get("manifest") and not Path(raw["data"]["manifest"]).is_absolute():
        raw["data"]["manifest"] = str(Path(args.config).parent / raw["data"]["manifest"])
    spec = BenchSpec.from_dict(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(raw, out / "bench.resolved.json")
    cells = run_bench(spec, out, args.jobs, progress=lambda m: log.info(m))
    rows = consolidate(cells)
    _dump_json(rows, out / "results.json")
    write_rows_csv(rows, out / "results.csv")
    table = format_table(rows)
    (out / "results.txt").write_text(table + "\n")
    print(table)
    if args.plot:
        from .report import plot_bench

        plot_bench([r for r in rows if r["width"] is not None] or rows, out / "results.png")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxad", description="Contextual hypersphere anomaly detection for time series.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model from a run config")
    t.add_argument("--config", help="TOML or JSON run file")
    t.add_argument("--data", help="dataset manifest (overrides [data] manifest)")
    t.add_argument("--val-split", help="split used for early stopping")
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted)")
    t.add_argument("--out", default="runs")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="rolling scores for every series of a split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--aggregation", choices=["mean", "max", "max-first-alert"], default="mean")
    s.add_argument("--stride", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", action="store_true", help="also render one figure per series")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("evaluate", help="precision / recall / F1 of score traces")
    e.add_argument("--traces", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--threshold-from", choices=["test", "val", "file"], default="test")
    e.add_argument("--val-traces")
    e.add_argument("--val-split", default="validation")
    e.add_argument("--threshold-file")
    e.add_argument("--mode", choices=["adjusted", "pointwise"], default="adjusted")
    e.add_argument("--format", choices=["json", "text"], default="text")
    e.add_argument("--out", help="directory for result.json, result.txt and sweep.csv")
    e.add_argument("--plot", action="store_true", help="with --out, render per-series figures")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("inject", help="write a copy of a dataset with injected anomalies")
    i.add_argument("--data", required=True)
    i.add_argument("--split", default="train")
    i.add_argument("--out", required=True)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--po-count", type=int, default=0)
    i.add_argument("--po-range", type=float, nargs=2, default=(0.5, 3.0))
    i.add_argument("--slope-count", type=int, default=0)
    i.add_argument("--slope-duration", type=int, nargs=2, default=(10, 50))
    i.add_argument("--slope-magnitude", type=float, nargs=2, default=(1.0, 3.0))
    i.set_defaults(func=cmd_inject)

    b = sub.add_parser("bench", help="run a grid of training configurations over seeds")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--set", action="append", metavar="KEY=VALUE")
    b.add_argument("--plot", action="store_true", help="render results.png")
    b.set_defaults(func=cmd_bench)

    y = sub.add_parser("synth", help="generate the sinusoid width suite")
    y.add_argument("--out", required=True)
    y.add_argument("--widths", type=float, nargs="+", default=[0.0])
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--n-series", type=int, default=50)
    y.add_argument("--length", type=int, default=2000)
    y.add_argument("--period", type=float, default=100.0)
    y.add_argument("--amplitude", type=float, default=1.0)
    y.add_argument("--noise-std", type=float, default=0.1)
    y.add_argument("--anomalies", type=int, default=5)
    y.add_argument("--magnitude", type=float, default=1.0)
    y.add_argument("--warmup", type=int, default=200, help="anomaly-free prefix of each test series")
    y.set_defaults(func=cmd_synth)

    c = sub.add_parser("convert", help="convert a benchmark layout to the canonical format")
    c.add_argument("--format", choices=sorted(ADAPTERS), required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--split", help="split tag for kpi")
    c.add_argument("--no-split", action="store_true", help="yahoo: keep whole series as test")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SeriesTooShortError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
