"""Batch assembly, the training loop, early stopping and threshold selection."""

from __future__ import annotations

import logging
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .augment import AugmentConfig, SlopeParams, coe_augment, inject_point_outliers, inject_slopes, mixup_augment
from .detector import (
    DISTANCES,
    PROBABILITY_MAPS,
    ScoreTrace,
    batch_contextual_loss,
    batch_hsc_loss,
    rolling_score,
)
from .encoder import EncoderConfig, TCNEncoder, init_parameters
from .evaluation import ThresholdSweep, select_threshold
from .nn.optim import VARIANTS, OptimizerState, clip_grad_norm, optimizer_step
from .nn.params import ParameterSet, clone_params, load_checkpoint, save_checkpoint
from .nn.tensor import NonFiniteError, Tensor
from .series import (
    LABEL_POLICIES,
    Dataset,
    LabelState,
    StandardizationStats,
    TimeSeries,
    Window,
    WindowSpec,
    fit_standardizer,
    impute,
    random_crops,
    stack_windows,
    standardize,
)

__all__ = [
    "ConfigError",
    "TrainingDivergedError",
    "TrainConfig",
    "TrainReport",
    "EarlyStopping",
    "Model",
    "batch_size",
    "assemble_batch",
    "train_step",
    "train_epoch",
    "fit",
    "select_threshold",
]

log = logging.getLogger(__name__)

OBJECTIVES = ("contextual", "hsc")


class ConfigError(ValueError):
    pass


class TrainingDivergedError(NonFiniteError):
    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message if dump_path is None else f"{message} (batch written to {dump_path})")
        self.dump_path = dump_path


@dataclass(frozen=True)
class TrainConfig:
    window: WindowSpec = field(default_factory=lambda: WindowSpec(64, 4, 1))
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    slopes: SlopeParams = field(default_factory=SlopeParams)
    series_per_batch: int = 16
    crops_per_series: int = 8
    epochs: int = 10
    batches_per_epoch: int = 100
    learning_rate: float = 1e-3
    optimizer: str = "yogi"
    seed: int = 0
    early_stopping: bool = True
    patience: int = 5
    distance: str = "euclidean"
    objective: str = "contextual"
    hsc_center: str = "init-mean"
    probability: str = "exp-sq"
    dtype: str = "float32"
    grad_clip: float = 10.0
    standardize: bool = True
    standardize_method: str = "mean-std"
    label_policy: str = "unlabeled-as-normal"
    use_train_labels: bool = True
    aggregation: str = "mean"
    score_stride: int = 1
    # "once": inject point outliers / slopes before the first epoch; "epoch": redraw them every epoch
    po_refresh: str = "once"

    def __post_init__(self):
        positive = ("series_per_batch", "crops_per_series", "epochs", "batches_per_epoch", "score_stride")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        checks = {
            "optimizer": VARIANTS,
            "distance": DISTANCES,
            "objective": OBJECTIVES,
            "hsc_center": ("init-mean", "zero"),
            "probability": PROBABILITY_MAPS,
            "dtype": ("float32", "float64"),
            "standardize_method": ("mean-std", "median-iqr"),
            "label_policy": LABEL_POLICIES,
            "aggregation": ("mean", "max", "max-first-alert"),
            "po_refresh": ("once", "epoch"),
        }
        for name, allowed in checks.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"]["po_magnitude_range"] = list(self.augment.po_magnitude_range)
        d["slopes"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["slopes"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any], strict: bool = True) -> "TrainConfig":
        """Build from a nested mapping; unknown keys raise ``ConfigError`` naming them."""
        nested = {"window": WindowSpec, "encoder": EncoderConfig, "augment": AugmentConfig, "slopes": SlopeParams}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown and strict:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for key, value in d.items():
            if key not in known:
                continue
            if key in nested:
                sub = nested[key]
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be a table")
                sub_known = {f.name for f in fields(sub)}
                bad = set(value) - sub_known
                if bad:
                    raise ConfigError(f"unknown key(s) in [{key}]: {sorted(f'{key}.{b}' for b in bad)}")
                value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
                try:
                    kwargs[key] = sub(**value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"invalid [{key}] section: {exc}") from exc
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    validation_f1: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_validation_f1: float | None = None
    validation_threshold: float | None = None
    epochs_run: int = 0
    stopped_early: bool = False
    checkpoint: str | None = None
    wall_clock_seconds: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return asdict(self)


class EarlyStopping:
    """Track the best validation score; stop once ``patience`` epochs pass without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best: float | None = None
        self.best_epoch: int | None = None
        self.since_best = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value`` for ``epoch`` (1-based); returns True when it is a new best."""
        if self.best is None or value > self.best:
            self.best, self.best_epoch, self.since_best = value, epoch, 0
            return True
        self.since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_best >= self.patience


@dataclass
class Model:
    """Everything needed to score new series: encoder, parameters, windowing and preprocessing."""

    encoder: EncoderConfig
    params: ParameterSet
    window: WindowSpec
    stats: StandardizationStats | None = None
    distance: str = "euclidean"
    probability: str = "exp-sq"
    center: np.ndarray | None = None

    def preprocess(self, series: TimeSeries) -> TimeSeries:
        series = impute(series)
        return standardize(series, self.stats) if self.stats is not None else series

    def score(self, series: TimeSeries, aggregation: str = "mean", stride: int | None = None) -> ScoreTrace:
        spec = self.window if stride is None else WindowSpec(self.window.context_length, self.window.suspect_length, stride)
        return rolling_score(
            self.params, self.encoder, self.preprocess(series), spec, aggregation, self.distance, self.probability,
            center=self.center,
        )

    def score_dataset(self, dataset, aggregation: str = "mean", stride: int | None = None) -> list[ScoreTrace]:
        return [self.score(s, aggregation, stride) for s in dataset]

    def meta(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "window": asdict(self.window),
            "stats": None if self.stats is None else self.stats.to_dict(),
            "distance": self.distance,
            "probability": self.probability,
            "center": None if self.center is None else [float(v) for v in self.center],
        }

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = self.meta()
        if extra:
            meta.update(extra)
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        params, meta = load_checkpoint(path)
        return cls(
            EncoderConfig(**meta["encoder"]),
            params,
            WindowSpec(**meta["window"]),
            None if meta.get("stats") is None else StandardizationStats.from_dict(meta["stats"]),
            meta.get("distance", "euclidean"),
            meta.get("probability", "exp-sq"),
            None if meta.get("center") is None else np.asarray(meta["center"]),
        )


def batch_size(series_per_batch: int, crops_per_series: int, coe_rate: float, mixup_rate: float) -> int:
    n = series_per_batch * crops_per_series
    return n + int(np.floor(n * coe_rate)) + int(np.floor(n * mixup_rate))


def assemble_batch(dataset: Dataset | Sequence[TimeSeries], config: TrainConfig, rng: np.random.Generator) -> list[Window]:
    """Random crops, then contextual outlier exposure, then mixup over crops and COE windows."""
    base = random_crops(dataset, config.series_per_batch, config.crops_per_series, config.window, rng, config.label_policy)
    coe = coe_augment(base, config.augment.coe_rate, rng)
    n_mix = int(np.floor(len(base) * config.augment.mixup_rate))
    mixed = mixup_augment(base + coe, config.augment.mixup_rate, config.augment.mixup_alpha, rng, count=n_mix)
    return base + coe + mixed


def _loss(encoder: TCNEncoder, batch: Sequence[Window], config: TrainConfig, center: np.ndarray | None) -> Tensor:
    values, labels, skip = stack_windows(batch)
    x = Tensor(values.astype(config.np_dtype))
    if config.objective == "hsc":
        return batch_hsc_loss(encoder(x), labels, center, skip)
    z, zc = encoder.embed_pair(x, config.window.context_length)
    return batch_contextual_loss(z, zc, labels, config.distance, skip)


def _dump_batch(batch: Sequence[Window]) -> str:
    values, labels, skip = stack_windows(batch)
    fd, path = tempfile.mkstemp(prefix="ctxad-diverged-", suffix=".npz")
    with open(fd, "wb") as fh:
        np.savez(fh, values=values, labels=labels, skip=skip, origins=np.array([f"{w.origin[0]}:{w.origin[1]}" for w in batch]))
    return path


def train_step(
    params: ParameterSet,
    state: OptimizerState,
    batch: Sequence[Window],
    config: TrainConfig,
    center: np.ndarray | None = None,
) -> float:
    """One forward/backward/update on ``batch``; returns the batch loss."""
    encoder = TCNEncoder(config.encoder, params)
    for p in params.values():
        p.zero_grad()
    try:
        loss = _loss(encoder, batch, config, center)
        loss.backward()
        grads = {name: p.grad if p.grad is not None else np.zeros_like(p.data) for name, p in params.items()}
        if config.grad_clip > 0:
            clip_grad_norm(grads, config.grad_clip)
        optimizer_step(params, grads, state, config.optimizer)
    except NonFiniteError as exc:
        raise TrainingDivergedError(f"non-finite value during training step: {exc}", _dump_batch(batch)) from exc
    return float(loss.data)


def train_epoch(
    params: ParameterSet,
    state: OptimizerState,
    dataset: Dataset | Sequence[TimeSeries],
    config: TrainConfig,
    rng: np.random.Generator,
    center: np.ndarray | None = None,
) -> float:
    """Run ``batches_per_epoch`` optimizer steps; returns the mean batch loss."""
    losses = [
        train_step(params, state, assemble_batch(dataset, config, rng), config, center)
        for _ in range(config.batches_per_epoch)
    ]
    return float(np.mean(losses))


def _training_series(train: Dataset, config: TrainConfig) -> list[TimeSeries]:
    out = []
    for s in train:
        if not config.use_train_labels:
            s = s.with_values(s.values, np.full(s.length, LabelState.UNLABELED, dtype=np.int8))
        out.append(s)
    return out


def _inject(series: Sequence[TimeSeries], config: TrainConfig, rng: np.random.Generator) -> list[TimeSeries]:
    if config.augment.po_count_per_series == 0 and config.slopes.count == 0:
        return list(series)
    out = []
    for s in series:
        s = inject_point_outliers(s, config.augment, rng)
        if config.slopes.count and s.length >= config.slopes.duration_range[1]:
            s = inject_slopes(s, config.slopes, rng)
        out.append(s)
    return out


def _init_center(encoder: TCNEncoder, series: Sequence[TimeSeries], config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    if config.hsc_center == "zero":
        return np.zeros(config.encoder.embedding_dim)
    crops = random_crops(series, config.series_per_batch, config.crops_per_series, config.window, rng)
    values, _, _ = stack_windows(crops)
    return encoder(Tensor(values.astype(config.np_dtype))).data.mean(axis=0).astype(np.float64)


def validation_f1(model: Model, validation: Dataset, config: TrainConfig) -> tuple[float, float]:
    """Best adjusted F1 on the validation split and the threshold achieving it."""
    traces = model.score_dataset(validation, config.aggregation, config.score_stride)
    sweep = ThresholdSweep(traces, [s.labels for s in validation])
    if sweep.n_anomalous == 0 or sweep.normal.size == 0:
        return 0.0, float("nan")
    thr, f1 = sweep.best("adjusted")
    return f1, thr


def fit(
    train: Dataset,
    config: TrainConfig,
    validation: Dataset | None = None,
    checkpoint_path: str | Path | None = None,
) -> tuple[Model, TrainReport]:
    """Train from scratch.

    With a labeled validation split, the parameters from the epoch with the best
    validation adjusted F1 are kept and training stops after ``patience``
    epochs without improvement. Otherwise the final-epoch parameters are kept.
    """
    started = time.perf_counter()
    if len(train) == 0:
        raise ValueError("training dataset is empty")
    init_seq, data_seq, center_seq = np.random.SeedSequence(config.seed).spawn(3)
    config.encoder.check_window(config.window.length)

    train_series = [impute(s) for s in train]
    stats = fit_standardizer(train_series, config.standardize_method) if config.standardize else None
    if stats is not None:
        train_series = [standardize(s, stats) for s in train_series]
    train_series = _training_series(Dataset(tuple(train_series), "train"), config)

    params = init_parameters(config.encoder, np.random.default_rng(init_seq), config.np_dtype)
    state = OptimizerState.for_params(params, lr=config.learning_rate)
    encoder = TCNEncoder(config.encoder, params)
    center = None
    if config.objective == "hsc":
        center = _init_center(encoder, train_series, config, np.random.default_rng(center_seq))
    model = Model(config.encoder, params, config.window, stats, config.distance, config.probability, center)

    use_validation = validation is not None and len(validation) > 0 and validation.has_labels()
    stopper = EarlyStopping(config.patience)
    report = TrainReport()
    best_params = None
    rng = np.random.default_rng(data_seq)

    epoch_series = _inject(train_series, config, rng)
    for epoch in range(1, config.epochs + 1):
        if config.po_refresh == "epoch" and epoch > 1:
            epoch_series = _inject(train_series, config, rng)
        loss = train_epoch(params, state, epoch_series, config, rng, center)
        report.epoch_losses.append(loss)
        report.epochs_run = epoch
        if use_validation:
            f1, thr = validation_f1(model, validation, config)
            report.validation_f1.append(f1)
            if stopper.update(epoch, f1):
                best_params = clone_params(params)
                report.validation_threshold = thr
            log.info("epoch %d loss %.5f val_f1 %.4f", epoch, loss, f1)
            if config.early_stopping and stopper.should_stop:
                report.stopped_early = epoch < config.epochs
                break
        else:
            log.info("epoch %d loss %.5f", epoch, loss)

    if use_validation and best_params is not None:
        model.params = best_params
        report.best_epoch = stopper.best_epoch
        report.best_validation_f1 = stopper.best
    else:
        report.best_epoch = report.epochs_run

    if checkpoint_path is not None:
        model.save(checkpoint_path, {"train_config": config.to_dict()})
        report.checkpoint = str(checkpoint_path)
    report.wall_clock_seconds = time.perf_counter() - started
    return model, report
