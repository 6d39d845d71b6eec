import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxad.augment import AugmentConfig
from ctxad.encoder import EncoderConfig, init_parameters
from ctxad.nn.optim import OptimizerState
from ctxad.series import Dataset, LabelState, TimeSeries, WindowSpec
from ctxad.trainer import (
    ConfigError,
    EarlyStopping,
    Model,
    TrainConfig,
    assemble_batch,
    batch_size,
    fit,
    train_epoch,
)

TINY_ENCODER = EncoderConfig(input_channels=1, num_blocks=3, kernel_size=3, hidden_channels=8, embedding_dim=4)


def tiny_config(**kw):
    base = dict(
        window=WindowSpec(12, 2),
        encoder=TINY_ENCODER,
        augment=AugmentConfig(po_count_per_series=5),
        series_per_batch=2,
        crops_per_series=4,
        epochs=2,
        batches_per_epoch=3,
        dtype="float64",
    )
    base.update(kw)
    return TrainConfig(**base)


def sines(n=3, T=80, seed=0, labeled=False):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        values = np.sin(np.arange(T) / 5.0) + rng.normal(0, 0.1, T)
        labels = np.zeros(T, dtype=np.int8)
        if labeled:
            labels[40 + i] = LabelState.ANOMALOUS
            values[40 + i] += 4.0
        out.append(TimeSeries(f"s{i}", values, labels))
    return Dataset(tuple(out))


class TestBatch:
    def test_examples(self):
        assert batch_size(2, 4, 0.5, 0.25) == 14
        assert batch_size(2, 4, 0.0, 0.0) == 8
        assert batch_size(1, 1, 0.9, 0.0) == 1

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.floats(0, 2), st.floats(0, 2), st.integers(0, 1000))
    def test_assembled_size_matches_formula(self, b_s, b_c, r_coe, r_mix, seed):
        if b_s * b_c < 2 and (r_coe * b_s * b_c >= 1 or r_mix * b_s * b_c >= 1):
            return
        cfg = tiny_config(series_per_batch=b_s, crops_per_series=b_c, augment=AugmentConfig(coe_rate=r_coe, mixup_rate=r_mix))
        batch = assemble_batch(sines(), cfg, np.random.default_rng(seed))
        assert len(batch) == batch_size(b_s, b_c, r_coe, r_mix)


class TestConfig:
    def test_round_trip(self):
        cfg = tiny_config()
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="learning_rat"):
            TrainConfig.from_dict({"learning_rat": 0.1})
        with pytest.raises(ConfigError, match="augment.coe"):
            TrainConfig.from_dict({"augment": {"coe": 0.1}})

    @pytest.mark.parametrize("kw", [{"optimizer": "sgd"}, {"epochs": 0}, {"distance": "manhattan"}, {"patience": -1}])
    def test_invalid_values(self, kw):
        with pytest.raises(ConfigError):
            tiny_config(**kw)

    def test_invalid_nested(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"window": {"context_length": 0, "suspect_length": 1}})


class TestEarlyStopping:
    def run(self, values, patience):
        stopper, seen = EarlyStopping(patience), 0
        for epoch, v in enumerate(values, 1):
            stopper.update(epoch, v)
            seen = epoch
            if stopper.should_stop:
                break
        return stopper.best_epoch, seen

    def test_example(self):
        assert self.run([0.5, 0.7, 0.6, 0.6], 2) == (2, 4)

    def test_patience_zero(self):
        assert self.run([0.9, 0.8, 0.7], 0) == (1, 1)

    def test_ties_do_not_improve(self):
        assert self.run([0.5, 0.5, 0.5], 1) == (1, 2)


class TestTraining:
    def test_zero_learning_rate(self):
        cfg = tiny_config(learning_rate=0.0)
        params = init_parameters(cfg.encoder, np.random.default_rng(0), np.float64)
        before = {k: v.data.copy() for k, v in params.items()}
        loss = train_epoch(params, OptimizerState.for_params(params, lr=0.0), sines(), cfg, np.random.default_rng(1))
        assert np.isfinite(loss)
        for k in params:
            np.testing.assert_array_equal(params[k].data, before[k])

    def test_deterministic(self, tmp_path):
        cfg = tiny_config(augment=AugmentConfig(coe_rate=0.5, mixup_rate=0.5, po_count_per_series=3))
        m1, r1 = fit(sines(), cfg, checkpoint_path=tmp_path / "a.ckpt")
        m2, r2 = fit(sines(), cfg, checkpoint_path=tmp_path / "b.ckpt")
        assert r1.epoch_losses == r2.epoch_losses
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_without_validation_keeps_last(self):
        _, report = fit(sines(), tiny_config(epochs=3))
        assert report.epochs_run == 3 and report.best_epoch == 3
        assert report.validation_f1 == []

    def test_validation_tracked(self):
        model, report = fit(sines(), tiny_config(epochs=3, patience=1), validation=sines(2, seed=5, labeled=True))
        assert len(report.validation_f1) == report.epochs_run
        assert report.best_validation_f1 == max(report.validation_f1)
        assert report.validation_f1[report.best_epoch - 1] == report.best_validation_f1

    def test_model_round_trip(self, tmp_path):
        model, _ = fit(sines(), tiny_config(epochs=1))
        model.save(tmp_path / "m.ckpt")
        loaded = Model.load(tmp_path / "m.ckpt")
        series = sines(1, seed=9).series[0]
        np.testing.assert_array_equal(model.score(series).scores, loaded.score(series).scores)

    def test_hsc_objective(self):
        model, report = fit(sines(), tiny_config(objective="hsc"))
        assert model.center is not None and np.isfinite(report.epoch_losses).all()

    @pytest.mark.parametrize("refresh,calls", [("once", 1), ("epoch", 3)])
    def test_po_refresh(self, monkeypatch, refresh, calls):
        import ctxad.trainer as trainer

        seen = []
        real = trainer._inject
        monkeypatch.setattr(trainer, "_inject", lambda *a: seen.append(1) or real(*a))
        fit(sines(), tiny_config(epochs=3, po_refresh=refresh))
        assert len(seen) == calls

    def test_loss_decreases_on_separable_data(self):
        rng = np.random.default_rng(0)
        flat = Dataset(tuple(TimeSeries(f"f{i}", rng.normal(0, 0.05, 200)) for i in range(4)))
        decreasing = 0
        for seed in range(10):
            cfg = tiny_config(
                epochs=5, batches_per_epoch=20, seed=seed, learning_rate=1e-3,
                encoder=EncoderConfig(1, 3, 3, 16, 8), series_per_batch=4, crops_per_series=64,
                augment=AugmentConfig(po_count_per_series=20, po_magnitude_range=(4.0, 6.0)),
            )
            _, report = fit(flat, cfg)
            losses = report.epoch_losses
            decreasing += all(b < a for a, b in zip(losses, losses[1:]))
        assert decreasing >= 9
