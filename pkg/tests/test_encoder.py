import numpy as np
import pytest

from ctxad.encoder import EncoderConfig, TCNEncoder, blocks_for_length, encode, init_parameters, receptive_field
from ctxad.nn.tensor import Tensor


@pytest.fixture
def small():
    cfg = EncoderConfig(input_channels=2, num_blocks=3, kernel_size=3, hidden_channels=8, embedding_dim=6)
    return cfg, init_parameters(cfg, np.random.default_rng(0))


class TestReceptiveField:
    def test_one_block(self):
        assert receptive_field(num_blocks=1, kernel_size=2) == 3

    def test_four_blocks(self):
        assert receptive_field(num_blocks=4, kernel_size=3) == 61

    def test_pointwise(self):
        assert receptive_field(num_blocks=5, kernel_size=1) == 1

    def test_blocks_for_length(self):
        assert blocks_for_length(61, 3) == 4
        assert blocks_for_length(62, 3) == 5

    def test_empirical_receptive_field(self, small):
        cfg, params = small
        rf = receptive_field(cfg)
        enc = TCNEncoder(cfg, params)
        x = np.random.default_rng(1).normal(size=(1, rf + 10, 2))
        base = enc.features(Tensor(x)).data[0, -1]
        far = x.copy()
        far[0, -rf - 1] += 10.0
        near = x.copy()
        near[0, -rf] += 10.0
        np.testing.assert_array_equal(enc.features(Tensor(far)).data[0, -1], base)
        assert not np.allclose(enc.features(Tensor(near)).data[0, -1], base)

    def test_warns_when_too_small(self):
        with pytest.warns(RuntimeWarning):
            EncoderConfig(num_blocks=1).check_window(100)


class TestInit:
    def test_deterministic(self):
        cfg = EncoderConfig()
        a = init_parameters(cfg, np.random.default_rng(5))
        b = init_parameters(cfg, np.random.default_rng(5))
        assert a.keys() == b.keys()
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_biases_zero_and_weights_bounded(self, small):
        cfg, params = small
        for name, p in params.items():
            if name.endswith("bias"):
                assert not p.data.any()
        w = params["block1.conv1.weight"].data
        assert np.abs(w).max() <= 1 / np.sqrt(3 * 8)

    def test_skip_only_when_channels_change(self, small):
        _, params = small
        assert "block0.skip.weight" in params
        assert "block1.skip.weight" not in params

    @pytest.mark.parametrize("field", ["input_channels", "num_blocks", "hidden_channels", "embedding_dim", "kernel_size"])
    def test_zero_size_rejected(self, field):
        with pytest.raises(ValueError):
            EncoderConfig(**{field: 0})


class TestEncode:
    def test_deterministic_and_unit_norm(self, small):
        cfg, params = small
        x = np.random.default_rng(2).normal(size=(40, 2))
        a, b = encode(x, params, cfg), encode(x, params, cfg)
        np.testing.assert_array_equal(a, b)
        assert abs(np.linalg.norm(a) - 1) < 1e-6

    def test_accepts_context_and_full_lengths(self, small):
        cfg, params = small
        x = np.random.default_rng(3).normal(size=(36, 2))
        assert encode(x[:32], params, cfg).shape == (6,)
        assert encode(x, params, cfg).shape == (6,)
        assert encode(x[:1], params, cfg).shape == (6,)

    def test_channel_mismatch(self, small):
        cfg, params = small
        with pytest.raises(ValueError):
            encode(np.zeros((10, 3)), params, cfg)

    def test_suspect_sensitivity(self, small):
        cfg, params = small
        x = np.random.default_rng(4).normal(size=(30, 2))
        y = x.copy()
        y[-3:] = np.random.default_rng(5).normal(size=(3, 2)) * 5
        assert not np.allclose(encode(x, params, cfg), encode(y, params, cfg))

    def test_feature_causality(self, small):
        cfg, params = small
        enc = TCNEncoder(cfg, params)
        x = np.random.default_rng(6).normal(size=(1, 30, 2))
        y = x.copy()
        y[0, 17:] += 3.0
        np.testing.assert_array_equal(enc.features(Tensor(x)).data[:, :17], enc.features(Tensor(y)).data[:, :17])

    def test_batch_permutation(self, small):
        cfg, params = small
        enc = TCNEncoder(cfg, params)
        x = np.random.default_rng(7).normal(size=(5, 20, 2))
        perm = np.array([3, 0, 4, 1, 2])
        np.testing.assert_allclose(enc(Tensor(x)).data[perm], enc(Tensor(x[perm])).data, atol=1e-12)

    def test_embed_pair_matches_two_passes(self, small):
        cfg, params = small
        enc = TCNEncoder(cfg, params)
        x = np.random.default_rng(8).normal(size=(4, 24, 2))
        z, zc = enc.embed_pair(Tensor(x), 20)
        np.testing.assert_allclose(z.data, enc(Tensor(x)).data, atol=1e-12)
        np.testing.assert_allclose(zc.data, enc(Tensor(x[:, :20])).data, atol=1e-12)
