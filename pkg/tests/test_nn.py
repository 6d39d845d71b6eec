import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxad.nn import tensor as T
from ctxad.nn.optim import OptimizerState, clip_grad_norm, optimizer_step
from ctxad.nn.params import load_checkpoint, save_checkpoint, uniform_fan_in
from ctxad.nn.tensor import GraphConsumedError, NonFiniteError, Tensor


def numeric_grad(fn, arr, h=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        plus = fn()
        arr[idx] = orig - h
        minus = fn()
        arr[idx] = orig
        out[idx] = (plus - minus) / (2 * h)
    return out


def check_grad(build, *arrays, tol=1e-6):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    build(*leaves).backward()
    for leaf in leaves:
        num = numeric_grad(lambda: float(build(*leaves).data), leaf.data)
        np.testing.assert_allclose(leaf.grad, num, rtol=tol, atol=tol)


rng = np.random.default_rng(1234)


class TestForward:
    def test_identity_kernel_conv(self):
        x = rng.normal(size=(2, 7, 1))
        w = np.ones((1, 1, 1))
        out = T.conv1d_causal(Tensor(x), Tensor(w), dilation=4)
        np.testing.assert_array_equal(out.data, x)

    def test_conv_matches_direct_loop(self):
        x = rng.normal(size=(2, 9, 3))
        w = rng.normal(size=(3, 3, 2))
        b = rng.normal(size=2)
        d = 2
        out = T.conv1d_causal(Tensor(x), Tensor(w), Tensor(b), dilation=d).data
        expected = np.zeros((2, 9, 2))
        for t in range(9):
            expected[:, t] = b
            for j in range(3):
                src = t - (3 - 1 - j) * d
                if src >= 0:
                    expected[:, t] += x[:, src] @ w[j]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_conv_is_causal(self):
        x = rng.normal(size=(1, 20, 2))
        w = Tensor(rng.normal(size=(3, 2, 4)))
        base = T.conv1d_causal(Tensor(x), w, dilation=3).data
        x2 = x.copy()
        x2[0, 11] += 5.0
        moved = T.conv1d_causal(Tensor(x2), w, dilation=3).data
        np.testing.assert_array_equal(base[:, :11], moved[:, :11])
        assert not np.allclose(base[:, 11], moved[:, 11])

    def test_l2_normalize(self):
        np.testing.assert_allclose(T.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8], atol=1e-12)

    def test_l2_normalize_zero_vector_is_finite(self):
        out = T.l2_normalize(Tensor(np.zeros(4)))
        assert np.isfinite(out.data).all()

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12).filter(lambda v: np.linalg.norm(v) > 1e-3))
    def test_l2_normalize_unit_norm(self, values):
        assert abs(np.linalg.norm(T.l2_normalize(Tensor(values)).data) - 1.0) < 1e-6

    def test_max_pool(self):
        out = T.max_pool_time(Tensor(np.array([1.0, 5.0, 2.0]).reshape(1, 3, 1)))
        np.testing.assert_array_equal(out.data, [[5.0]])

    def test_max_pool_prefix(self):
        x = np.array([1.0, 5.0, 2.0, 9.0]).reshape(1, 4, 1)
        assert T.max_pool_time(Tensor(x), 3).data[0, 0] == 5.0

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            T.conv1d_causal(Tensor(np.zeros((1, 4, 2))), Tensor(np.zeros((3, 3, 1))))
        with pytest.raises(ValueError):
            T.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 1))))

    def test_nan_trips_diagnostic(self):
        with pytest.raises(NonFiniteError, match="log"):
            T.log(Tensor([-1.0]))

    def test_finite_checks_can_be_disabled(self):
        with T.finite_checks(False):
            out = T.log(Tensor([0.0]))
        assert np.isneginf(out.data).all()


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        T.sum(x).backward()
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_square_gradient(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        T.sum(T.square(x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_second_backward_requires_retain(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = T.sum(T.square(x))
        loss.backward()
        with pytest.raises(GraphConsumedError):
            loss.backward()

    def test_retain_graph_accumulates(self):
        x = Tensor(np.ones(2), requires_grad=True)
        loss = T.sum(T.square(x))
        loss.backward(retain_graph=True)
        loss.backward()
        np.testing.assert_array_equal(x.grad, [4.0, 4.0])

    def test_shared_subexpression(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * x
        T.sum(y + y).backward()
        np.testing.assert_allclose(x.grad, [12.0])

    @pytest.mark.parametrize("dilation", [1, 2, 3])
    def test_conv_grad(self, dilation):
        x = rng.normal(size=(2, 8, 3))
        w = rng.normal(size=(3, 3, 2))
        b = rng.normal(size=2)
        check_grad(lambda x, w, b: T.sum(T.square(T.conv1d_causal(x, w, b, dilation))), x, w, b)

    def test_linear_grad(self):
        check_grad(lambda x, w, b: T.sum(T.square(T.linear(x, w, b))), rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2))

    def test_pool_normalize_grad(self):
        check_grad(lambda x: T.sum(T.l2_normalize(T.max_pool_time(x)) * np.arange(1.0, 4.0)), rng.normal(size=(2, 5, 3)))

    def test_leaky_relu_grad(self):
        x = rng.normal(size=(3, 4))
        x[np.abs(x) < 1e-3] = 0.5
        check_grad(lambda x: T.sum(T.square(T.leaky_relu(x, 0.1))), x)

    def test_elementwise_grads(self):
        x = rng.uniform(0.5, 2.0, size=5)
        check_grad(lambda x: T.sum(T.log(x) + T.exp(-x) + T.sqrt(x) + T.log1mexp(x)), x)

    def test_division_and_broadcast_grad(self):
        check_grad(lambda a, b: T.sum(a / b), rng.uniform(1, 2, size=(3, 4)), rng.uniform(1, 2, size=(4,)))

    def test_mean_norm_grad(self):
        check_grad(lambda a: T.mean(T.norm(a, axis=-1)), rng.normal(size=(3, 4)))

    def test_getitem_grad(self):
        check_grad(lambda a: T.sum(T.square(a[:, 1:3])), rng.normal(size=(3, 4)))


class TestOptimizer:
    def _single(self, g, variant, steps=1, lr=1e-3):
        p = {"w": Tensor(np.array([0.5]), requires_grad=True)}
        state = OptimizerState.for_params(p, lr=lr)
        for _ in range(steps):
            optimizer_step(p, {"w": np.array([g])}, state, variant)
        return p["w"].data[0], state

    @pytest.mark.parametrize("variant", ["yogi", "adam"])
    def test_zero_gradient_leaves_params(self, variant):
        value, state = self._single(0.0, variant)
        assert value == 0.5
        assert state.step == 1

    def test_first_adam_step_is_lr(self):
        # m_hat = g, v_hat = g^2 at t=1, so the step is lr * g / (|g| + eps)
        value, _ = self._single(1.0, "adam")
        assert abs((0.5 - value) - 1e-3 * 1.0 / (1.0 + 1e-8)) < 1e-15

    def test_yogi_and_adam_agree_on_first_step(self):
        for g in (-3.0, 0.2, 7.0):
            assert self._single(g, "yogi")[0] == self._single(g, "adam")[0]

    def test_yogi_second_moment_rule(self):
        p = {"w": Tensor(np.zeros(1), requires_grad=True)}
        state = OptimizerState.for_params(p)
        state.v["w"][:] = 5.0
        optimizer_step(p, {"w": np.array([1.0])}, state, "yogi")
        # v - g^2 > 0, so v decreases additively by (1 - beta2) * g^2
        assert state.v["w"][0] == pytest.approx(5.0 - 0.001)

    def test_non_finite_gradient_aborts(self):
        p = {"w": Tensor(np.zeros(2), requires_grad=True)}
        state = OptimizerState.for_params(p)
        with pytest.raises(NonFiniteError):
            optimizer_step(p, {"w": np.array([np.nan, 0.0])}, state)
        assert state.step == 0
        np.testing.assert_array_equal(p["w"].data, 0.0)

    def test_adam_minimizes_quadratic(self):
        p = {"w": Tensor(np.array([3.0, -2.0]), requires_grad=True)}
        state = OptimizerState.for_params(p, lr=0.05)
        for _ in range(2000):
            optimizer_step(p, {"w": 2 * p["w"].data}, state, "yogi")
        assert np.abs(p["w"].data).max() < 1e-2

    def test_clip_grad_norm(self):
        grads = {"a": np.array([30.0, 40.0])}
        assert clip_grad_norm(grads, 10.0) == pytest.approx(50.0)
        assert np.linalg.norm(grads["a"]) == pytest.approx(10.0)


class TestParams:
    def test_fan_in_bound(self):
        draws = uniform_fan_in(np.random.default_rng(0), (10000,), 16)
        assert np.abs(draws).max() <= 0.25
        assert np.abs(draws).max() > 0.249

    def test_zero_size_rejected(self):
        with pytest.raises(ValueError):
            uniform_fan_in(np.random.default_rng(0), (0, 3), 3)

    def test_checkpoint_round_trip(self, tmp_path):
        params = {"a": Tensor(rng.normal(size=(2, 3))), "b": Tensor(rng.normal(size=4).astype(np.float32))}
        path = tmp_path / "ck.bin"
        save_checkpoint(path, params, {"note": "x"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"note": "x"}
        for k in params:
            np.testing.assert_array_equal(loaded[k].data, params[k].data)
            assert loaded[k].data.dtype == params[k].data.dtype

    def test_checkpoint_layout(self, tmp_path):
        path = tmp_path / "ck.bin"
        save_checkpoint(path, {"w": Tensor(np.array([1.0, 2.0]))})
        blob = path.read_bytes()
        assert blob[:8] == b"CTXADCKP"
        (n,) = struct.unpack("<Q", blob[8:16])
        import json

        header = json.loads(blob[16 : 16 + n])
        assert header["version"] == 1
        assert header["tensors"][0]["shape"] == [2]
        assert np.frombuffer(blob[16 + n :], dtype="<f8").tolist() == [1.0, 2.0]

    def test_checkpoint_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTACKPT" + b"\0" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)
