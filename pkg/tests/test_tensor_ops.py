"""Forward semantics of the tensor engine ops."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornet import tensor as T


def tensor(arr, grad=False):
    return T.TensorND(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def conv_spec(w, b=None, **kw):
    w = np.asarray(w, dtype=np.float64)
    co, ci, kh, kw_ = w.shape
    bias = np.zeros(co) if b is None else np.asarray(b, dtype=np.float64)
    return T.ConvSpec(ci, co, (kh, kw_), weights=tensor(w, True), bias=tensor(bias, True), **kw)


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = tensor(rng.normal(size=(2, 1, 5, 7)))
        spec = conv_spec(np.ones((1, 1, 1, 1)))
        out = T.conv2d(x, spec)
        np.testing.assert_array_equal(out.values, x.values)

    def test_all_ones_3x3(self):
        x = tensor(np.ones((1, 1, 3, 3)))
        spec = conv_spec(np.ones((1, 1, 3, 3)), padding=(1, 1))
        out = T.conv2d(x, spec).values[0, 0]
        np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_dilation_receptive_field(self):
        x = np.zeros((1, 1, 1, 5))
        x[0, 0, 0, 2] = 1.0
        spec = conv_spec(np.ones((1, 1, 1, 3)), dilation=(1, 2), padding=(0, 2))
        out = T.conv2d(tensor(x), spec).values[0, 0, 0]
        np.testing.assert_array_equal(out, [1, 0, 1, 0, 1])

    def test_channel_mismatch_rejected(self):
        x = tensor(np.ones((1, 2, 4, 4)))
        spec = conv_spec(np.ones((1, 3, 3, 3)))
        with pytest.raises(T.ShapeError, match="channels"):
            T.conv2d(x, spec)

    def test_too_small_input_rejected(self):
        x = tensor(np.ones((1, 1, 2, 2)))
        spec = conv_spec(np.ones((1, 1, 3, 3)))
        with pytest.raises(T.ShapeError):
            T.conv2d(x, spec)

    def test_linearity_with_zero_bias(self, rng):
        spec = conv_spec(rng.normal(size=(3, 2, 3, 3)), padding=(1, 1))
        x1 = rng.normal(size=(1, 2, 6, 6))
        x2 = rng.normal(size=(1, 2, 6, 6))
        a, b = 1.7, -0.4
        lhs = T.conv2d(tensor(a * x1 + b * x2), spec).values
        rhs = a * T.conv2d(tensor(x1), spec).values + b * T.conv2d(tensor(x2), spec).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_output_size_formula(self, rng):
        x = tensor(rng.normal(size=(1, 1, 11, 13)))
        spec = conv_spec(rng.normal(size=(2, 1, 3, 3)), stride=(2, 2), padding=(1, 1))
        out = T.conv2d(x, spec)
        assert out.shape == (1, 2, 6, 7)


class TestDownsample:
    def test_constant_field_max(self):
        x = tensor(np.full((1, 2, 4, 6), 3.5))
        out = T.downsample(x, "max_pool2")
        assert out.shape == (1, 2, 2, 3)
        np.testing.assert_array_equal(out.values, np.full((1, 2, 2, 3), 3.5))

    def test_single_window_values(self):
        x = tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        assert T.downsample(x, "max_pool2").values.item() == 4.0
        assert T.downsample(x, "avg_pool2").values.item() == 2.5

    def test_odd_dims_rejected(self):
        x = tensor(np.ones((1, 1, 3, 4)))
        with pytest.raises(T.ShapeError, match="even"):
            T.downsample(x, "max_pool2")

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="unknown"):
            T.downsample(tensor(np.ones((1, 1, 2, 2))), "nope")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_max_dominates_avg(self, seed):
        x = np.random.default_rng(seed).normal(size=(1, 2, 4, 6))
        mx = T.downsample(tensor(x), "max_pool2").values
        av = T.downsample(tensor(x), "avg_pool2").values
        assert np.all(mx >= av)

    def test_strided_conv_halves(self, rng):
        spec = conv_spec(rng.normal(size=(2, 2, 3, 3)), stride=(2, 2), padding=(1, 1))
        out = T.downsample(tensor(rng.normal(size=(1, 2, 8, 12))), "strided_conv2", spec)
        assert out.shape == (1, 2, 4, 6)


class TestUpsample:
    def test_nearest_replication(self):
        x = tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = T.upsample(x, "nearest").values[0, 0]
        np.testing.assert_array_equal(
            out, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
        )

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_nearest_then_maxpool_is_identity(self, seed):
        x = np.random.default_rng(seed).normal(size=(1, 3, 4, 5))
        back = T.max_pool2(T.upsample(tensor(x), "nearest")).values
        np.testing.assert_array_equal(back, x)

    def test_bilinear_ramp_interior_exact(self):
        ramp = np.arange(8.0).reshape(1, 1, 1, 8).repeat(4, axis=2)
        out = T.upsample(tensor(ramp), "bilinear").values[0, 0, 0]
        expected = np.arange(16) / 2.0 - 0.25
        np.testing.assert_allclose(out[1:-1], expected[1:-1], atol=1e-12)

    def test_unpool_requires_switches(self):
        x = tensor(np.ones((1, 1, 2, 2)))
        with pytest.raises(ValueError, match="switch"):
            T.upsample(x, "unpool")

    def test_unpool_places_at_recorded_argmax(self, rng):
        src = tensor(rng.normal(size=(1, 1, 4, 4)))
        pooled = T.max_pool2(src)
        restored = T.unpool2(pooled, pooled.pool_switches)
        # exactly one nonzero per window, and window sums recover the maxima
        windows = restored.values.reshape(1, 1, 2, 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        np.testing.assert_allclose(windows.sum(axis=(4, 5)), pooled.values)
        assert np.count_nonzero(restored.values) == pooled.size
        # unpooled maxima sit where the source had them
        np.testing.assert_array_equal(restored.values != 0, src.values == np.repeat(np.repeat(pooled.values, 2, 2), 2, 3))

    def test_frac_strided_doubles(self, rng):
        spec = T.ConvSpec.he_init(3, 2, (4, 4), stride=(2, 2), padding=(1, 1), rng=rng)
        out = T.upsample(tensor(rng.normal(size=(1, 3, 5, 6))), "frac_strided_conv", conv_spec=spec)
        assert out.shape == (1, 2, 10, 12)


class TestBatchNorm:
    def test_standardized_input_passthrough(self, rng):
        x = rng.normal(size=(4, 2, 8, 8))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        stats = T.BatchNormStats.create(2)
        out = T.batch_norm(tensor(x), tensor(np.ones(2)), tensor(np.zeros(2)), "train", stats)
        np.testing.assert_allclose(out.values, x, atol=1e-4)

    def test_zero_gamma_gives_beta(self, rng):
        x = tensor(rng.normal(size=(2, 3, 4, 4)))
        beta = np.array([1.0, -2.0, 0.5])
        out = T.batch_norm(x, tensor(np.zeros(3)), tensor(beta), "train", T.BatchNormStats.create(3))
        np.testing.assert_allclose(out.values, np.broadcast_to(beta.reshape(1, 3, 1, 1), out.shape))

    def test_constant_channel_gives_beta(self):
        x = tensor(np.full((2, 1, 4, 4), 7.0))
        out = T.batch_norm(x, tensor(np.ones(1)), tensor(np.array([0.25])), "train", T.BatchNormStats.create(1))
        np.testing.assert_allclose(out.values, 0.25, atol=1e-12)

    def test_eval_uses_running_stats(self, rng):
        stats = T.BatchNormStats.create(1)
        stats.running_mean[:] = 2.0
        stats.running_var[:] = 4.0
        x = tensor(np.full((1, 1, 2, 2), 6.0))
        out = T.batch_norm(x, tensor(np.ones(1)), tensor(np.zeros(1)), "eval", stats)
        np.testing.assert_allclose(out.values, (6.0 - 2.0) / np.sqrt(4.0 + stats.eps))

    def test_train_updates_running_stats(self, rng):
        stats = T.BatchNormStats.create(1)
        x = tensor(rng.normal(loc=5.0, size=(2, 1, 8, 8)))
        T.batch_norm(x, tensor(np.ones(1)), tensor(np.zeros(1)), "train", stats)
        expected = 0.9 * 0.0 + 0.1 * x.values.mean()
        np.testing.assert_allclose(stats.running_mean, expected)


class TestJoinsAndActivations:
    def test_concat_channel_layout(self, rng):
        a = tensor(rng.normal(size=(1, 3, 4, 4)))
        b = tensor(rng.normal(size=(1, 5, 4, 4)))
        out = T.concat_channels([a, b])
        assert out.shape == (1, 8, 4, 4)
        np.testing.assert_array_equal(out.values[:, :3], a.values)

    def test_concat_single_input_identity(self, rng):
        a = tensor(rng.normal(size=(1, 2, 3, 3)))
        np.testing.assert_array_equal(T.concat_channels([a]).values, a.values)

    def test_concat_spatial_mismatch(self, rng):
        a = tensor(rng.normal(size=(1, 2, 3, 3)))
        b = tensor(rng.normal(size=(1, 2, 4, 3)))
        with pytest.raises(T.ShapeError):
            T.concat_channels([a, b])

    def test_concat_backward_partitions_gradient(self, rng):
        parts = [tensor(rng.normal(size=(1, c, 2, 2)), grad=True) for c in (1, 2, 3)]
        T.tensor_sum(T.concat_channels(parts)).backward()
        for p in parts:
            np.testing.assert_array_equal(p.grad, np.ones(p.shape))

    def test_residual_add_zeros(self, rng):
        x = tensor(rng.normal(size=(1, 2, 3, 3)))
        out = T.residual_add(x, tensor(np.zeros((1, 2, 3, 3))))
        np.testing.assert_array_equal(out.values, x.values)

    def test_residual_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.residual_add(tensor(np.ones((1, 1, 2, 2))), tensor(np.ones((1, 2, 2, 2))))

    def test_relu_values_and_grads(self):
        x = tensor([[[[-1.0, 2.0], [3.0, -3.0]]]], grad=True)
        out = T.relu(x)
        np.testing.assert_array_equal(out.values[0, 0], [[0, 2], [3, 0]])
        T.tensor_sum(out).backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[0, 1], [1, 0]])

    def test_softmax_rows_sum_to_one(self, rng):
        x = tensor(rng.normal(size=(2, 4, 3, 3)))
        p = T.softmax_channels(x)
        np.testing.assert_allclose(p.values.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_finite_on_extreme_inputs(self):
        x = tensor(np.array([1000.0, -1000.0, 0.0, 500.0]).reshape(1, 4, 1, 1))
        p = T.softmax_channels(x)
        assert np.all(np.isfinite(p.values))


class TestMseAndBackward:
    def test_zero_when_equal(self, rng):
        x = rng.normal(size=(2, 3, 2, 2))
        assert T.mse_loss(tensor(x), tensor(x)).item() == 0.0

    def test_single_element(self):
        assert T.mse_loss(tensor([0.0]), tensor([1.0])).item() == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.mse_loss(tensor([1.0, 2.0]), tensor([1.0]))

    def test_sum_gradient_is_ones(self, rng):
        x = tensor(rng.normal(size=(3, 2, 4, 5)), grad=True)
        T.tensor_sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones(x.shape))

    def test_disconnected_parameter_zero_grad(self, rng):
        x = tensor(rng.normal(size=(1, 1, 2, 2)), grad=True)
        other = tensor(rng.normal(size=(1, 1, 2, 2)), grad=True)
        T.tensor_sum(x).backward()
        np.testing.assert_array_equal(other.grad, np.zeros(other.shape))

    def test_backward_requires_scalar(self, rng):
        x = tensor(rng.normal(size=(1, 1, 2, 2)), grad=True)
        with pytest.raises(T.ShapeError, match="scalar"):
            T.relu(x).backward()

    def test_repeated_backward_accumulates(self, rng):
        x = tensor(rng.normal(size=(2, 2)), grad=True)
        loss = T.tensor_sum(x)
        loss.backward()
        loss.backward()
        np.testing.assert_array_equal(x.grad, 2 * np.ones((2, 2)))

    def test_forward_backward_deterministic(self, rng):
        runs = []
        for _ in range(2):
            x = tensor(np.linspace(-1, 1, 36).reshape(1, 1, 6, 6), grad=True)
            spec = conv_spec(np.linspace(-0.5, 0.5, 18).reshape(2, 1, 3, 3), padding=(1, 1))
            loss = T.mse_loss(T.conv2d(x, spec), tensor(np.zeros((1, 2, 6, 6))))
            loss.backward()
            runs.append((loss.item(), x.grad.copy(), spec.weights.grad.copy()))
        assert runs[0][0] == runs[1][0]
        np.testing.assert_array_equal(runs[0][1], runs[1][1])
        np.testing.assert_array_equal(runs[0][2], runs[1][2])

    def test_no_grad_suppresses_graph(self, rng):
        x = tensor(rng.normal(size=(1, 1, 4, 4)), grad=True)
        with T.no_grad():
            out = T.relu(x)
        assert out._parents == () and not out.requires_grad


class TestAdam:
    def test_zero_grad_no_change(self, rng):
        p = tensor(rng.normal(size=(3, 3)), grad=True)
        before = p.values.copy()
        state = T.AdamState.create([p], learning_rate=0.1)
        T.adam_step([p], state)
        np.testing.assert_array_equal(p.values, before)
        assert state.step == 1

    def test_first_step_magnitude_is_lr(self):
        p = tensor(np.array([1.0, -2.0]), grad=True)
        p.grad[:] = [0.3, -40.0]
        state = T.AdamState.create([p], learning_rate=1e-2)
        before = p.values.copy()
        T.adam_step([p], state)
        update = before - p.values
        np.testing.assert_allclose(np.abs(update), 1e-2, rtol=1e-6)
        assert np.sign(update[0]) == 1 and np.sign(update[1]) == -1

    def test_two_steps_match_scalar_reference(self):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        grads = [0.7, -1.3]
        p = tensor(np.array([0.5]), grad=True)
        state = T.AdamState.create([p], learning_rate=lr)
        # independent scalar implementation
        m = v = 0.0
        ref = 0.5
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ref -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            p.grad[:] = g
            T.adam_step([p], state)
            np.testing.assert_allclose(p.values[0], ref, atol=1e-12)

    def test_missing_grad_rejected(self):
        p = T.TensorND(np.zeros(2), requires_grad=False)
        state = T.AdamState.create([p], learning_rate=1e-3)
        with pytest.raises(ValueError, match="grad"):
            T.adam_step([p], state)

    def test_second_moment_nonnegative(self, rng):
        p = tensor(rng.normal(size=(4,)), grad=True)
        state = T.AdamState.create([p])
        for _ in range(3):
            p.grad[:] = rng.normal(size=4)
            T.adam_step([p], state)
        assert np.all(state.v[0] >= 0)
