"""Finite-difference gradient verification and kernel cross-checks."""

import numpy as np
import pytest

from cornet import _kernels, gradcheck
from cornet import tensor as T


def test_suite_spot_check_all_ops():
    reports = gradcheck.run_suite(cases_per_op=5)
    assert {r.name for r in reports} == set(gradcheck.OP_CASES)
    for r in reports:
        assert r.passed, f"{r.name} max rel err {r.max_rel_err:.3e}"


def test_mse_gradient_matches_finite_differences(rng):
    pred = T.TensorND(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    target = T.TensorND(rng.normal(size=(2, 3, 4, 4)))
    err = gradcheck.check_gradients(lambda: T.mse_loss(pred, target), [pred])
    assert err < 1e-6
    # closed form: 2 (pred - target) / N
    np.testing.assert_allclose(pred.grad, 2 * (pred.values - target.values) / pred.size, atol=1e-12)


def test_conv_weight_gradient_through_mse(rng):
    x = T.TensorND(rng.normal(size=(1, 2, 6, 6)))
    spec = T.ConvSpec.he_init(2, 3, (3, 3), padding=(1, 1), rng=rng)
    target = T.TensorND(rng.normal(size=(1, 3, 6, 6)))
    err = gradcheck.check_gradients(
        lambda: T.mse_loss(T.conv2d(x, spec), target), [spec.weights, spec.bias]
    )
    assert err < 1e-4


def test_injected_sign_bug_is_caught(monkeypatch):
    orig = _kernels.conv2d_bwd_weights
    monkeypatch.setattr(_kernels, "conv2d_bwd_weights", lambda *a: -orig(*a))
    reports = gradcheck.run_suite(cases_per_op=2, ops=["conv2d"])
    assert len(reports) == 1 and not reports[0].passed


def test_jit_kernels_match_numpy_reference(rng):
    for _ in range(40):
        kh, kw = int(rng.choice([1, 3, 4])), int(rng.choice([1, 3, 4]))
        sh, sw = int(rng.choice([1, 2])), int(rng.choice([1, 2]))
        dh = int(rng.choice([1, 2])) if kh > 1 else 1
        dw = int(rng.choice([1, 2])) if kw > 1 else 1
        ci, co = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        h, w = int(rng.integers(6, 12)), int(rng.integers(6, 12))
        ekh, ekw = (kh - 1) * dh + 1, (kw - 1) * dw + 1
        oh, ow = (h - ekh) // sh + 1, (w - ekw) // sw + 1
        if oh < 1 or ow < 1:
            continue
        xp = rng.normal(size=(2, ci, h, w))
        wt = rng.normal(size=(co, ci, kh, kw))
        bias = rng.normal(size=co)
        g = rng.normal(size=(2, co, oh, ow))
        np.testing.assert_allclose(
            _kernels.conv2d_fwd(xp, wt, bias, sh, sw, dh, dw, oh, ow),
            _kernels._conv2d_fwd_np(xp, wt, bias, sh, sw, dh, dw, oh, ow),
            atol=1e-10,
        )
        np.testing.assert_allclose(
            _kernels.conv2d_bwd_data(g, wt, h, w, sh, sw, dh, dw),
            _kernels._conv2d_bwd_data_scatter_np(g, wt, h, w, sh, sw, dh, dw),
            atol=1e-10,
        )
        np.testing.assert_allclose(
            _kernels.conv2d_bwd_weights(xp, g, kh, kw, sh, sw, dh, dw),
            _kernels._conv2d_bwd_weights_np(xp, g, kh, kw, sh, sw, dh, dw),
            atol=1e-8,
        )


def test_full_block_chain_gradient(rng):
    """conv -> bn -> relu -> pool -> upsample -> mse survives an FD check."""
    x = T.TensorND(rng.normal(size=(1, 1, 8, 8)))
    spec = T.ConvSpec.he_init(1, 2, (3, 3), padding=(1, 1), rng=rng)
    gamma = T.TensorND(np.ones(2), requires_grad=True)
    beta = T.TensorND(np.zeros(2), requires_grad=True)
    stats = T.BatchNormStats.create(2)
    target = T.TensorND(rng.normal(size=(1, 2, 8, 8)))

    def loss():
        h = T.conv2d(x, spec)
        h = T.batch_norm(h, gamma, beta, "train", stats)
        h = T.relu(h)
        h = T.max_pool2(h)
        h = T.upsample_nearest2(h)
        return T.mse_loss(h, target)

    err = gradcheck.check_gradients(loss, [spec.weights, spec.bias, gamma, beta])
    assert err < 1e-4
