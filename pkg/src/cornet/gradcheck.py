"""Finite-difference verification of every differentiable op.

Each case builds a small random graph, runs backward, then compares the
analytic gradients against central finite differences (h=1e-5, float64).
Case seeds are fixed, so the suite is deterministic across runs.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T


def _weighted_sum(x, w):
    # fixed-weight projection to a scalar; keeps FD losses sensitive to sign
    out = np.asarray((x.values * w).sum(), dtype=x.dtype)

    def bwd(g):
        return (g * w,)

    return T._make(out, (x,), bwd, "weighted_sum")


def numeric_gradient(make_loss, param: T.TensorND, h=1e-5):
    """Central finite differences of make_loss() w.r.t. every element of param."""
    flat = param.values.reshape(-1)
    num = np.empty_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = make_loss().item()
        flat[k] = orig - h
        fm = make_loss().item()
        flat[k] = orig
        num[k] = (fp - fm) / (2.0 * h)
    return num.reshape(param.shape)


def check_gradients(make_loss, params, h=1e-5):
    """Max relative FD error across params. Denominator floors at 1."""
    for p in params:
        p.zero_grad()
    loss = make_loss()
    loss.backward()
    worst = 0.0
    for p in params:
        num = numeric_gradient(make_loss, p, h)
        ana = p.grad
        denom = np.maximum(1.0, np.maximum(np.abs(num), np.abs(ana)))
        worst = max(worst, float((np.abs(ana - num) / denom).max()))
    return worst


@dataclass
class OpReport:
    name: str
    max_rel_err: float
    cases: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def _param(rng, shape, scale=1.0):
    return T.TensorND(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _case_conv2d(rng):
    kh = int(rng.choice([1, 3]))
    kw = int(rng.choice([1, 3]))
    sh, sw = (int(rng.choice([1, 2])) for _ in range(2))
    dh = int(rng.choice([1, 2])) if kh > 1 else 1
    dw = int(rng.choice([1, 2])) if kw > 1 else 1
    ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    ph, pw = (kh - 1) * dh // 2, (kw - 1) * dw // 2
    h = int(rng.integers(5, 9))
    w = int(rng.integers(5, 9))
    x = _param(rng, (1, ci, h, w))
    spec = T.ConvSpec(ci, co, (kh, kw), (sh, sw), (dh, dw), (ph, pw),
                      weights=_param(rng, (co, ci, kh, kw), 0.5),
                      bias=_param(rng, (co,), 0.5))
    out0 = T.conv2d(x, spec)
    wsum = rng.normal(size=out0.shape)
    return lambda: _weighted_sum(T.conv2d(x, spec), wsum), [x, spec.weights, spec.bias]


def _case_conv_transpose(rng):
    ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h = int(rng.integers(3, 6))
    w = int(rng.integers(3, 6))
    x = _param(rng, (1, ci, h, w))
    spec = T.ConvSpec(ci, co, (4, 4), (2, 2), (1, 1), (1, 1),
                      weights=_param(rng, (co, ci, 4, 4), 0.5),
                      bias=_param(rng, (co,), 0.5))
    out0 = T.conv_transpose2d(x, spec)
    wsum = rng.normal(size=out0.shape)
    return lambda: _weighted_sum(T.conv_transpose2d(x, spec), wsum), [x, spec.weights, spec.bias]


def _case_max_pool(rng):
    x = _param(rng, (1, int(rng.integers(1, 3)), 6, 8))
    wsum = rng.normal(size=(1, x.shape[1], 3, 4))
    return lambda: _weighted_sum(T.max_pool2(x), wsum), [x]


def _case_avg_pool(rng):
    x = _param(rng, (1, int(rng.integers(1, 3)), 6, 8))
    wsum = rng.normal(size=(1, x.shape[1], 3, 4))
    return lambda: _weighted_sum(T.avg_pool2(x), wsum), [x]


def _case_nearest(rng):
    x = _param(rng, (1, 2, 4, 5))
    wsum = rng.normal(size=(1, 2, 8, 10))
    return lambda: _weighted_sum(T.upsample_nearest2(x), wsum), [x]


def _case_bilinear(rng):
    x = _param(rng, (1, 2, 4, 5))
    wsum = rng.normal(size=(1, 2, 8, 10))
    return lambda: _weighted_sum(T.upsample_bilinear2(x), wsum), [x]


def _case_unpool(rng):
    src = T.TensorND(rng.normal(size=(1, 2, 6, 8)))
    switches = T.max_pool2(src).pool_switches
    x = _param(rng, (1, 2, 3, 4))
    wsum = rng.normal(size=(1, 2, 6, 8))
    return lambda: _weighted_sum(T.unpool2(x, switches), wsum), [x]


def _case_bn_train(rng):
    c = int(rng.integers(1, 4))
    x = _param(rng, (2, c, 4, 5))
    gamma = T.TensorND(rng.normal(1.0, 0.2, size=c), requires_grad=True)
    beta = _param(rng, (c,), 0.5)
    stats = T.BatchNormStats.create(c)
    wsum = rng.normal(size=x.shape)
    return lambda: _weighted_sum(T.batch_norm(x, gamma, beta, "train", stats), wsum), [x, gamma, beta]


def _case_bn_eval(rng):
    c = int(rng.integers(1, 4))
    x = _param(rng, (2, c, 4, 5))
    gamma = T.TensorND(rng.normal(1.0, 0.2, size=c), requires_grad=True)
    beta = _param(rng, (c,), 0.5)
    stats = T.BatchNormStats.create(c)
    stats.running_mean[:] = rng.normal(size=c)
    stats.running_var[:] = 0.5 + rng.random(c)
    wsum = rng.normal(size=x.shape)
    return lambda: _weighted_sum(T.batch_norm(x, gamma, beta, "eval", stats), wsum), [x, gamma, beta]


def _case_concat(rng):
    parts = [_param(rng, (1, int(rng.integers(1, 4)), 3, 4)) for _ in range(3)]
    ctot = sum(p.shape[1] for p in parts)
    wsum = rng.normal(size=(1, ctot, 3, 4))
    return lambda: _weighted_sum(T.concat_channels(parts), wsum), parts


def _case_residual(rng):
    x = _param(rng, (1, 2, 3, 4))
    y = _param(rng, (1, 2, 3, 4))
    wsum = rng.normal(size=x.shape)
    return lambda: _weighted_sum(T.residual_add(x, y), wsum), [x, y]


def _case_relu(rng):
    x = _param(rng, (1, 2, 4, 5))
    wsum = rng.normal(size=x.shape)
    return lambda: _weighted_sum(T.relu(x), wsum), [x]


def _case_softmax(rng):
    x = _param(rng, (1, 4, 3, 4))
    wsum = rng.normal(size=x.shape)
    return lambda: _weighted_sum(T.softmax_channels(x), wsum), [x]


def _case_mse(rng):
    x = _param(rng, (2, 3, 4, 2))
    t = T.TensorND(rng.normal(size=(2, 3, 4, 2)))
    return lambda: T.mse_loss(x, t), [x]


OP_CASES = {
    "conv2d": _case_conv2d,
    "conv_transpose2d": _case_conv_transpose,
    "max_pool2": _case_max_pool,
    "avg_pool2": _case_avg_pool,
    "upsample_nearest": _case_nearest,
    "upsample_bilinear": _case_bilinear,
    "unpool": _case_unpool,
    "batch_norm_train": _case_bn_train,
    "batch_norm_eval": _case_bn_eval,
    "concat_channels": _case_concat,
    "residual_add": _case_residual,
    "relu": _case_relu,
    "softmax_channels": _case_softmax,
    "mse_loss": _case_mse,
}


def run_suite(cases_per_op=100, tol=1e-4, h=1e-5, ops=None, base_seed=20240):
    """Run FD checks for every op; returns a list of OpReport."""
    reports = []
    names = ops if ops is not None else list(OP_CASES)
    for name in names:
        factory = OP_CASES[name]
        tag = zlib.crc32(name.encode()) % 100003
        worst = 0.0
        for k in range(cases_per_op):
            rng = np.random.default_rng(base_seed + 977 * k + tag)
            make_loss, params = factory(rng)
            worst = max(worst, check_gradients(make_loss, params, h))
        reports.append(OpReport(name, worst, cases_per_op, tol))
    return reports
