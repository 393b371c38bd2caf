"""Differentiable tensor engine.

Implements the small set of layer primitives the segmentation network needs
(convolution with stride/dilation, pooling, six upsampling variants, batch
normalization, channel concatenation, residual add, relu, channel softmax,
MSE) with reverse-mode gradients, plus the ADAM optimizer.

Tensors are plain numpy arrays wrapped with gradient bookkeeping. Each
operation records its inputs and a backward closure; ``TensorND.backward``
walks the recorded graph in reverse topological order. Gradients accumulate:
calling backward twice without resetting grads doubles them.

Float64 is the default (used by the gradient checks); networks train in
float32. All reductions run in a fixed association order, so results are
bit-reproducible for a given thread count.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class TensorND:
    """N-dimensional real array with optional gradient storage.

    Image tensors use layout (batch, channels, height, width). Leaf tensors
    created with ``requires_grad=True`` start with an all-zero grad so that
    parameters untouched by a backward pass report zero gradient.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_bwd", "_op", "pool_switches")

    def __init__(self, values, requires_grad=False, _parents=(), _bwd=None, _op=""):
        arr = np.asarray(values)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._bwd = _bwd
        self._op = _op
        self.pool_switches = None
        self.grad = None
        if self.requires_grad and not self._parents:
            self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self):
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        return f"TensorND(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={self._op!r})"

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad[...] = 0

    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` for every node that requires it.

        ``self`` must be scalar (size 1). Repeated calls without zeroing
        grads accumulate.
        """
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        flow = {id(self): np.ones_like(self.values)}
        for node in reversed(topo):
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node._bwd is None:
                # leaf: this is where gradients are stored and accumulate
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = g.copy()
                    else:
                        node.grad += g
                continue
            parent_grads = node._bwd(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = flow.get(id(p))
                if acc is None:
                    flow[id(p)] = pg
                else:
                    acc += pg


def _make(values, parents, bwd, op):
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    if track:
        return TensorND(values, requires_grad=True, _parents=parents, _bwd=bwd, _op=op)
    return TensorND(values, _op=op)


def _as2(v):
    if isinstance(v, int):
        return (v, v)
    return (int(v[0]), int(v[1]))


@dataclass
class ConvSpec:
    """Weights plus geometry for one 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: tuple = (1, 1)
    dilation: tuple = (1, 1)
    padding: tuple = (0, 0)
    weights: TensorND = None
    bias: TensorND = None

    def __post_init__(self):
        self.kernel = _as2(self.kernel)
        self.stride = _as2(self.stride)
        self.dilation = _as2(self.dilation)
        self.padding = _as2(self.padding)
        kh, kw = self.kernel
        wshape = (self.out_channels, self.in_channels, kh, kw)
        if self.weights is None:
            self.weights = TensorND(np.zeros(wshape), requires_grad=True)
        if self.bias is None:
            self.bias = TensorND(np.zeros(self.out_channels, dtype=self.weights.dtype), requires_grad=True)
        if self.weights.shape != wshape:
            raise ShapeError(f"conv weights must have shape {wshape}, got {self.weights.shape}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"conv bias must have length {self.out_channels}, got {self.bias.shape}")

    @property
    def effective_kernel(self):
        kh, kw = self.kernel
        dh, dw = self.dilation
        return ((kh - 1) * dh + 1, (kw - 1) * dw + 1)

    @classmethod
    def he_init(cls, in_channels, out_channels, kernel=(3, 3), stride=(1, 1),
                dilation=(1, 1), padding=(0, 0), rng=None, dtype=np.float64):
        """Fan-in scaled Gaussian weights, zero bias."""
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = _as2(kernel)
        fan_in = in_channels * kh * kw
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kh, kw))
        return cls(in_channels, out_channels, _as2(kernel), _as2(stride), _as2(dilation), _as2(padding),
                   weights=TensorND(w.astype(dtype), requires_grad=True),
                   bias=TensorND(np.zeros(out_channels, dtype=dtype), requires_grad=True))

    def param_tensors(self):
        return [self.weights, self.bias]


def _conv_out_dims(h, w, spec):
    (kh, kw), (sh, sw) = spec.kernel, spec.stride
    (dh, dw), (ph, pw) = spec.dilation, spec.padding
    ekh, ekw = spec.effective_kernel
    if h + 2 * ph < ekh or w + 2 * pw < ekw:
        raise ShapeError(
            f"input {h}x{w} plus padding {ph}x{pw} smaller than effective kernel {ekh}x{ekw}"
        )
    oh = (h + 2 * ph - ekh) // sh + 1
    ow = (w + 2 * pw - ekw) // sw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"convolution would produce empty output from input {h}x{w}")
    return oh, ow


def _conv1x1(x: TensorND, spec: ConvSpec) -> TensorND:
    # pointwise convolution as a channel matmul
    b, ci, h, w = x.shape
    co = spec.out_channels
    xmat = x.values.reshape(b, ci, h * w)
    wmat = spec.weights.values.reshape(co, ci)
    out = np.matmul(wmat[None], xmat) + spec.bias.values.reshape(1, co, 1)

    def bwd(g):
        gm = g.reshape(b, co, h * w)
        dx = dwt = db = None
        if x.requires_grad:
            dx = np.matmul(wmat.T[None], gm).reshape(b, ci, h, w)
        if spec.weights.requires_grad:
            dwt = np.matmul(gm, xmat.transpose(0, 2, 1)).sum(axis=0).reshape(spec.weights.shape)
        if spec.bias.requires_grad:
            db = gm.sum(axis=(0, 2))
        return dx, dwt, db

    return _make(out.reshape(b, co, h, w), (x, spec.weights, spec.bias), bwd, "conv2d")


def conv2d(x: TensorND, spec: ConvSpec) -> TensorND:
    """2-D cross-correlation with stride, dilation and zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (batch, channel, height, width), got {x.shape}")
    b, ci, h, w = x.shape
    if ci != spec.in_channels:
        raise ShapeError(f"conv2d expects {spec.in_channels} input channels, got {ci}")
    (sh, sw), (dh, dw), (ph, pw) = spec.stride, spec.dilation, spec.padding
    kh, kw = spec.kernel
    oh, ow = _conv_out_dims(h, w, spec)
    if (kh, kw) == (1, 1) and (sh, sw) == (1, 1) and not (ph or pw):
        return _conv1x1(x, spec)
    xp = np.pad(x.values, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.values
    out = _kernels.conv2d_fwd(xp, spec.weights.values, spec.bias.values, sh, sw, dh, dw, oh, ow)

    def bwd(g):
        g = np.ascontiguousarray(g)
        dx = dwt = db = None
        if x.requires_grad:
            dxp = _kernels.conv2d_bwd_data(g, spec.weights.values, h + 2 * ph, w + 2 * pw, sh, sw, dh, dw)
            dx = dxp[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else dxp
        if spec.weights.requires_grad:
            dwt = _kernels.conv2d_bwd_weights(xp, g, kh, kw, sh, sw, dh, dw)
        if spec.bias.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        return dx, dwt, db

    return _make(out, (x, spec.weights, spec.bias), bwd, "conv2d")


def conv_transpose2d(x: TensorND, spec: ConvSpec) -> TensorND:
    """Fractionally-strided convolution (transpose of a strided conv2d).

    Maps spec.in_channels to spec.out_channels; output spatial dims are
    (in - 1) * stride - 2 * padding + effective kernel.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-d input, got {x.shape}")
    b, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv_transpose2d expects {spec.in_channels} input channels, got {c}")
    (sh, sw), (dh, dw), (ph, pw) = spec.stride, spec.dilation, spec.padding
    kh, kw = spec.kernel
    ekh, ekw = spec.effective_kernel
    oh = (h - 1) * sh - 2 * ph + ekh
    ow = (w - 1) * sw - 2 * pw + ekw
    if oh < 1 or ow < 1:
        raise ShapeError(f"transpose convolution would produce empty output from input {h}x{w}")
    # the adjoint of a regular conv mapping out_channels -> in_channels,
    # whose weight layout is the channel-transpose of ours
    wt = np.ascontiguousarray(spec.weights.values.transpose(1, 0, 2, 3))
    full = _kernels.conv2d_bwd_data(np.ascontiguousarray(x.values), wt,
                                    oh + 2 * ph, ow + 2 * pw, sh, sw, dh, dw)
    out = full[:, :, ph : ph + oh, pw : pw + ow] if (ph or pw) else full
    out = out + spec.bias.values.reshape(1, -1, 1, 1)

    def bwd(g):
        gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else np.ascontiguousarray(g)
        dx = dwt = db = None
        if x.requires_grad:
            dx = _kernels.conv2d_fwd(gp, wt, np.zeros(spec.in_channels, dtype=g.dtype),
                                     sh, sw, dh, dw, h, w)
        if spec.weights.requires_grad:
            dreg = _kernels.conv2d_bwd_weights(gp, np.ascontiguousarray(x.values), kh, kw, sh, sw, dh, dw)
            dwt = np.ascontiguousarray(dreg.transpose(1, 0, 2, 3))
        if spec.bias.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        return dx, dwt, db

    return _make(out, (x, spec.weights, spec.bias), bwd, "conv_transpose2d")


# ---------------------------------------------------------------------------
# pooling and upsampling
# ---------------------------------------------------------------------------

DOWN_MODES = ("max_pool2", "avg_pool2", "strided_conv2")
UP_MODES = ("nearest", "nearest_conv3", "bilinear", "bilinear_conv3", "unpool", "frac_strided_conv")


class PoolSwitches:
    """Argmax positions recorded by max_pool2, consumed by unpool."""

    __slots__ = ("index", "in_shape")

    def __init__(self, index, in_shape):
        self.index = index
        self.in_shape = in_shape


def _check_even(x):
    h, w = x.shape[2], x.shape[3]
    if h % 2 or w % 2:
        raise ShapeError(f"downsample requires even spatial dims, got {h}x{w}; pad upstream")


def max_pool2(x: TensorND) -> TensorND:
    """2x2 max pooling, stride 2. Records switches on the output tensor."""
    _check_even(x)
    b, c, h, w = x.shape
    xr = x.values.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        dxr = np.zeros((b, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(dxr, idx[..., None], g[..., None], axis=-1)
        return (dxr.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w),)

    t = _make(out, (x,), bwd, "max_pool2")
    t.pool_switches = PoolSwitches(idx, (b, c, h, w))
    return t


def avg_pool2(x: TensorND) -> TensorND:
    """2x2 average pooling, stride 2."""
    _check_even(x)
    b, c, h, w = x.shape
    out = x.values.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        gq = (g * 0.25)[:, :, :, None, :, None]
        return (np.broadcast_to(gq, (b, c, h // 2, 2, w // 2, 2)).reshape(b, c, h, w).copy(),)

    return _make(out, (x,), bwd, "avg_pool2")


def downsample(x: TensorND, mode: str, conv_spec: ConvSpec = None) -> TensorND:
    """Halve spatial dims by max pooling, average pooling, or strided conv."""
    if mode == "max_pool2":
        return max_pool2(x)
    if mode == "avg_pool2":
        return avg_pool2(x)
    if mode == "strided_conv2":
        if conv_spec is None:
            raise ValueError("strided_conv2 downsampling requires a ConvSpec")
        _check_even(x)
        return conv2d(x, conv_spec)
    raise ValueError(f"unknown downsample mode {mode!r}; choose from {DOWN_MODES}")


def upsample_nearest2(x: TensorND) -> TensorND:
    """Nearest-neighbour 2x upsampling (pixel replication)."""
    b, c, h, w = x.shape
    out = np.broadcast_to(x.values[:, :, :, None, :, None], (b, c, h, 2, w, 2)).reshape(b, c, 2 * h, 2 * w)

    def bwd(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(np.ascontiguousarray(out), (x,), bwd, "upsample_nearest2")


def _bilin_weights(n):
    # output sample k maps to source k/2 - 0.25; even outputs blend the
    # previous source pixel, odd outputs the next, with weights 3/4 and 1/4
    lo = np.maximum(np.arange(n) - 1, 0)
    hi = np.minimum(np.arange(n) + 1, n - 1)
    return lo, hi


def _bilin_axis_fwd(v, axis):
    n = v.shape[axis]
    lo, hi = _bilin_weights(n)
    v = np.moveaxis(v, axis, 0)
    out = np.empty((2 * n,) + v.shape[1:], dtype=v.dtype)
    out[0::2] = 0.75 * v + 0.25 * v[lo]
    out[1::2] = 0.75 * v + 0.25 * v[hi]
    return np.moveaxis(out, 0, axis)


def _bilin_axis_bwd(g, axis, n):
    lo, hi = _bilin_weights(n)
    g = np.moveaxis(g, axis, 0)
    dv = 0.75 * g[0::2] + 0.75 * g[1::2]
    np.add.at(dv, lo, 0.25 * g[0::2])
    np.add.at(dv, hi, 0.25 * g[1::2])
    return np.moveaxis(dv, 0, axis)


def upsample_bilinear2(x: TensorND) -> TensorND:
    """Bilinear 2x upsampling; exact on linear ramps away from the borders."""
    b, c, h, w = x.shape
    out = _bilin_axis_fwd(_bilin_axis_fwd(x.values, 2), 3)

    def bwd(g):
        return (_bilin_axis_bwd(_bilin_axis_bwd(g, 3, w), 2, h),)

    return _make(out, (x,), bwd, "upsample_bilinear2")


def unpool2(x: TensorND, switches: PoolSwitches) -> TensorND:
    """Place each value at the position recorded by the paired max_pool2."""
    if switches is None:
        raise ValueError("unpool requires the switches recorded by the paired max_pool2")
    b, c, h, w = switches.in_shape
    if x.shape != (b, c, h // 2, w // 2):
        raise ShapeError(f"unpool input {x.shape} does not match recorded pool of {switches.in_shape}")
    buf = np.zeros((b, c, h // 2, w // 2, 4), dtype=x.dtype)
    np.put_along_axis(buf, switches.index[..., None], x.values[..., None], axis=-1)
    out = buf.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)

    def bwd(g):
        gr = g.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
        return (np.take_along_axis(gr, switches.index[..., None], axis=-1)[..., 0],)

    return _make(out, (x,), bwd, "unpool2")


def upsample(x: TensorND, mode: str, conv_spec: ConvSpec = None, switches: PoolSwitches = None) -> TensorND:
    """Double spatial dims using one of the six configured strategies."""
    if mode == "nearest":
        return upsample_nearest2(x)
    if mode == "bilinear":
        return upsample_bilinear2(x)
    if mode == "nearest_conv3":
        if conv_spec is None:
            raise ValueError("nearest_conv3 requires a 3x3 ConvSpec")
        return conv2d(upsample_nearest2(x), conv_spec)
    if mode == "bilinear_conv3":
        if conv_spec is None:
            raise ValueError("bilinear_conv3 requires a 3x3 ConvSpec")
        return conv2d(upsample_bilinear2(x), conv_spec)
    if mode == "unpool":
        return unpool2(x, switches)
    if mode == "frac_strided_conv":
        if conv_spec is None:
            raise ValueError("frac_strided_conv requires a ConvSpec (kernel 4, stride 2, padding 1)")
        return conv_transpose2d(x, conv_spec)
    raise ValueError(f"unknown upsample mode {mode!r}; choose from {UP_MODES}")


# ---------------------------------------------------------------------------
# normalization, joins, activations, loss
# ---------------------------------------------------------------------------


@dataclass
class BatchNormStats:
    """Running statistics for one batch_norm site."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum, eps)


def batch_norm(x: TensorND, gamma: TensorND, beta: TensorND, mode: str, stats: BatchNormStats) -> TensorND:
    """Per-channel batch normalization.

    Train mode normalizes by batch statistics (biased variance) and updates
    the running stats in place; eval mode normalizes by the running stats.
    """
    b, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm expects gamma/beta of length {c}")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    eps = stats.eps
    n = b * h * w
    if mode == "train":
        mean = x.values.mean(axis=(0, 2, 3))
        var = x.values.var(axis=(0, 2, 3))
        m = stats.momentum
        stats.running_mean *= 1.0 - m
        stats.running_mean += m * mean
        stats.running_var *= 1.0 - m
        stats.running_var += m * var
    else:
        mean = stats.running_mean
        var = stats.running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mean.reshape(1, c, 1, 1)) * ivar.reshape(1, c, 1, 1)
    out = gamma.values.reshape(1, c, 1, 1) * xhat + beta.values.reshape(1, c, 1, 1)

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            gv = gamma.values.reshape(1, c, 1, 1)
            if mode == "eval":
                dx = g * gv * ivar.reshape(1, c, 1, 1)
            else:
                dxhat = g * gv
                sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n) * ivar.reshape(1, c, 1, 1)
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), bwd, "batch_norm")


def concat_channels(xs) -> TensorND:
    """Concatenate along the channel axis; backward splits the gradient."""
    xs = list(xs)
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels spatial/batch mismatch: {t.shape} vs {ref}")
    if len(xs) == 1:
        x = xs[0]

        def bwd_one(g):
            return (g,)

        return _make(x.values, (x,), bwd_one, "concat_channels")
    sizes = [t.shape[1] for t in xs]
    out = np.concatenate([t.values for t in xs], axis=1)
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return _make(out, tuple(xs), bwd, "concat_channels")


def residual_add(x: TensorND, y: TensorND) -> TensorND:
    if x.shape != y.shape:
        raise ShapeError(f"residual_add shape mismatch: {x.shape} vs {y.shape}")

    def bwd(g):
        return g, g

    return _make(x.values + y.values, (x, y), bwd, "residual_add")


def relu(x: TensorND) -> TensorND:
    out = np.maximum(x.values, 0)

    def bwd(g):
        return (g * (x.values > 0),)

    return _make(out, (x,), bwd, "relu")


def softmax_channels(x: TensorND) -> TensorND:
    """Softmax over the channel axis; rows sum to one."""
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return _make(p, (x,), bwd, "softmax_channels")


def mse_loss(pred: TensorND, target: TensorND) -> TensorND:
    """Mean over all elements of the squared difference."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.values - target.values
    n = diff.size
    out = np.asarray((diff * diff).mean(), dtype=pred.dtype)

    def bwd(g):
        scale = g * (2.0 / n)
        dp = scale * diff if pred.requires_grad else None
        dt = -scale * diff if target.requires_grad else None
        return dp, dt

    return _make(out, (pred, target), bwd, "mse_loss")


def tensor_sum(x: TensorND) -> TensorND:
    out = np.asarray(x.values.sum(), dtype=x.dtype)

    def bwd(g):
        return (np.full_like(x.values, g),)

    return _make(out, (x,), bwd, "sum")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """ADAM moment buffers for a fixed parameter list."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def create(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(learning_rate, beta1, beta2, epsilon, 0,
                   [np.zeros_like(p.values) for p in params],
                   [np.zeros_like(p.values) for p in params])


def adam_step(params, state: AdamState):
    """One bias-corrected ADAM update over ``params`` (in the order used at create)."""
    if len(params) != len(state.m):
        raise ValueError(f"adam_step got {len(params)} params for state tracking {len(state.m)}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    lr = state.learning_rate
    for p, m, v in zip(params, state.m, state.v):
        if p.grad is None:
            raise ValueError("adam_step requires populated grads; run backward first")
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.values -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def zero_grads(params):
    for p in params:
        p.zero_grad()
