"""Low-level convolution kernels.

Layout is channels-first (batch, channel, row, col). The forward kernel is
parallel over row bands and holds all output channels of one row in a local
accumulator; 3-wide stride-1 kernels get a fused-tap fast path. Stride-1
data gradients reuse the forward kernel with channel-swapped, spatially
flipped weights; a scatter kernel covers strided cases. Weight gradients
for 3x3 stride-1 kernels keep the nine tap sums in registers over a single
pass; a generic kernel covers the rest. Every reduction has a fixed
association order, so results are bit-reproducible for a given build.

A pure-numpy im2col path backs every kernel when numba is unavailable; both
paths produce matching results and the tests cross-check them.
"""

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on minimal installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range


@njit(parallel=True, fastmath=True, cache=True)
def _conv2d_fwd_jit(xp, w, b, sh, sw, dh, dw, oh, ow):
    B, Ci, Hp, Wp = xp.shape
    Co = w.shape[0]
    kh = w.shape[2]
    kw = w.shape[3]
    fast3 = kw == 3 and sw == 1
    fast1 = kw == 1 and sw == 1
    out = np.empty((B, Co, oh, ow), dtype=xp.dtype)
    nb = (oh + 31) // 32
    for u in prange(B * nb):
        bi = u // nb
        y0 = (u % nb) * 32
        y1 = min(oh, y0 + 32)
        acc = np.empty((Co, ow), dtype=xp.dtype)
        for y in range(y0, y1):
            for co in range(Co):
                a = acc[co]
                bv = b[co]
                for x in range(ow):
                    a[x] = bv
            for ci in range(Ci):
                for i in range(kh):
                    xrow = xp[bi, ci, y * sh + i * dh]
                    if fast3:
                        s0 = xrow[0:ow]
                        s1 = xrow[dw : dw + ow]
                        s2 = xrow[2 * dw : 2 * dw + ow]
                        for co in range(Co):
                            a = acc[co]
                            w0 = w[co, ci, i, 0]
                            w1 = w[co, ci, i, 1]
                            w2 = w[co, ci, i, 2]
                            for x in range(ow):
                                a[x] += w0 * s0[x] + w1 * s1[x] + w2 * s2[x]
                    elif fast1:
                        s0 = xrow[0:ow]
                        for co in range(Co):
                            a = acc[co]
                            w0 = w[co, ci, i, 0]
                            for x in range(ow):
                                a[x] += w0 * s0[x]
                    else:
                        for co in range(Co):
                            a = acc[co]
                            for j in range(kw):
                                wv = w[co, ci, i, j]
                                x0 = j * dw
                                for x in range(ow):
                                    a[x] += wv * xrow[x0 + x * sw]
            for co in range(Co):
                orow = out[bi, co, y]
                a = acc[co]
                for x in range(ow):
                    orow[x] = a[x]
    return out


@njit(parallel=True, fastmath=True, cache=True)
def _conv2d_bwd_data_scatter_jit(g, w, Hp, Wp, sh, sw, dh, dw):
    B, Co, oh, ow = g.shape
    Ci = w.shape[1]
    kh = w.shape[2]
    kw = w.shape[3]
    dxp = np.zeros((B, Ci, Hp, Wp), dtype=g.dtype)
    for bc in prange(B * Ci):
        bi = bc // Ci
        ci = bc % Ci
        for co in range(Co):
            for y in range(oh):
                grow = g[bi, co, y]
                for i in range(kh):
                    drow = dxp[bi, ci, y * sh + i * dh]
                    for j in range(kw):
                        wv = w[co, ci, i, j]
                        x0 = j * dw
                        for x in range(ow):
                            drow[x0 + x * sw] += wv * grow[x]
    return dxp


@njit(parallel=True, fastmath=True, cache=True)
def _conv2d_bwd_weights33_jit(xp, g, dh, dw):
    # 3x3 stride-1: nine tap sums stay in registers over one pass
    B, Ci, Hp, Wp = xp.shape
    Co = g.shape[1]
    oh = g.shape[2]
    ow = g.shape[3]
    out = np.empty((Co, Ci, 3, 3), dtype=g.dtype)
    for cc in prange(Co * Ci):
        co = cc // Ci
        ci = cc % Ci
        a00 = 0.0; a01 = 0.0; a02 = 0.0
        a10 = 0.0; a11 = 0.0; a12 = 0.0
        a20 = 0.0; a21 = 0.0; a22 = 0.0
        for bi in range(B):
            for y in range(oh):
                grow = g[bi, co, y]
                x0 = xp[bi, ci, y]
                x1 = xp[bi, ci, y + dh]
                x2 = xp[bi, ci, y + 2 * dh]
                z = grow[0] * 0
                r00 = z; r01 = z; r02 = z
                r10 = z; r11 = z; r12 = z
                r20 = z; r21 = z; r22 = z
                for x in range(ow):
                    gv = grow[x]
                    r00 += gv * x0[x]
                    r01 += gv * x0[x + dw]
                    r02 += gv * x0[x + 2 * dw]
                    r10 += gv * x1[x]
                    r11 += gv * x1[x + dw]
                    r12 += gv * x1[x + 2 * dw]
                    r20 += gv * x2[x]
                    r21 += gv * x2[x + dw]
                    r22 += gv * x2[x + 2 * dw]
                a00 += r00; a01 += r01; a02 += r02
                a10 += r10; a11 += r11; a12 += r12
                a20 += r20; a21 += r21; a22 += r22
        out[co, ci, 0, 0] = a00; out[co, ci, 0, 1] = a01; out[co, ci, 0, 2] = a02
        out[co, ci, 1, 0] = a10; out[co, ci, 1, 1] = a11; out[co, ci, 1, 2] = a12
        out[co, ci, 2, 0] = a20; out[co, ci, 2, 1] = a21; out[co, ci, 2, 2] = a22
    return out


@njit(parallel=True, fastmath=True, cache=True)
def _conv2d_bwd_weights_gen_jit(xp, g, kh, kw, sh, sw, dh, dw):
    B, Ci, Hp, Wp = xp.shape
    Co = g.shape[1]
    oh = g.shape[2]
    ow = g.shape[3]
    out = np.empty((Co, Ci, kh, kw), dtype=g.dtype)
    for cc in prange(Co * Ci):
        co = cc // Ci
        ci = cc % Ci
        for i in range(kh):
            for j in range(kw):
                x0 = j * dw
                total = 0.0
                for bi in range(B):
                    for y in range(oh):
                        grow = g[bi, co, y]
                        xrow = xp[bi, ci, y * sh + i * dh]
                        r = grow[0] * 0
                        if sw == 1:
                            xs = xrow[x0 : x0 + ow]
                            for x in range(ow):
                                r += grow[x] * xs[x]
                        else:
                            for x in range(ow):
                                r += grow[x] * xrow[x0 + x * sw]
                        total += r
                out[co, ci, i, j] = total
    return out


def _conv2d_bwd_weights_dispatch(xp, g, kh, kw, sh, sw, dh, dw):
    if kh == 3 and kw == 3 and sh == 1 and sw == 1:
        return _conv2d_bwd_weights33_jit(xp, g, dh, dw)
    return _conv2d_bwd_weights_gen_jit(xp, g, kh, kw, sh, sw, dh, dw)


# ---------------------------------------------------------------------------
# numpy reference path (also the cross-check oracle for the jit kernels)
# ---------------------------------------------------------------------------


def _im2col(xp, kh, kw, sh, sw, dh, dw, oh, ow):
    B, C = xp.shape[:2]
    col = np.empty((B, C, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, :, i, j] = xp[
                :,
                :,
                i * dh : i * dh + (oh - 1) * sh + 1 : sh,
                j * dw : j * dw + (ow - 1) * sw + 1 : sw,
            ]
    return col


def _conv2d_fwd_np(xp, w, b, sh, sw, dh, dw, oh, ow):
    B, Ci = xp.shape[:2]
    Co, _, kh, kw = w.shape
    col = _im2col(xp, kh, kw, sh, sw, dh, dw, oh, ow).reshape(B, Ci * kh * kw, oh * ow)
    out = np.matmul(w.reshape(1, Co, Ci * kh * kw), col)
    out += b.reshape(1, Co, 1)
    return out.reshape(B, Co, oh, ow)


def _conv2d_bwd_data_scatter_np(g, w, Hp, Wp, sh, sw, dh, dw):
    B, Co, oh, ow = g.shape
    Ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    dcol = np.matmul(
        w.reshape(1, Co, Ci * kh * kw).transpose(0, 2, 1), g.reshape(B, Co, oh * ow)
    ).reshape(B, Ci, kh, kw, oh, ow)
    dxp = np.zeros((B, Ci, Hp, Wp), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[
                :,
                :,
                i * dh : i * dh + (oh - 1) * sh + 1 : sh,
                j * dw : j * dw + (ow - 1) * sw + 1 : sw,
            ] += dcol[:, :, i, j]
    return dxp


def _conv2d_bwd_weights_np(xp, g, kh, kw, sh, sw, dh, dw):
    B, Ci = xp.shape[:2]
    Co, oh, ow = g.shape[1], g.shape[2], g.shape[3]
    col = _im2col(xp, kh, kw, sh, sw, dh, dw, oh, ow).reshape(B, Ci * kh * kw, oh * ow)
    g2 = g.reshape(B, Co, oh * ow)
    return np.matmul(g2, col.transpose(0, 2, 1)).sum(axis=0).reshape(Co, Ci, kh, kw)


if HAVE_NUMBA:
    conv2d_fwd = _conv2d_fwd_jit
    _bwd_data_scatter = _conv2d_bwd_data_scatter_jit
    conv2d_bwd_weights = _conv2d_bwd_weights_dispatch
else:  # pragma: no cover
    conv2d_fwd = _conv2d_fwd_np
    _bwd_data_scatter = _conv2d_bwd_data_scatter_np
    conv2d_bwd_weights = _conv2d_bwd_weights_np


def conv2d_bwd_data(g, w, Hp, Wp, sh, sw, dh, dw):
    """Gradient w.r.t. the padded input."""
    kh, kw = w.shape[2], w.shape[3]
    if sh == 1 and sw == 1:
        # correlate the padded output gradient with flipped, channel-swapped
        # weights; this reuses the fast forward kernel
        wflip = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        gp = np.pad(g, ((0, 0), (0, 0), ((kh - 1) * dh, (kh - 1) * dh), ((kw - 1) * dw, (kw - 1) * dw)))
        zeros = np.zeros(w.shape[1], dtype=g.dtype)
        return conv2d_fwd(gp, wflip, zeros, 1, 1, dh, dw, Hp, Wp)
    return _bwd_data_scatter(g, w, Hp, Wp, sh, sw, dh, dw)
