"""Convolution and pooling kernels.

Two interchangeable backends live here: numba-compiled loops and a pure numpy
path built on strided window views. The backend is chosen once at import time;
set ``UAIX_NO_NUMBA=1`` to force the numpy path (it is also used automatically
when numba cannot be imported).

All kernels take and return float64 arrays in (batch, channel, height, width)
layout. Padding is applied by the caller-facing wrappers, never inside the
compiled loops.
"""
import os
import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    # only the fallback threading layers exist on some hosts; that is fine
    warnings.filterwarnings("ignore", message=".*TBB threading layer.*")
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("UAIX_NO_NUMBA", "").strip() in ("", "0")


def out_size(n, kernel, stride, pad=0):
    return (n + 2 * pad - kernel) // stride + 1


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _crop(x, pad):
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _windows(xp, kernel, stride):
    v = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def _np_conv2d_forward(x, w, b, stride, pad):
    win = _windows(_pad(x, pad), w.shape[2], stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    out += b
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _np_conv2d_backward_input(gy, w, x_shape, stride, pad):
    B, C, H, W = x_shape
    K = w.shape[2]
    Ho, Wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    for ki in range(K):
        for kj in range(K):
            contrib = np.tensordot(gy, w[:, :, ki, kj], axes=([1], [0]))
            gxp[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    return _crop(gxp, pad)


def _np_conv2d_backward_weight(x, gy, kernel, stride, pad):
    win = _windows(_pad(x, pad), kernel, stride)
    return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))


def _np_maxpool_forward(x, kernel, stride):
    win = _windows(x, kernel, stride)
    B, C, Ho, Wo = win.shape[:4]
    flat = win.reshape(B, C, Ho, Wo, kernel * kernel)
    # argmax returns the first maximum in row-major window order
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _np_maxpool_backward(gy, arg, x_shape, kernel, stride):
    B, C, Ho, Wo = gy.shape
    gx = np.zeros(x_shape)
    ki, kj = np.divmod(arg, kernel)
    rows = np.arange(Ho)[None, None, :, None] * stride + ki
    cols = np.arange(Wo)[None, None, None, :] * stride + kj
    bi = np.arange(B)[:, None, None, None]
    ci = np.arange(C)[None, :, None, None]
    np.add.at(gx, (bi, ci, rows, cols), gy)
    return gx


def _np_avgpool_forward(x, kernel, stride):
    return _windows(x, kernel, stride).mean(axis=(4, 5))


def _np_avgpool_backward(gy, x_shape, kernel, stride):
    gx = np.zeros(x_shape)
    Ho, Wo = gy.shape[2], gy.shape[3]
    share = gy / (kernel * kernel)
    for ki in range(kernel):
        for kj in range(kernel):
            gx[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += share
    return gx


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _nb_im2col(xp, K, stride, Ho, Wo):
        B, C = xp.shape[0], xp.shape[1]
        cols = np.empty((B, C, K, K, Ho, Wo))
        for n in prange(B):
            for c in range(C):
                for ki in range(K):
                    for kj in range(K):
                        for i in range(Ho):
                            r = i * stride + ki
                            for j in range(Wo):
                                cols[n, c, ki, kj, i, j] = xp[n, c, r, j * stride + kj]
        return cols

    @njit(cache=True, parallel=True)
    def _nb_im2col_t(xp, K, stride, Ho, Wo):
        B, C = xp.shape[0], xp.shape[1]
        cols = np.empty((C, K, K, B, Ho, Wo))
        for c in prange(C):
            for ki in range(K):
                for kj in range(K):
                    for n in range(B):
                        for i in range(Ho):
                            r = i * stride + ki
                            for j in range(Wo):
                                cols[c, ki, kj, n, i, j] = xp[n, c, r, j * stride + kj]
        return cols

    @njit(cache=True, parallel=True)
    def _nb_col2im(cols, stride, gxp):
        B, C, K, _, Ho, Wo = cols.shape
        for n in prange(B):
            for c in range(C):
                for ki in range(K):
                    for kj in range(K):
                        for i in range(Ho):
                            r = i * stride + ki
                            for j in range(Wo):
                                gxp[n, c, r, j * stride + kj] += cols[n, c, ki, kj, i, j]
        return gxp

    @njit(cache=True, parallel=True)
    def _nb_maxpool_forward_core(x, K, stride, out, arg):
        B, C, Ho, Wo = out.shape
        for n in prange(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        best = x[n, c, i * stride, j * stride]
                        best_k = 0
                        for ki in range(K):
                            for kj in range(K):
                                v = x[n, c, i * stride + ki, j * stride + kj]
                                if v > best:
                                    best = v
                                    best_k = ki * K + kj
                        out[n, c, i, j] = best
                        arg[n, c, i, j] = best_k
        return out

    @njit(cache=True, parallel=True)
    def _nb_maxpool_backward_core(gy, arg, K, stride, gx):
        B, C, Ho, Wo = gy.shape
        for n in prange(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        k = arg[n, c, i, j]
                        gx[n, c, i * stride + k // K, j * stride + k % K] += gy[n, c, i, j]
        return gx

    @njit(cache=True, parallel=True)
    def _nb_avgpool_forward_core(x, K, stride, out):
        B, C, Ho, Wo = out.shape
        inv = 1.0 / (K * K)
        for n in prange(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        acc = 0.0
                        for ki in range(K):
                            for kj in range(K):
                                acc += x[n, c, i * stride + ki, j * stride + kj]
                        out[n, c, i, j] = acc * inv
        return out

    @njit(cache=True, parallel=True)
    def _nb_avgpool_backward_core(gy, K, stride, gx):
        B, C, Ho, Wo = gy.shape
        inv = 1.0 / (K * K)
        for n in prange(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        g = gy[n, c, i, j] * inv
                        for ki in range(K):
                            for kj in range(K):
                                gx[n, c, i * stride + ki, j * stride + kj] += g
        return gx


# The GEMMs stay on BLAS; numba only does the gather/scatter around them.


def _nb_cols(x, kernel, stride, pad):
    xp = np.ascontiguousarray(_pad(x, pad))
    Ho = out_size(xp.shape[2], kernel, stride)
    Wo = out_size(xp.shape[3], kernel, stride)
    cols = _nb_im2col(xp, kernel, stride, Ho, Wo)
    return cols.reshape(x.shape[0], -1, Ho * Wo), Ho, Wo


def _nb_conv2d_forward(x, w, b, stride, pad):
    cols, Ho, Wo = _nb_cols(x, w.shape[2], stride, pad)
    out = np.matmul(w.reshape(w.shape[0], -1), cols)
    out += b[:, None]
    return out.reshape(x.shape[0], w.shape[0], Ho, Wo)


def _nb_conv2d_backward_input(gy, w, x_shape, stride, pad):
    B, C, H, W = x_shape
    O, _, K, _ = w.shape
    Ho, Wo = gy.shape[2], gy.shape[3]
    gcols = np.matmul(w.reshape(O, -1).T, gy.reshape(B, O, Ho * Wo))
    gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    _nb_col2im(gcols.reshape(B, C, K, K, Ho, Wo), stride, gxp)
    return _crop(gxp, pad)


def _nb_conv2d_backward_weight(x, gy, kernel, stride, pad):
    xp = np.ascontiguousarray(_pad(x, pad))
    B, O, Ho, Wo = gy.shape
    cols = _nb_im2col_t(xp, kernel, stride, Ho, Wo).reshape(-1, B * Ho * Wo)
    gy_t = gy.transpose(1, 0, 2, 3).reshape(O, -1)
    return (gy_t @ cols.T).reshape(O, x.shape[1], kernel, kernel)


def _nb_maxpool_forward(x, kernel, stride):
    B, C, H, W = x.shape
    shape = (B, C, out_size(H, kernel, stride), out_size(W, kernel, stride))
    out = np.empty(shape)
    arg = np.empty(shape, dtype=np.int64)
    _nb_maxpool_forward_core(np.ascontiguousarray(x), kernel, stride, out, arg)
    return out, arg


def _nb_maxpool_backward(gy, arg, x_shape, kernel, stride):
    gx = np.zeros(x_shape)
    return _nb_maxpool_backward_core(np.ascontiguousarray(gy), np.ascontiguousarray(arg), kernel, stride, gx)


def _nb_avgpool_forward(x, kernel, stride):
    B, C, H, W = x.shape
    out = np.empty((B, C, out_size(H, kernel, stride), out_size(W, kernel, stride)))
    return _nb_avgpool_forward_core(np.ascontiguousarray(x), kernel, stride, out)


def _nb_avgpool_backward(gy, x_shape, kernel, stride):
    gx = np.zeros(x_shape)
    return _nb_avgpool_backward_core(np.ascontiguousarray(gy), kernel, stride, gx)


NUMPY_KERNELS = {
    "conv2d_forward": _np_conv2d_forward,
    "conv2d_backward_input": _np_conv2d_backward_input,
    "conv2d_backward_weight": _np_conv2d_backward_weight,
    "maxpool_forward": _np_maxpool_forward,
    "maxpool_backward": _np_maxpool_backward,
    "avgpool_forward": _np_avgpool_forward,
    "avgpool_backward": _np_avgpool_backward,
}

NUMBA_KERNELS = None
if HAVE_NUMBA:
    NUMBA_KERNELS = {
        "conv2d_forward": _nb_conv2d_forward,
        "conv2d_backward_input": _nb_conv2d_backward_input,
        "conv2d_backward_weight": _nb_conv2d_backward_weight,
        "maxpool_forward": _nb_maxpool_forward,
        "maxpool_backward": _nb_maxpool_backward,
        "avgpool_forward": _nb_avgpool_forward,
        "avgpool_backward": _nb_avgpool_backward,
    }

BACKEND = "numba" if USE_NUMBA else "numpy"
_active = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

conv2d_forward = _active["conv2d_forward"]
conv2d_backward_input = _active["conv2d_backward_input"]
conv2d_backward_weight = _active["conv2d_backward_weight"]
maxpool_forward = _active["maxpool_forward"]
maxpool_backward = _active["maxpool_backward"]
avgpool_forward = _active["avgpool_forward"]
avgpool_backward = _active["avgpool_backward"]


def set_threads(n):
    """Cap the number of threads used by the numba kernels."""
    if HAVE_NUMBA and n:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
