"""Hot 1D convolution kernels with two interchangeable backends.

``CORENET_BACKEND=numpy`` selects strided-view windows contracted with
``tensordot``; ``numba`` selects compiled ``@njit`` im2col/col2im loops
around a single GEMM. When unset, numba is used if it imports.

All kernels work on unpadded inputs and take ``padding`` explicitly, so the
two backends share one calling convention:

    conv1d_forward(x[B,C,L], w[O,C,K], stride, padding) -> y[B,O,L']
    conv1d_grad_input(g[B,O,L'], w[O,C,K], stride, padding, L) -> gx[B,C,L]
    conv1d_grad_weight(g[B,O,L'], x[B,C,L], K, stride, padding) -> gw[O,C,K]
"""

from __future__ import annotations

import os
import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the system TBB is often too old for numba; skip it quietly
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding)))


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _np_windows(xp: np.ndarray, kernel: int, stride: int, out_len: int) -> np.ndarray:
    # [B, C, L', K] strided view, no copy
    win = sliding_window_view(xp, kernel, axis=2)
    return win[:, :, : (out_len - 1) * stride + 1 : stride, :]


def np_conv1d_forward(x, w, stride, padding):
    out_len = conv_output_length(x.shape[2], w.shape[2], stride, padding)
    cols = _np_windows(_pad(x, padding), w.shape[2], stride, out_len)
    # [B, L', O]
    y = np.tensordot(cols, w, axes=([1, 3], [1, 2]))
    return np.ascontiguousarray(y.transpose(0, 2, 1))


def np_conv1d_grad_input(g, w, stride, padding, length):
    batch, _, out_len = g.shape
    kernel = w.shape[2]
    # [B, L', C, K]
    gcols = np.tensordot(g, w, axes=([1], [0]))
    gxp = np.zeros((batch, w.shape[1], length + 2 * padding), dtype=g.dtype)
    span = (out_len - 1) * stride + 1
    for k in range(kernel):
        gxp[:, :, k : k + span : stride] += gcols[:, :, :, k].transpose(0, 2, 1)
    if padding:
        gxp = gxp[:, :, padding : padding + length]
    return np.ascontiguousarray(gxp)


def np_conv1d_grad_weight(g, x, kernel, stride, padding):
    out_len = g.shape[2]
    cols = _np_windows(_pad(x, padding), kernel, stride, out_len)
    return np.tensordot(g, cols, axes=([0, 2], [0, 2]))


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if HAS_NUMBA:
    # Compiled im2col / col2im around a single GEMM per call. Column
    # ``b * out_len + t`` of ``cols`` holds the receptive field of output
    # sample t in batch item b, rows are ordered (channel, tap).

    @njit(cache=True, parallel=True)
    def _im2col(xp, kernel, stride, out_len):
        batch, chans, _ = xp.shape
        cols = np.empty((chans * kernel, batch * out_len), dtype=xp.dtype)
        for c in prange(chans):
            for k in range(kernel):
                row = cols[c * kernel + k]
                for b in range(batch):
                    src = xp[b, c]
                    base = b * out_len
                    for t in range(out_len):
                        row[base + t] = src[t * stride + k]
        return cols

    @njit(cache=True, parallel=True)
    def _col2im(gcols, batch, chans, kernel, stride, out_len, plen):
        gxp = np.zeros((batch, chans, plen), dtype=gcols.dtype)
        # each channel is owned by one thread, so the summation order is fixed
        for c in prange(chans):
            for k in range(kernel):
                row = gcols[c * kernel + k]
                for b in range(batch):
                    dst = gxp[b, c]
                    base = b * out_len
                    for t in range(out_len):
                        dst[t * stride + k] += row[base + t]
        return gxp

    @njit(cache=True)
    def _nb_conv1d_forward(xp, w, stride, out_len):
        batch = xp.shape[0]
        outs, chans, kernel = w.shape
        cols = _im2col(xp, kernel, stride, out_len)
        y2 = np.dot(w.reshape(outs, chans * kernel), cols)
        return np.ascontiguousarray(y2.reshape(outs, batch, out_len).transpose(1, 0, 2))

    @njit(cache=True)
    def _nb_conv1d_grad_input(g, w, stride, plen):
        batch, outs, out_len = g.shape
        _, chans, kernel = w.shape
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(outs, batch * out_len)
        w2 = np.ascontiguousarray(w.reshape(outs, chans * kernel).T)
        gcols = np.dot(w2, g2)
        return _col2im(gcols, batch, chans, kernel, stride, out_len, plen)

    @njit(cache=True)
    def _nb_conv1d_grad_weight(g, xp, kernel, stride):
        batch, outs, out_len = g.shape
        chans = xp.shape[1]
        cols = _im2col(xp, kernel, stride, out_len)
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(outs, batch * out_len)
        gw = np.dot(g2, cols.T)
        return gw.reshape(outs, chans, kernel)


def nb_conv1d_forward(x, w, stride, padding):
    kernel = w.shape[2]
    out_len = conv_output_length(x.shape[2], kernel, stride, padding)
    xp = _pad(np.ascontiguousarray(x), padding)
    return _nb_conv1d_forward(xp, np.ascontiguousarray(w), stride, out_len)


def nb_conv1d_grad_input(g, w, stride, padding, length):
    gxp = _nb_conv1d_grad_input(np.ascontiguousarray(g), np.ascontiguousarray(w), stride, length + 2 * padding)
    return np.ascontiguousarray(gxp[:, :, padding : padding + length])


def nb_conv1d_grad_weight(g, x, kernel, stride, padding):
    xp = _pad(np.ascontiguousarray(x), padding)
    return _nb_conv1d_grad_weight(np.ascontiguousarray(g), xp, kernel, stride)


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

_BACKENDS = {
    "numpy": (np_conv1d_forward, np_conv1d_grad_input, np_conv1d_grad_weight),
}
if HAS_NUMBA:
    _BACKENDS["numba"] = (nb_conv1d_forward, nb_conv1d_grad_input, nb_conv1d_grad_weight)

_active = "numpy"


def available_backends() -> list[str]:
    return list(_BACKENDS)


def get_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active, conv1d_forward, conv1d_grad_input, conv1d_grad_weight
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    _active = name
    conv1d_forward, conv1d_grad_input, conv1d_grad_weight = _BACKENDS[name]


def _default_backend() -> str:
    requested = os.environ.get("CORENET_BACKEND", "").strip().lower()
    if requested:
        if requested not in _BACKENDS:
            warnings.warn(f"CORENET_BACKEND={requested!r} unavailable, using numpy")
            return "numpy"
        return requested
    return "numba" if HAS_NUMBA else "numpy"


conv1d_forward = np_conv1d_forward
conv1d_grad_input = np_conv1d_grad_input
conv1d_grad_weight = np_conv1d_grad_weight
set_backend(_default_backend())


def set_num_threads(n: int) -> None:
    """Pin numba and BLAS thread pools to ``n`` threads."""
    if HAS_NUMBA:
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(limits=n)
