"""Differentiable operators used by the restoration networks and losses.

Array layouts: signals are ``[batch, channels, length]``, dense features are
``[batch, features]``. Self-ONN weights are ``[Q, out, in, kernel]`` for both
the strided and the transposed variant.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(a.data / b.data, (a, b), backward, "div")


def neg(x: Tensor) -> Tensor:
    return make_result(-x.data, (x,), lambda g: (-g,), "neg")


def power(x: Tensor, q: int) -> Tensor:
    """Elementwise integer power ``x**q``."""
    if int(q) != q or q < 1:
        raise ValueError(f"power expects a positive integer order, got {q}")
    q = int(q)
    if q == 1:
        return make_result(x.data.copy(), (x,), lambda g: (g,), "power")
    out = x.data**q

    def backward(g):
        return (g * (q * x.data ** (q - 1)),)

    return make_result(out, (x,), backward, "power")


def power_stack(x: Tensor, q_order: int) -> Tensor:
    """Concatenate ``[x, x**2, ..., x**Q]`` along the channel axis.

    For ``q_order == 1`` the input is returned unchanged.
    """
    if q_order == 1:
        return x
    pows = [x.data]
    for _ in range(1, q_order):
        pows.append(pows[-1] * x.data)
    out = np.concatenate(pows, axis=1)
    chans = x.shape[1]

    def backward(g):
        gx = g[:, :chans].copy()
        for q in range(2, q_order + 1):
            gx += q * pows[q - 2] * g[:, (q - 1) * chans : q * chans]
        return (gx,)

    return make_result(out, (x,), backward, "power_stack")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1 / (1 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1 + ez)
    return make_result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def log10(x: Tensor) -> Tensor:
    ln10 = np.log(10.0)
    return make_result(np.log10(x.data), (x,), lambda g: (g / (x.data * ln10),), "log10")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """``max(x, floor)``; gradient is zero where the floor is active."""
    keep = x.data > floor
    out = np.where(keep, x.data, np.asarray(floor, dtype=x.dtype))
    return make_result(out, (x,), lambda g: (g * keep,), "clamp_min")


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(out, (x,), backward, "mean")


def mean_all(x: Tensor) -> Tensor:
    return mean(x)


def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (g.transpose(inv),),
        "transpose",
    )


def concat_channels(*xs: Tensor) -> Tensor:
    """Concatenate ``[B, C_i, L]`` tensors along the channel axis."""
    xs = tuple(as_tensor(x) for x in xs)
    length = xs[0].shape[2]
    for x in xs:
        if x.ndim != 3 or x.shape[0] != xs[0].shape[0] or x.shape[2] != length:
            raise ValueError(f"cannot concat shapes {[t.shape for t in xs]} on channels")
    splits = np.cumsum([x.shape[1] for x in xs])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=1))

    return make_result(np.concatenate([x.data for x in xs], axis=1), xs, backward, "concat")


# ---------------------------------------------------------------------------
# network layers
# ---------------------------------------------------------------------------


def _check_conv(x: Tensor, w: Tensor, b: Tensor | None, in_axis: int, out_axis: int):
    if x.ndim != 3:
        raise ValueError(f"expected [batch, channels, length] input, got {x.shape}")
    if w.ndim != 3:
        raise ValueError(f"expected 3-d kernel, got {w.shape}")
    if x.shape[1] != w.shape[in_axis]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {w.shape[in_axis]}")
    if b is not None and b.shape != (w.shape[out_axis],):
        raise ValueError(f"bias shape {b.shape} != ({w.shape[out_axis]},)")


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[B,C,L]`` with ``w[O,C,K]``."""
    _check_conv(x, w, b, 1, 0)
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    kernel = w.shape[2]
    length = x.shape[2]
    if kernels.conv_output_length(length, kernel, stride, padding) < 1:
        raise ValueError(f"length {length} too short for kernel {kernel}")
    out = kernels.conv1d_forward(x.data, w.data, stride, padding)
    if b is not None:
        out += b.data[None, :, None]

    def backward(g):
        gx = kernels.conv1d_grad_input(g, w.data, stride, padding, length) if x.requires_grad else None
        gw = kernels.conv1d_grad_weight(g, x.data, kernel, stride, padding) if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward, "conv1d")


def tconv_output_length(length: int, kernel: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (length - 1) * stride - 2 * padding + kernel + output_padding


def conv_transpose1d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed convolution of ``x[B,C,L]`` with ``w[O,C,K]``.

    It is the adjoint of ``conv1d`` with the kernel's in/out axes swapped.
    """
    _check_conv(x, w, b, 1, 0)
    if not 0 <= output_padding < stride:
        raise ValueError("output_padding must satisfy 0 <= output_padding < stride")
    kernel = w.shape[2]
    out_len = tconv_output_length(x.shape[2], kernel, stride, padding, output_padding)
    if out_len < 1:
        raise ValueError("transposed convolution output would be empty")
    wt = np.ascontiguousarray(w.data.transpose(1, 0, 2))
    out = kernels.conv1d_grad_input(x.data, wt, stride, padding, out_len)
    if b is not None:
        out += b.data[None, :, None]

    def backward(g):
        gx = kernels.conv1d_forward(g, wt, stride, padding) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = kernels.conv1d_grad_weight(x.data, g, kernel, stride, padding).transpose(1, 0, 2)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward, "conv_transpose1d")


def _flatten_q(w: Tensor) -> Tensor:
    # [Q, O, C, K] -> [O, Q*C, K], matching power_stack's channel order
    if w.ndim != 4:
        raise ValueError(f"Self-ONN kernel must be [Q, out, in, kernel], got {w.shape}")
    q, o, c, k = w.shape
    if q == 1:
        return reshape(w, (o, c, k))
    return reshape(transpose(w, (1, 0, 2, 3)), (o, q * c, k))


def selfonn_conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Generative-neuron convolution: ``b + sum_q conv1d(x**q, w[q-1])``."""
    if w.ndim != 4:
        raise ValueError(f"Self-ONN kernel must be [Q, out, in, kernel], got {w.shape}")
    if x.ndim != 3 or x.shape[1] != w.shape[2]:
        raise ValueError(f"input shape {x.shape} incompatible with kernel {w.shape}")
    return conv1d(power_stack(x, w.shape[0]), _flatten_q(w), b, stride, padding)


def selfonn_tconv1d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed generative-neuron convolution over the stacked input powers."""
    if w.ndim != 4:
        raise ValueError(f"Self-ONN kernel must be [Q, out, in, kernel], got {w.shape}")
    if x.ndim != 3 or x.shape[1] != w.shape[2]:
        raise ValueError(f"input shape {x.shape} incompatible with kernel {w.shape}")
    return conv_transpose1d(power_stack(x, w.shape[0]), _flatten_q(w), b, stride, padding, output_padding)


def instance_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Per-(item, channel) standardisation over length, then affine."""
    if x.ndim != 3:
        raise ValueError(f"instance_norm expects [B, C, L], got {x.shape}")
    if x.shape[2] < 2:
        raise ValueError("instance_norm needs length >= 2")
    mu = x.data.mean(axis=2, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv_std = 1 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv_std
    g_ = gamma.data[None, :, None] if gamma is not None else None
    out = xhat * g_ if g_ is not None else xhat.copy()
    if beta is not None:
        out = out + beta.data[None, :, None]

    def backward(g):
        dxhat = g * g_ if g_ is not None else g
        gx = inv_std * (
            dxhat - dxhat.mean(axis=2, keepdims=True) - xhat * (dxhat * xhat).mean(axis=2, keepdims=True)
        )
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=(0, 2)))
        if beta is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    parents = [x]
    if gamma is not None:
        parents.append(gamma)
    if beta is not None:
        parents.append(beta)
    return make_result(out, parents, backward, "instance_norm")


def dropout(x: Tensor, rate: float, train: bool, seed=None) -> Tensor:
    """Inverted dropout. ``seed`` is an int or a ``numpy.random.Generator``."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    scale = np.asarray(1 / (1 - rate), dtype=x.dtype)
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) * scale
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def adaptive_avg_pool1d(x: Tensor) -> Tensor:
    """Average over the length axis down to length 1: ``[B, C, L] -> [B, C, 1]``."""
    if x.ndim != 3:
        raise ValueError(f"adaptive_avg_pool1d expects [B, C, L], got {x.shape}")
    return mean(x, axis=2, keepdims=True)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x[B, F] @ w[O, F].T + b[O]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear shapes incompatible: x {x.shape}, w {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        grads = [g @ w.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward, "linear")


# ---------------------------------------------------------------------------
# time-frequency
# ---------------------------------------------------------------------------


def stft_magnitude(x: Tensor, window: np.ndarray, hop: int) -> Tensor:
    """Magnitude STFT of the complex sequence ``x[:, 0] + 1j * x[:, 1]``.

    Frames start at sample 0 every ``hop`` samples; a trailing partial frame
    is dropped. Output is ``[B, frames, len(window)]``.
    """
    if x.ndim != 3 or x.shape[1] != 2:
        raise ValueError(f"stft_magnitude expects [B, 2, L], got {x.shape}")
    nfft = len(window)
    length = x.shape[2]
    if nfft > length or hop < 1:
        raise ValueError("window longer than signal or invalid hop")
    frames = (length - nfft) // hop + 1
    idx = np.arange(frames)[:, None] * hop + np.arange(nfft)[None, :]
    win = np.asarray(window, dtype=x.dtype)
    z = x.data[:, 0] + 1j * x.data[:, 1]
    spec = np.fft.fft(z[:, idx] * win, axis=-1)
    mag = np.abs(spec)
    out = mag.astype(x.dtype)

    def backward(g):
        safe = np.where(mag > 0, mag, 1.0)
        unit = np.where(mag > 0, spec / safe, 0.0)
        # adjoint of the DFT: d/dRe z = Re(N ifft(G)), d/dIm z = Im(N ifft(G))
        back = np.fft.ifft(g * unit, axis=-1) * nfft * win
        gz = np.zeros(z.shape, dtype=np.complex128)
        for f in range(frames):
            gz[:, f * hop : f * hop + nfft] += back[:, f]
        gx = np.stack([gz.real, gz.imag], axis=1).astype(x.dtype)
        return (gx,)

    return make_result(out, (x,), backward, "stft_magnitude")
