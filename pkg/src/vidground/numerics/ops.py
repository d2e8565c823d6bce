"""Differentiable operations on :class:`Tensor`.

Sequences are laid out time-major: a length-T sequence with C channels is a
``(T, C)`` array. Reductions go through numpy with fixed shapes and strides,
so repeated evaluation on identical inputs is bitwise reproducible.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf as _erf

from . import trace
from .tensor import DimensionError, Tensor, as_tensor, make

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    if nlead > 0:
        g = g.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return make(a.data / b.data, (a, b), backward, "div")


def neg(a):
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return make(out, (a,), backward, "pow")


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def backward(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return make(np.where(pick_a, a.data, b.data), (a, b), backward, "maximum")


def minimum(a, b):
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def backward(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return make(np.where(pick_a, a.data, b.data), (a, b), backward, "minimum")


# -- unary nonlinearities -----------------------------------------------------

def exp(a):
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a):
    pos = a.data > 0
    # np.maximum keeps NaN so divergence stays visible
    return make(np.maximum(a.data, 0.0), (a,), lambda g: (np.where(pos, g, 0.0),), "relu")


def sigmoid(a):
    out = _stable_sigmoid(a.data)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _stable_sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(a):
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return make(out, (a,), lambda g: (g * _stable_sigmoid(x),), "softplus")


def gelu(a):
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x / _SQRT2))

    def backward(g):
        return (g * (cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)),)

    return make(x * cdf, (a,), backward, "gelu")


# -- shape manipulation -------------------------------------------------------

def reshape(a, shape):
    src = a.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(a, idx):
    src = a.shape
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros(src)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make(a.data[idx], (a,), backward, "getitem")


def split_last(a, sizes):
    """Split along the last axis into consecutive chunks of ``sizes``."""
    out, start = [], 0
    for n in sizes:
        out.append(getitem(a, (Ellipsis, slice(start, start + n))))
        start += n
    return out


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# -- reductions ---------------------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)
    m, k = a.shape[-2:]
    n = b.shape[-1]
    batch = int(np.prod(out.shape[:-2])) if out.ndim > 2 else 1
    trace.record("matmul", batch * m * k * n, a.shape, b.shape)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- normalisation and attention weights ---------------------------------------

def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (x,), backward, "softmax")


def masked_softmax(x, mask, axis=-1):
    """Softmax over entries where ``mask`` is true.

    Masked entries get weight exactly 0; a slice with no valid entry yields
    all zeros.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    z = np.where(mask, x.data, -np.inf)
    zmax = z.max(axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x.data - zmax, 0.0)), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    out = e / np.where(denom > 0, denom, 1.0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (x,), backward, "masked_softmax")


def layernorm(x, gain=None, bias=None, eps=1e-5):
    """Normalise over the last (channel) axis.

    A zero-variance row normalises to exactly zero before gain and bias.
    """
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = None if gain is None else gain.data
    out = xhat if gd is None else xhat * gd
    if bias is not None:
        out = out + bias.data

    parents = [x]
    if gain is not None:
        parents.append(gain)
    if bias is not None:
        parents.append(bias)

    def backward(g):
        gh = g if gd is None else g * gd
        gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                     - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return make(out, tuple(parents), backward, "layernorm")


# -- temporal convolutions ---------------------------------------------------

def _same_pad(x, k, stride):
    t = x.shape[0]
    if t == 0:
        raise DimensionError("conv1d: empty input sequence")
    if k % 2 != 1:
        raise DimensionError(f"conv1d: kernel size must be odd, got {k}")
    pad = k // 2
    t_out = -(-t // stride)
    xp = np.zeros((t + 2 * pad,) + x.shape[1:])
    xp[pad:pad + t] = x
    return xp, pad, t_out


def conv1d(x, weight, bias=None, stride=1):
    """Same-padded 1D convolution.

    ``x`` is ``(T, C_in)``, ``weight`` is ``(k, C_in, C_out)``; output is
    ``(ceil(T / stride), C_out)``.
    """
    k, c_in, c_out = weight.shape
    if x.ndim != 2 or x.shape[1] != c_in:
        raise DimensionError(f"conv1d: input {x.shape} does not match kernel {weight.shape}")
    xp, pad, t_out = _same_pad(x.data, k, stride)
    span = stride * (t_out - 1) + 1
    cols = np.concatenate([xp[j:j + span:stride] for j in range(k)], axis=1)
    w2 = weight.data.reshape(k * c_in, c_out)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data
    trace.record("conv1d", t_out * k * c_in * c_out, x.shape, weight.shape)
    t_in = x.shape[0]

    def backward(g):
        gw = (cols.T @ g).reshape(k, c_in, c_out)
        gcols = g @ w2.T
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[j:j + span:stride] += gcols[:, j * c_in:(j + 1) * c_in]
        grads = [gxp[pad:pad + t_in], gw]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward, "conv1d")


def depthwise_conv1d(x, weight, bias=None, stride=1):
    """Per-channel same-padded convolution; ``weight`` is ``(k, C)``."""
    k, c = weight.shape
    if x.ndim != 2 or x.shape[1] != c:
        raise DimensionError(f"depthwise_conv1d: input {x.shape} does not match kernel {weight.shape}")
    xp, pad, t_out = _same_pad(x.data, k, stride)
    span = stride * (t_out - 1) + 1
    taps = [xp[j:j + span:stride] for j in range(k)]
    out = taps[0] * weight.data[0]
    for j in range(1, k):
        out = out + taps[j] * weight.data[j]
    if bias is not None:
        out = out + bias.data
    trace.record("depthwise_conv1d", t_out * k * c, x.shape, weight.shape)
    t_in = x.shape[0]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        for j in range(k):
            gxp[j:j + span:stride] += g * weight.data[j]
            gw[j] = (g * taps[j]).sum(axis=0)
        grads = [gxp[pad:pad + t_in], gw]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward, "depthwise_conv1d")


def window_gather(x, window):
    """Stack, for each position t, the rows t-w//2 .. t+w//2 of ``x``.

    Returns a ``(T, window, C)`` tensor (zero rows beyond the sequence) and a
    ``(T, window)`` boolean validity mask.
    """
    if window % 2 != 1:
        raise DimensionError(f"window size must be odd, got {window}")
    t = x.shape[0]
    half = window // 2
    xp = np.zeros((t + 2 * half,) + x.shape[1:])
    xp[half:half + t] = x.data
    out = np.stack([xp[j:j + t] for j in range(window)], axis=1)
    pos = np.arange(t)[:, None] + np.arange(window)[None, :] - half
    valid = (pos >= 0) & (pos < t)

    def backward(g):
        gxp = np.zeros_like(xp)
        for j in range(window):
            gxp[j:j + t] += g[:, j]
        return (gxp[half:half + t],)

    return make(out, (x,), backward, "window_gather"), valid


def attention(queries, keys, values, heads=1, mask=None, window=None):
    """Multi-head scaled dot-product attention on ``(T, D)`` sequences.

    ``queries``, ``keys`` and ``values`` are already projected. ``mask`` is a
    boolean array over key positions (``(Tk,)`` or ``(Tq, Tk)``). With
    ``window`` set, attention is local: each query position t sees only key
    positions within ``window // 2`` of t (self-attention, Tq == Tk).
    Query rows with no visible key produce zeros.
    """
    tq, d_model = queries.shape
    tk = keys.shape[0]
    if d_model % heads:
        raise DimensionError(f"attention: {heads} heads do not divide model dim {d_model}")
    if keys.shape[1] != d_model or values.shape[0] != tk:
        raise DimensionError(
            f"attention: incompatible shapes q={queries.shape} k={keys.shape} v={values.shape}")
    dh = d_model // heads
    scale = 1.0 / math.sqrt(dh)
    q = transpose(reshape(queries, (tq, heads, dh)), (1, 0, 2))

    if window is None:
        k = transpose(reshape(keys, (tk, heads, dh)), (1, 2, 0))      # (H, dh, Tk)
        v = transpose(reshape(values, (tk, heads, dh)), (1, 0, 2))    # (H, Tk, dh)
        scores = mul(matmul(q, k), scale)                             # (H, Tq, Tk)
        valid = np.ones((tq, tk), dtype=bool)
        if mask is not None:
            valid = valid & np.asarray(mask, dtype=bool)
        weights = masked_softmax(scores, valid[None])
        out = matmul(weights, v)                                      # (H, Tq, dh)
        return reshape(transpose(out, (1, 0, 2)), (tq, d_model))

    if tq != tk:
        raise DimensionError("attention: a local window requires self-attention (Tq == Tk)")
    kw, valid = window_gather(keys, window)                           # (T, W, D)
    vw, _ = window_gather(values, window)
    if mask is not None:
        km = np.asarray(mask, dtype=bool)
        if km.ndim != 1:
            raise DimensionError("attention: windowed attention takes a per-key mask")
        kp = np.zeros(tk + window - 1, dtype=bool)
        kp[window // 2:window // 2 + tk] = km
        valid = valid & np.stack([kp[j:j + tk] for j in range(window)], axis=1)
    kw = transpose(reshape(kw, (tk, window, heads, dh)), (2, 0, 3, 1))  # (H, T, dh, W)
    vw = transpose(reshape(vw, (tk, window, heads, dh)), (2, 0, 1, 3))  # (H, T, W, dh)
    q4 = reshape(q, (heads, tq, 1, dh))
    scores = mul(matmul(q4, kw), scale)                                   # (H, T, 1, W)
    weights = masked_softmax(scores, valid[None, :, None, :])
    out = matmul(weights, vw)                                             # (H, T, 1, dh)
    return reshape(transpose(reshape(out, (heads, tq, dh)), (1, 0, 2)), (tq, d_model))
