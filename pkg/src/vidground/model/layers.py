"""Parameter containers and the transformer building blocks."""

from __future__ import annotations

import numpy as np

from ..numerics import ops
from ..numerics.tensor import parameter


def trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) truncated at two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class Module:
    """Tree of named parameters; attributes holding Tensors/Modules are children."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {p.shape}")
            p.data[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))


def _walk(value, name):
    from ..numerics.tensor import Tensor

    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True):
        self.weight = parameter(trunc_normal(rng, (d_in, d_out)))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def __call__(self, x):
        return ops.layernorm(x, self.gain, self.bias)


class Conv1d(Module):
    def __init__(self, rng, c_in, c_out, kernel_size=3, stride=1, bias=True):
        self.weight = parameter(trunc_normal(rng, (kernel_size, c_in, c_out)))
        self.bias = parameter(np.zeros(c_out)) if bias else None
        self.stride = stride

    def __call__(self, x):
        return ops.conv1d(x, self.weight, self.bias, self.stride)


class DepthwiseDownsample(Module):
    """Stride-2 depthwise convolution (kernel 3) between pyramid levels.

    Initialised as a [0, 1, 0] tap so that, untrained, level l+1 is the
    even-indexed subsequence of level l.
    """

    def __init__(self, dim, stride=2):
        w = np.zeros((3, dim))
        w[1] = 1.0
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(dim))
        self.stride = stride

    def __call__(self, x):
        return ops.depthwise_conv1d(x, self.weight, self.bias, self.stride)


class MLP(Module):
    def __init__(self, rng, dim, hidden, d_out=None):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim if d_out is None else d_out)

    def __call__(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Projections around :func:`ops.attention`.

    ``d_out`` defaults to the model dim; the affine fusion asks for twice that.
    """

    def __init__(self, rng, dim, heads, d_kv=None, d_out=None):
        d_kv = dim if d_kv is None else d_kv
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, d_kv, dim)
        self.v = Linear(rng, d_kv, dim)
        self.out = Linear(rng, dim, dim if d_out is None else d_out)
        self.heads = heads

    def __call__(self, x, context=None, mask=None, window=None):
        context = x if context is None else context
        y = ops.attention(self.q(x), self.k(context), self.v(context),
                          heads=self.heads, mask=mask, window=window)
        return self.out(y)


class TransformerBlock(Module):
    """Pre-LN self-attention block, optionally with a local attention window."""

    def __init__(self, rng, dim, heads, mlp_ratio=2, window=None):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(rng, dim, mlp_ratio * dim)
        self.window = window

    def __call__(self, x, mask=None):
        x = x + self.attn(self.ln1(x), mask=mask, window=self.window)
        return x + self.mlp(self.ln2(x))
