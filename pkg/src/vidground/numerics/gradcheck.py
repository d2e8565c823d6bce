"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np

from .tensor import no_grad


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def numerical_grad(fn, tensors, eps=1e-5):
    """d fn() / d t for every ``t`` in ``tensors`` by central differences.

    ``fn`` takes no arguments and returns a scalar Tensor; it is re-evaluated
    after perturbing ``t.data`` in place.
    """
    grads = []
    with no_grad():
        for t in tensors:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(fn().data)
                flat[i] = orig - eps
                fm = float(fn().data)
                flat[i] = orig
                gflat[i] = (fp - fm) / (2.0 * eps)
            grads.append(g)
    return grads


def analytic_grad(fn, tensors):
    for t in tensors:
        t.grad = None
    out = fn()
    out.backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def check_gradients(fn, tensors, eps=1e-5):
    """Largest relative error between backprop and finite differences."""
    ana = analytic_grad(fn, tensors)
    num = numerical_grad(fn, tensors, eps)
    return max(relative_error(a, n) for a, n in zip(ana, num))


def check_directional(fn, tensors, rng, n_directions=3, eps=1e-5):
    """Compare <grad, v> against a central difference along random unit v.

    Scales to models with many parameters; one pair of forward passes per
    direction instead of per coordinate.
    """
    ana = analytic_grad(fn, tensors)
    worst = 0.0
    with no_grad():
        for _ in range(n_directions):
            dirs = [rng.standard_normal(t.shape) for t in tensors]
            norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
            dirs = [d / norm for d in dirs]
            predicted = sum(float((a * d).sum()) for a, d in zip(ana, dirs))
            origs = [t.data.copy() for t in tensors]
            for t, o, d in zip(tensors, origs, dirs):
                t.data[...] = o + eps * d
            fp = float(fn().data)
            for t, o, d in zip(tensors, origs, dirs):
                t.data[...] = o - eps * d
            fm = float(fn().data)
            for t, o in zip(tensors, origs):
                t.data[...] = o
            measured = (fp - fm) / (2.0 * eps)
            worst = max(worst, relative_error([predicted], [measured]))
    return worst


def check_sampled(fn, tensors, rng, per_tensor=3, eps=1e-5):
    """Finite differences on ``per_tensor`` random coordinates of every tensor.

    Returns the norm-wise relative error over all sampled coordinates.
    """
    ana = analytic_grad(fn, tensors)
    got, want = [], []
    with no_grad():
        for t, a in zip(tensors, ana):
            flat = t.data.reshape(-1)
            picks = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(fn().data)
                flat[i] = orig - eps
                fm = float(fn().data)
                flat[i] = orig
                want.append((fp - fm) / (2.0 * eps))
                got.append(a.reshape(-1)[i])
    return relative_error(got, want)
