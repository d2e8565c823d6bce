"""AdamW, parameter EMA and the learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np


class AdamW:
    """Adam with decoupled weight decay; decay skips 1-D tensors (biases, norms, scales)."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05):
        self.params = list(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for (_, p), m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay and p.data.ndim > 1:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


def clip_grad_norm(params, max_norm):
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class EMA:
    """Exponential moving average of parameters.

    The effective momentum is ``min(momentum, (1 + n) / (10 + n))`` after n
    updates, so short runs are not dominated by the initial weights.
    """

    def __init__(self, model, momentum=0.999):
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"EMA momentum must lie in (0, 1), got {momentum}")
        self.momentum = momentum
        self.updates = 0
        self.state = model.state_dict()

    def update(self, model):
        decay = min(self.momentum, (1.0 + self.updates) / (10.0 + self.updates))
        self.updates += 1
        for name, p in model.named_parameters():
            avg = self.state[name]
            avg *= decay
            avg += (1.0 - decay) * p.data


def warmup_cosine(step, total_steps, base_lr, warmup_frac=0.05):
    """Linear warmup over ``warmup_frac`` of the run, then cosine decay to zero."""
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(progress, 1.0)))
