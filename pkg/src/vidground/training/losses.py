"""Focal classification loss and 1D Distance-IoU regression loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import ops
from ..numerics.tensor import Tensor


@dataclass
class LossTerms:
    total: Tensor
    cls: Tensor
    reg: Tensor
    count: int


def focal_loss(logits, labels, gamma=2.0, alpha=0.25):
    """Summed sigmoid focal loss computed from logits."""
    y = np.asarray(labels, dtype=np.float64)
    p = ops.sigmoid(logits)
    ce = ops.softplus(logits) - logits * y
    alpha_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    loss = ce * alpha_t
    if gamma:
        one_minus_pt = p + (1.0 - 2.0 * p) * y
        loss = loss * ops.power(one_minus_pt, gamma)
    return ops.sum(loss)


def diou_loss_1d(pred, target, min_extent=1e-12):
    """Summed DIoU loss between intervals given as distances to a reference point.

    ``pred`` (Tensor) and ``target`` (array) are ``(n, 2)``: (distance to start,
    distance to end). Per pair: ``1 - IoU + (center gap)^2 / (enclosing length)^2``.
    """
    target = np.asarray(target, dtype=np.float64)
    ds, de = pred[:, 0], pred[:, 1]
    ts, te = target[:, 0], target[:, 1]
    inter = ops.relu(ops.minimum(de, te) + ops.minimum(ds, ts))
    union = ops.maximum(de + ds + (te + ts) - inter, min_extent)
    iou = inter / union
    enclose = ops.maximum(ops.maximum(de, te) + ops.maximum(ds, ts), min_extent)
    gap = 0.5 * ((de - ds) - (te - ts))
    return ops.sum(1.0 - iou + gap * gap / (enclose * enclose))


def grounding_loss(outputs, assignment, cfg):
    """Both loss terms for one (snippet, query) pair, divided by the positive count."""
    logits = ops.concat(outputs.logits, axis=0)
    labels = np.concatenate(assignment.positive).astype(np.float64)
    cls = focal_loss(logits, labels, cfg.focal_gamma, cfg.focal_alpha)
    preds, targets = [], []
    for off, mask, tgt in zip(outputs.offsets, assignment.positive, assignment.targets):
        if mask.any():
            idx = np.flatnonzero(mask)
            preds.append(ops.getitem(off, idx))
            targets.append(tgt[idx])
    if preds:
        pred = preds[0] if len(preds) == 1 else ops.concat(preds, axis=0)
        reg = diou_loss_1d(pred, np.concatenate(targets))
    else:
        reg = Tensor(0.0)
    count = assignment.count
    norm = 1.0 / max(count, 1)
    total = (cls + reg * cfg.lambda_reg) * norm
    return LossTerms(total, cls * norm, reg * norm, count)
