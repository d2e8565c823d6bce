"""Center-sampling label assignment on the feature pyramid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class LabelAssignment:
    positive: list              # per level: bool array (T_l,)
    targets: list               # per level: (T_l, 2) normalised (d_start, d_end); zero at negatives
    level: int                  # 1-based level holding the positives
    moment: tuple               # (start, end) in snippet-local steps

    @property
    def count(self):
        return int(sum(int(p.sum()) for p in self.positive))


def select_level(length, levels, base=8.0):
    """Doubling length buckets: [0, base] -> 1, (base, 2 base] -> 2, ..., last open."""
    if length <= base:
        return 1
    return int(min(levels, 1 + math.ceil(math.log2(length / base))))


def positive_steps(moment, level, n_steps, radius):
    """Steps t of ``level`` whose position lies in the moment and near its center."""
    s, e = moment
    stride = 2 ** (level - 1)
    center = 0.5 * (s + e)
    pos = stride * np.arange(n_steps, dtype=np.float64)
    mask = (np.abs(pos - center) <= radius * stride) & (pos >= s) & (pos <= e)
    if not mask.any():
        # moment falls between grid points: use the step nearest its center
        mask[int(np.clip(np.floor(center / stride + 0.5), 0, n_steps - 1))] = True
    return mask


def assign_labels(snippet, target, pyramid_config, cfg):
    """Positive steps and regression targets for one query in one snippet.

    Targets follow the decode rule ``start = 2**(l-1) * (t - d_s)``,
    ``end = 2**(l-1) * (t + d_e)``.
    """
    s = float(target.start) - snippet.offset
    e = float(target.end) - snippet.offset
    lengths = pyramid_config.level_lengths(snippet.length)
    level = select_level(e - s, len(lengths), cfg.regression_base)
    positive, targets = [], []
    for l, n in enumerate(lengths, start=1):
        tgt = np.zeros((n, 2))
        if l == level:
            mask = positive_steps((s, e), l, n, cfg.center_radius)
            stride = float(2 ** (l - 1))
            pos = stride * np.flatnonzero(mask)
            tgt[mask, 0] = (pos - s) / stride
            tgt[mask, 1] = (e - pos) / stride
        else:
            mask = np.zeros(n, dtype=bool)
        positive.append(mask)
        targets.append(tgt)
    return LabelAssignment(positive, targets, level, (s, e))


def decode_targets(assignment):
    """Invert the assignment at every positive step: list of (start, end)."""
    out = []
    for l, (mask, tgt) in enumerate(zip(assignment.positive, assignment.targets), start=1):
        stride = float(2 ** (l - 1))
        for t in np.flatnonzero(mask):
            out.append((stride * (t - tgt[t, 0]), stride * (t + tgt[t, 1])))
    return out
