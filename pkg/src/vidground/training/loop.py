"""Training loop over either sampler, sharing one video encoding per group."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass

import numpy as np

from ..datamodel import snippet_features
from ..model import GroundingModel, ModelConfig
from ..numerics.trace import trace_macs
from ..sampling import SamplingError, build_index, make_sampler
from .labels import assign_labels
from .losses import grounding_loss
from .optim import EMA, AdamW, clip_grad_norm, warmup_cosine

LOG_COLUMNS = ("step", "epoch", "loss", "cls_loss", "reg_loss",
               "macs_encoder", "macs_per_query", "wall_ms")


class TrainingDiverged(RuntimeError):
    def __init__(self, step, value):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    lambda_reg: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    center_radius: float = 1.5
    regression_base: float = 8.0
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.05
    ema_momentum: float = 0.999
    epochs: int = 10
    batch_size: int = 8
    queries_per_snippet: int = 4
    sampler: str = "video"
    T_w: int = 128
    stride: int = None
    warmup_frac: float = 0.05
    clip_norm: float = 1.0
    steps_per_epoch: int = None
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self):
        if not self.lambda_reg > 0:
            raise ValueError(f"lambda_reg must be > 0, got {self.lambda_reg}")
        if self.focal_gamma < 0:
            raise ValueError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0.0 < self.ema_momentum < 1.0:
            raise ValueError(f"ema_momentum must lie in (0, 1), got {self.ema_momentum}")
        if self.sampler not in ("video", "query"):
            raise SamplingError(f"unknown sampler {self.sampler!r}; use 'video' or 'query'")
        bq = self.group_size
        if self.batch_size < 1 or self.batch_size % bq:
            raise SamplingError(f"B_q={bq} must divide batch size {self.batch_size}")
        return self

    @property
    def group_size(self):
        return self.queries_per_snippet if self.sampler == "video" else 1

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class StepResult:
    loss: object                # Tensor, mean over the batch's triplets
    cls_loss: float
    reg_loss: float
    macs_encoder: int
    macs_query: int
    n_triplets: int


class LabelCache:
    def __init__(self, model_cfg, train_cfg):
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self._cache = {}

    def __call__(self, snippet, query):
        key = (snippet, query.query_id)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = assign_labels(snippet, query.target, self.model_cfg, self.train_cfg)
        return hit


def batch_loss(model, corpus, batch, train_cfg, labels=None, share_encoding=True):
    """Mean loss over the batch's triplets with MAC accounting.

    With ``share_encoding`` each group's snippet is encoded once and the
    pyramid reused by all of its queries; otherwise every triplet re-encodes.
    Early-fusion models always run the full forward per triplet.
    """
    labels = labels or LabelCache(model.config, train_cfg)
    late = model.config.placement == "late"
    total = None
    cls_sum = reg_sum = 0.0
    n = 0
    with trace_macs() as tr:
        for group in batch.groups:
            feats = snippet_features(corpus, group.snippet)
            shared = model.encode_video(feats) if (late and share_encoding) else None
            for q in group.queries:
                if not late:
                    out = model.forward_early(feats, q.tokens)
                else:
                    pyr = shared if shared is not None else model.encode_video(feats)
                    out = model.heads(model.fuse(pyr, model.encode_text(q.tokens)))
                terms = grounding_loss(out, labels(group.snippet, q), train_cfg)
                total = terms.total if total is None else total + terms.total
                cls_sum += float(terms.cls.data)
                reg_sum += float(terms.reg.data)
                n += 1
    enc = tr.scope_total("video")
    return StepResult(total * (1.0 / n), cls_sum / n, reg_sum / n, enc, tr.total - enc, n)


@dataclass
class TrainResult:
    model: GroundingModel
    ema_state: dict
    history: list
    config: TrainConfig

    def ema_model(self):
        m = GroundingModel(self.model.config)
        m.load_state_dict(self.ema_state)
        return m


def train(corpus, model_cfg, train_cfg, rng=None, log_path=None, model=None, progress=None):
    """Optimise a fresh model (or ``model``) on ``corpus``; returns a :class:`TrainResult`."""
    if not isinstance(model_cfg, ModelConfig):
        model_cfg = ModelConfig(**model_cfg)
    train_cfg.validate()
    rng = np.random.default_rng(train_cfg.seed) if rng is None else rng
    index = build_index(corpus, train_cfg.T_w, train_cfg.stride)
    sampler = make_sampler(train_cfg.sampler, index, train_cfg.batch_size, train_cfg.group_size)
    model = GroundingModel(model_cfg) if model is None else model
    opt = AdamW(model.named_parameters(), lr=train_cfg.lr, betas=train_cfg.betas,
                weight_decay=train_cfg.weight_decay)
    ema = EMA(model, train_cfg.ema_momentum)
    labels = LabelCache(model.config, train_cfg)
    steps_per_epoch = train_cfg.steps_per_epoch or max(1, math.ceil(index.n_triplets / train_cfg.batch_size))
    total_steps = steps_per_epoch * train_cfg.epochs
    params = model.parameters()
    history = []
    writer, fh = None, None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
    try:
        step = 0
        for epoch in range(train_cfg.epochs):
            for _ in range(steps_per_epoch):
                t0 = time.perf_counter()
                batch = sampler(rng)
                opt.zero_grad()
                res = batch_loss(model, corpus, batch, train_cfg, labels)
                value = float(res.loss.data)
                if not math.isfinite(value):
                    raise TrainingDiverged(step, value)
                res.loss.backward()
                clip_grad_norm(params, train_cfg.clip_norm)
                opt.step(warmup_cosine(step, total_steps, train_cfg.lr, train_cfg.warmup_frac))
                ema.update(model)
                row = {"step": step, "epoch": epoch, "loss": value,
                       "cls_loss": res.cls_loss, "reg_loss": res.reg_loss,
                       "macs_encoder": res.macs_encoder,
                       "macs_per_query": res.macs_encoder / res.n_triplets,
                       "wall_ms": 1000.0 * (time.perf_counter() - t0)}
                history.append(row)
                if writer is not None:
                    writer.writerow(row)
                step += 1
            if progress is not None:
                progress(epoch, history)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(model, ema.state, history, train_cfg)


def epoch_losses(history):
    by_epoch = {}
    for row in history:
        by_epoch.setdefault(row["epoch"], []).append(row["loss"])
    return [float(np.mean(v)) for _, v in sorted(by_epoch.items())]
