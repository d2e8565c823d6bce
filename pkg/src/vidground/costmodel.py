"""Analytical early-vs-late fusion cost ratios and their MAC-trace verification.

Costs are in multiply-accumulates. ``C_g`` is one snippet's video encoding,
``C_h`` one query's text encoding and ``C_F`` fusion plus heads for one
(snippet, query) pair. An early-fusion model is charged ``C_F + C_g + C_h``
per pair.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Corpus, FeatureSequence, MomentInterval, QueryTokens, Snippet
from .inference import InferenceConfig, build_cache, ground_query, ground_query_uncached
from .model import GroundingModel, ModelConfig
from .numerics.tensor import no_grad
from .numerics.trace import trace_macs
from .sampling import Batch, Group

CSV_COLUMNS = ("mode", "M", "N", "B_q", "T_w", "macs_total", "macs_encoder", "macs_text",
               "macs_fuse", "ratio_measured", "ratio_predicted")


class CostDomainError(ZeroDivisionError):
    pass


@dataclass
class CostParams:
    C_g: float
    C_h: float
    C_F: float
    M: int = 1
    N: int = 1
    B_q: int = 1
    parameters: dict = field(default=None, repr=False)

    def __post_init__(self):
        if min(self.C_g, self.C_h, self.C_F) < 0:
            raise ValueError("costs must be non-negative")

    @property
    def alpha(self):
        enc = self.C_g + self.C_h
        return self.C_F / enc if enc > 0 else math.inf

    @property
    def encoder_share(self):
        """C_g / (C_g + C_h)."""
        enc = self.C_g + self.C_h
        return self.C_g / enc if enc > 0 else math.nan

    def breakdown(self):
        """Percent of one (snippet, query) forward spent in each component."""
        total = self.C_g + self.C_h + self.C_F
        return {"video": 100.0 * self.C_g / total, "text": 100.0 * self.C_h / total,
                "fusion_heads": 100.0 * self.C_F / total}

    def replace(self, **changes):
        d = {k: getattr(self, k) for k in ("C_g", "C_h", "C_F", "M", "N", "B_q", "parameters")}
        d.update(changes)
        return CostParams(**d)


def r_inf_exact(p):
    """Early-fusion over late-fusion inference cost for M snippets and N queries."""
    num = p.M * p.N * (p.C_F + p.C_g + p.C_h)
    den = p.M * p.N * p.C_F + p.M * p.C_g + p.N * p.C_h
    if den <= 0:
        raise CostDomainError("late-fusion cost is zero; ratio undefined")
    return num / den


def r_train_exact(p):
    """Query-centric over video-centric training cost per mini-batch with B_q queries per snippet."""
    num = p.B_q * (p.C_F + p.C_g + p.C_h)
    den = p.C_g + p.B_q * (p.C_h + p.C_F)
    if den <= 0:
        raise CostDomainError("video-centric cost is zero; ratio undefined")
    return num / den


def _approx(alpha, n):
    if alpha < 0 or n <= 0:
        raise CostDomainError(f"need alpha >= 0 and a positive count, got alpha={alpha}, n={n}")
    if math.isinf(n):
        if alpha == 0:
            raise CostDomainError("alpha = 0 with an infinite count diverges")
        return 1.0 + 1.0 / alpha
    return (1.0 + alpha) / (1.0 / n + alpha)


def r_inf_approx(alpha, N):
    """(1 + alpha) / (1/N + alpha): N as alpha -> 0, 1 + 1/alpha as N -> inf."""
    return _approx(alpha, N)


def r_train_approx(alpha, B_q):
    return _approx(alpha, B_q)


# -- traced measurements -------------------------------------------------------------

def _as_config(model_cfg):
    if isinstance(model_cfg, GroundingModel):
        return model_cfg.config, model_cfg
    cfg = model_cfg if isinstance(model_cfg, ModelConfig) else ModelConfig(**model_cfg)
    return cfg, None


def measure_components(model_cfg, T_w, K, seed=0):
    """Trace one snippet of length T_w and one K-token query through each component."""
    cfg, model = _as_config(model_cfg)
    if model is None:
        model = GroundingModel(cfg.replace(placement="late") if cfg.placement != "late" else cfg)
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((T_w, cfg.D_v))
    tokens = rng.standard_normal((K, cfg.D_t))
    with no_grad():
        with trace_macs() as tg:
            pyr = model.encode_video(feats)
        with trace_macs() as th:
            emb = model.encode_text(tokens)
        with trace_macs() as tf:
            model.heads(model.fuse(pyr, emb))
    return CostParams(tg.total, th.total, tf.total, parameters=model.parameter_breakdown())


def early_fusion_macs(model_cfg, T_w, K, seed=0):
    """MACs of one (snippet, query) forward of the fuse-before-pyramid model."""
    cfg, _ = _as_config(model_cfg)
    model = GroundingModel(cfg.replace(placement="early", fusion="xattn_affine"))
    rng = np.random.default_rng(seed)
    with no_grad(), trace_macs() as tr:
        model.forward_early(rng.standard_normal((T_w, cfg.D_v)), rng.standard_normal((K, cfg.D_t)))
    return tr.total


def _bench_inputs(corpus, cfg, video_length, n_queries, K):
    """One video of ``video_length`` steps and ``n_queries`` K-token queries from ``corpus``."""
    src = corpus.videos[0].features
    reps = -(-video_length // src.shape[0])
    feats = np.tile(src, (reps, 1))[:video_length]
    pool = [q.tokens for q in corpus.queries] or [np.zeros((K, cfg.D_t))]
    queries = []
    for j in range(n_queries):
        tok = pool[j % len(pool)]
        tok = np.tile(tok, (-(-K // tok.shape[0]), 1))[:K]
        queries.append(QueryTokens(f"bench_q{j:04d}", "bench", tok,
                                   MomentInterval(0.0, min(8.0, float(video_length)))))
    return Corpus([FeatureSequence("bench", feats)], queries, "bench")


def measure_inference(model, bench, inf_cfg):
    """MAC totals of cached and uncached grounding of every bench query."""
    with trace_macs() as cached:
        cache = build_cache(model, bench, inf_cfg)
        for q in bench.queries:
            ground_query(model, cache, q, inf_cfg)
    with trace_macs() as uncached:
        for q in bench.queries:
            ground_query_uncached(model, bench, q, inf_cfg)
    M = len(cache.get("bench"))
    return cached, uncached, M


def measure_training_step(model, bench, B_q, groups=1):
    """Forward MACs of one batch under video-centric (B_q per snippet) and query-centric grouping."""
    from .training import TrainConfig, batch_loss

    T_w = bench.videos[0].T
    snip = Snippet("bench", 0, T_w)
    qs = bench.queries
    vc = Batch([Group(snip, [qs[(g * B_q + j) % len(qs)] for j in range(B_q)]) for g in range(groups)])
    qc = Batch([Group(snip, [q]) for g in vc.groups for q in g.queries])
    tcfg = TrainConfig(T_w=T_w, batch_size=B_q * groups, queries_per_snippet=B_q)
    res_v = batch_loss(model, bench, vc, tcfg)
    res_q = batch_loss(model, bench, qc, tcfg)
    return res_v, res_q


@dataclass
class CostReport:
    rows: list
    components: dict
    breakdown: dict
    early_pair_macs: dict

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            w.writerows(self.rows)

    def max_relative_gap(self, mode=None):
        gaps = [abs(r["ratio_measured"] - r["ratio_predicted"]) / r["ratio_predicted"]
                for r in self.rows if mode is None or r["mode"] == mode]
        return max(gaps) if gaps else 0.0


def verify_against_runtime(corpus, model_cfg, Ns=(1, 4, 16, 64), B_qs=(1, 2, 4, 8),
                           T_ws=(64,), K=8, modes=("inference", "train", "alpha0"),
                           video_snippets=2, seed=0):
    """Measured MAC ratios next to the closed forms, swept over N, B_q and T_w.

    Inference bench videos are ``video_snippets * T_w`` steps long and are cut
    at the inference stride (T_w / 2).
    """
    cfg, model = _as_config(model_cfg)
    model = model or GroundingModel(cfg)
    rows, components, early = [], {}, {}
    for T_w in T_ws:
        comp = measure_components(model, T_w, K, seed)
        components[T_w] = comp
        early[T_w] = early_fusion_macs(model.config, T_w, K, seed)
        inf_cfg = InferenceConfig(T_w=T_w)
        if "inference" in modes:
            for N in Ns:
                bench = _bench_inputs(corpus, cfg, video_snippets * T_w, N, K)
                cached, uncached, M = measure_inference(model, bench, inf_cfg)
                pred = r_inf_exact(comp.replace(M=M, N=N))
                rows.append(_row("inference", M, N, 1, T_w, cached, uncached.total / cached.total, pred))
        if "train" in modes:
            bench = _bench_inputs(corpus, cfg, T_w, max(B_qs), K)
            for B_q in B_qs:
                res_v, res_q = measure_training_step(model, bench, B_q)
                tv = res_v.macs_encoder + res_v.macs_query
                tq = res_q.macs_encoder + res_q.macs_query
                pred = r_train_exact(comp.replace(B_q=B_q))
                rows.append({"mode": "train", "M": 1, "N": B_q, "B_q": B_q, "T_w": T_w,
                             "macs_total": tv, "macs_encoder": res_v.macs_encoder,
                             "macs_text": None, "macs_fuse": None,
                             "ratio_measured": tq / tv, "ratio_predicted": pred})
        if "alpha0" in modes:
            for N in Ns:
                M = video_snippets
                zero = comp.replace(C_F=0, C_h=0, M=M, N=N)
                early_total = M * N * zero.C_g
                late_total = M * zero.C_g
                rows.append({"mode": "alpha0", "M": M, "N": N, "B_q": 1, "T_w": T_w,
                             "macs_total": late_total, "macs_encoder": late_total,
                             "macs_text": 0, "macs_fuse": 0,
                             "ratio_measured": early_total / late_total,
                             "ratio_predicted": r_inf_exact(zero)})
    first = components[T_ws[0]]
    return CostReport(rows, components, first.breakdown(), early)


def _row(mode, M, N, B_q, T_w, trace, measured, predicted):
    return {"mode": mode, "M": M, "N": N, "B_q": B_q, "T_w": T_w,
            "macs_total": trace.total, "macs_encoder": trace.scope_total("video"),
            "macs_text": trace.scope_total("text"),
            "macs_fuse": trace.scope_total("fusion") + trace.scope_total("heads"),
            "ratio_measured": measured, "ratio_predicted": predicted}
