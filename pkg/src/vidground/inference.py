"""Video-centric inference, Soft-NMS and recall evaluation.

Each video's snippets are encoded once into pyramids held in a
:class:`PyramidCache`; every query then only pays for text encoding, fusion and
the heads. ``cached=False`` re-runs the full network for every
(snippet, query) pair and must give bitwise-identical predictions.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .datamodel import MomentInterval, enumerate_snippets, snippet_features
from .numerics.tensor import no_grad
from .numerics.trace import trace_macs

COVERAGE_BINS = (0.02, 0.04, 0.08, 0.16)
DURATION_BINS = (125.0, 250.0, 500.0, 750.0)
BIN_NAMES = ("XS", "S", "M", "L", "XL")


class CacheMiss(KeyError):
    pass


@dataclass(frozen=True)
class ScoredMoment:
    interval: MomentInterval
    score: float
    level: int = 1
    snippet_offset: int = 0

    @property
    def start(self):
        return self.interval.start

    @property
    def end(self):
        return self.interval.end

    def with_score(self, score):
        return ScoredMoment(self.interval, float(score), self.level, self.snippet_offset)


@dataclass
class InferenceConfig:
    T_w: int = 128
    stride: int = None               # default T_w // 2
    top_n: int = 100
    score_floor: float = 0.0
    nms_sigma: float = 0.9
    nms_floor: float = 1e-3
    k_max: int = 50
    ks: tuple = (1, 5)
    tious: tuple = (0.3, 0.5, 0.7)
    coverage_bins: tuple = COVERAGE_BINS
    duration_bins: tuple = DURATION_BINS

    @property
    def snippet_stride(self):
        return self.stride if self.stride else max(1, self.T_w // 2)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(self).items()}


# -- interval geometry ------------------------------------------------------------

def tiou(a, b):
    inter = min(a.end, b.end) - max(a.start, b.start)
    inter = max(inter, 0.0)
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union if union > 0 else 0.0


# -- decoding and suppression -----------------------------------------------------

def decode_moments(outputs, snippet, top_n=100, score_floor=0.0, video_length=None):
    """Top-scoring (t, l) candidates mapped to global moment intervals.

    Ranking is by score, ties broken by level then step.
    """
    scores, offsets = [], []
    levels, steps = [], []
    for l, (s, o) in enumerate(zip(outputs.scores, outputs.offsets), start=1):
        s = np.asarray(getattr(s, "data", s), dtype=np.float64)
        scores.append(s)
        offsets.append(np.asarray(getattr(o, "data", o), dtype=np.float64))
        levels.append(np.full(s.shape[0], l))
        steps.append(np.arange(s.shape[0]))
    score = np.concatenate(scores)
    off = np.concatenate(offsets)
    lev = np.concatenate(levels)
    step = np.concatenate(steps)
    keep = np.flatnonzero(score >= score_floor)
    order = keep[np.lexsort((step[keep], lev[keep], -score[keep]))][:top_n]
    hi = float(video_length) if video_length is not None else math.inf
    out = []
    for i in order:
        stride = float(2 ** (lev[i] - 1))
        s = stride * (step[i] - off[i, 0]) + snippet.offset
        e = stride * (step[i] + off[i, 1]) + snippet.offset
        s = min(max(s, 0.0), hi)
        e = min(max(e, s), hi)
        out.append(ScoredMoment(MomentInterval(s, e), float(score[i]), int(lev[i]), snippet.offset))
    return out


def soft_nms(moments, sigma=0.9, floor=1e-3, max_keep=None):
    """Gaussian Soft-NMS.

    Repeatedly keep the best remaining candidate (ties: earlier start, then
    input order) and multiply every other score by ``exp(-tiou**2 / sigma)``;
    candidates falling below ``floor`` are dropped.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    pool = [(m.score, m.start, i, m) for i, m in enumerate(moments) if m.score >= floor]
    kept = []
    while pool and (max_keep is None or len(kept) < max_keep):
        best = min(range(len(pool)), key=lambda j: (-pool[j][0], pool[j][1], pool[j][2]))
        score, _, _, m = pool.pop(best)
        kept.append(m.with_score(score))
        survivors = []
        for s, st, i, other in pool:
            s = s * math.exp(-tiou(m.interval, other.interval) ** 2 / sigma)
            if s >= floor:
                survivors.append((s, st, i, other))
        pool = survivors
    return kept


# -- grounding ----------------------------------------------------------------------

@dataclass
class PyramidCache:
    entries: dict = field(default_factory=dict)   # video_id -> list of (Snippet, Pyramid)
    lengths: dict = field(default_factory=dict)   # video_id -> T

    def add(self, video_id, T, snippet_pyramids):
        self.entries[video_id] = snippet_pyramids
        self.lengths[video_id] = T

    def get(self, video_id):
        try:
            return self.entries[video_id]
        except KeyError:
            raise CacheMiss(f"video {video_id!r} has no cached pyramids") from None


def inference_snippets(video, cfg):
    return enumerate_snippets(video, cfg.T_w, cfg.snippet_stride)


def build_cache(model, corpus, cfg, video_ids=None):
    cache = PyramidCache()
    with no_grad():
        for video in corpus.videos:
            if video_ids is not None and video.video_id not in video_ids:
                continue
            items = [(snip, model.encode_video(snippet_features(corpus, snip)))
                     for snip in inference_snippets(video, cfg)]
            cache.add(video.video_id, video.T, items)
    return cache


def _finalise(candidates, cfg):
    return soft_nms(candidates, cfg.nms_sigma, cfg.nms_floor, cfg.k_max)


def ground_query(model, cache, query, cfg):
    """Rank moments for ``query`` from the cached pyramids of its video."""
    items = cache.get(query.video_id)
    T = cache.lengths[query.video_id]
    candidates = []
    with no_grad():
        emb = model.encode_text(query.tokens)
        for snip, pyr in items:
            out = model.heads(model.fuse(pyr, emb))
            candidates.extend(decode_moments(out, snip, cfg.top_n, cfg.score_floor, T))
    return _finalise(candidates, cfg)


def ground_query_uncached(model, corpus, query, cfg):
    """Full network forward per (snippet, query) pair; no reuse of any encoding."""
    video = corpus.video(query.video_id)
    candidates = []
    with no_grad():
        for snip in inference_snippets(video, cfg):
            out = model.forward(snippet_features(corpus, snip), query.tokens)
            candidates.extend(decode_moments(out, snip, cfg.top_n, cfg.score_floor, video.T))
    return _finalise(candidates, cfg)


# -- metrics -------------------------------------------------------------------------

def _interval(m):
    return m.interval if isinstance(m, ScoredMoment) else m


def query_hits(predictions, target, ks, tious):
    """{(k, theta): bool} for one query's ranked predictions."""
    ious = [tiou(_interval(p), target) for p in predictions]
    out = {}
    for k in ks:
        best = max(ious[:k], default=0.0)
        for th in tious:
            out[(k, th)] = best >= th
    return out


def recall_table(predictions, queries, ks, tious):
    """Fraction of queries with a top-k prediction at tIoU >= theta."""
    if not queries:
        return {(k, th): 0.0 for k in ks for th in tious}
    counts = {(k, th): 0 for k in ks for th in tious}
    for q in queries:
        for key, hit in query_hits(predictions.get(q.query_id, []), q.target, ks, tious).items():
            counts[key] += int(hit)
    return {key: c / len(queries) for key, c in counts.items()}


def bin_index(value, edges):
    """Index of the half-open-on-the-left bin ``(edges[i-1], edges[i]]``."""
    for i, edge in enumerate(edges):
        if value <= edge:
            return i
    return len(edges)


@dataclass
class EvalReport:
    recall: dict
    bins: dict                      # (kind, name) -> {"n": int, "recall": {(k, th): value}}
    ks: tuple
    tious: tuple
    timing: dict
    macs: dict
    predictions: dict = field(default_factory=dict, repr=False)

    def value(self, k, th):
        return self.recall[(k, th)]

    def rows(self):
        rows = []
        n_all = sum(b["n"] for (kind, _), b in self.bins.items() if kind == "coverage")
        for k in self.ks:
            for th in self.tious:
                rows.append({"k": k, "tiou": th, "bin_kind": "all", "bin": "all",
                             "n_queries": n_all, "recall": self.recall[(k, th)]})
                for (kind, name), b in self.bins.items():
                    rows.append({"k": k, "tiou": th, "bin_kind": kind, "bin": name,
                                 "n_queries": b["n"], "recall": b["recall"][(k, th)]})
        return rows

    def to_dict(self):
        return {
            "ks": list(self.ks),
            "tious": list(self.tious),
            "recall": [{"k": k, "tiou": th, "recall": v} for (k, th), v in self.recall.items()],
            "bins": [{"kind": kind, "bin": name, "n_queries": b["n"],
                      "recall": [{"k": k, "tiou": th, "recall": v} for (k, th), v in b["recall"].items()]}
                     for (kind, name), b in self.bins.items()],
            "timing": self.timing,
            "macs": self.macs,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["k", "tiou", "bin_kind", "bin", "n_queries", "recall"])
            w.writeheader()
            w.writerows(self.rows())


def build_report(predictions, corpus, cfg, timing=None, macs=None):
    ks, tious = tuple(cfg.ks), tuple(cfg.tious)
    queries = list(corpus.queries)
    bins = {}
    groups = {("coverage", n): [] for n in BIN_NAMES}
    groups.update({("duration", n): [] for n in BIN_NAMES})
    for q in queries:
        video = corpus.video(q.video_id)
        cov = q.target.length / video.T
        groups[("coverage", BIN_NAMES[bin_index(cov, cfg.coverage_bins)])].append(q)
        groups[("duration", BIN_NAMES[bin_index(video.duration, cfg.duration_bins)])].append(q)
    for key, qs in groups.items():
        bins[key] = {"n": len(qs), "recall": recall_table(predictions, qs, ks, tious)}
    return EvalReport(recall_table(predictions, queries, ks, tious), bins, ks, tious,
                      timing or {}, macs or {}, predictions)


def evaluate(model, corpus, cfg=None, cached=True):
    """Ground every query of ``corpus`` and tabulate R@k at each tIoU threshold."""
    cfg = cfg or InferenceConfig()
    if not corpus.queries:
        raise ValueError("evaluate: corpus has no queries")
    cached = cached and model.config.placement == "late"
    predictions, per_query_ms = {}, []
    with trace_macs() as tr:
        t0 = time.perf_counter()
        cache = build_cache(model, corpus, cfg) if cached else None
        encode_ms = 1000.0 * (time.perf_counter() - t0)
        for q in corpus.queries:
            t1 = time.perf_counter()
            if cached:
                predictions[q.query_id] = ground_query(model, cache, q, cfg)
            else:
                predictions[q.query_id] = ground_query_uncached(model, corpus, q, cfg)
            per_query_ms.append(1000.0 * (time.perf_counter() - t1))
    n = len(corpus.queries)
    enc = tr.scope_total("video")
    per_query = tr.total - enc
    macs = {"total": tr.total, "encoder": enc, "text": tr.scope_total("text"),
            "fusion": tr.scope_total("fusion"), "heads": tr.scope_total("heads"),
            "per_query": per_query / n, "cached": bool(cached)}
    timing = {"encode_ms": encode_ms, "per_query_ms_mean": float(np.mean(per_query_ms)),
              "total_ms": encode_ms + float(np.sum(per_query_ms))}
    return build_report(predictions, corpus, cfg, timing, macs)


def ground_truth_predictions(corpus):
    return {q.query_id: [ScoredMoment(q.target, 1.0)] for q in corpus.queries}
