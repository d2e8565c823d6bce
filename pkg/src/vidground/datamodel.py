"""Grounding domain types, synthetic corpora and on-disk formats.

Layout on disk::

    <dir>/manifest.json     {"videos": [{"id", "path", "T", "D_v", ...}],
                             "queries_path", "D_t", "split"}
    <dir>/features/<id>.f32 raw little-endian float32, row-major T x D_v
    <dir>/queries.jsonl     {"query_id", "video_id", "tokens" | "tokens_path",
                             "start", "end"}

Feature values are held as float64 in memory. The synthetic generator draws
float32-representable values so that persistence is lossless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CorpusError(ValueError):
    """Malformed corpus, manifest record or generator configuration."""


@dataclass(frozen=True)
class MomentInterval:
    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start <= self.end):
            raise CorpusError(f"invalid moment ({self.start}, {self.end}): need 0 <= start <= end")

    @property
    def length(self):
        return self.end - self.start

    @property
    def center(self):
        return 0.5 * (self.start + self.end)

    def shifted(self, offset):
        return MomentInterval(self.start + offset, self.end + offset)


@dataclass(eq=False)
class FeatureSequence:
    video_id: str
    features: np.ndarray
    fps_equivalent: float = 1.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise CorpusError(f"video {self.video_id!r}: features must be a non-empty T x D_v matrix")
        if not np.all(np.isfinite(self.features)):
            raise CorpusError(f"video {self.video_id!r}: non-finite feature values")

    @property
    def T(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def duration(self):
        return self.T / self.fps_equivalent

    def __eq__(self, other):
        return (isinstance(other, FeatureSequence)
                and self.video_id == other.video_id
                and self.fps_equivalent == other.fps_equivalent
                and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes())


@dataclass(eq=False)
class QueryTokens:
    query_id: str
    video_id: str
    tokens: np.ndarray
    target: MomentInterval

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise CorpusError(f"query {self.query_id!r}: tokens must be a non-empty K x D_t matrix")
        if not np.all(np.isfinite(self.tokens)):
            raise CorpusError(f"query {self.query_id!r}: non-finite token values")

    @property
    def K(self):
        return self.tokens.shape[0]

    def __eq__(self, other):
        return (isinstance(other, QueryTokens)
                and (self.query_id, self.video_id, self.target)
                == (other.query_id, other.video_id, other.target)
                and self.tokens.shape == other.tokens.shape
                and self.tokens.tobytes() == other.tokens.tobytes())


@dataclass(frozen=True)
class Snippet:
    video_id: str
    offset: int
    length: int

    @property
    def end(self):
        return self.offset + self.length

    def contains(self, moment):
        return self.offset <= moment.start and moment.end <= self.end


@dataclass(eq=False)
class Corpus:
    videos: list
    queries: list
    split: str = "train"
    _by_id: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self._by_id = {}
        for v in self.videos:
            if v.video_id in self._by_id:
                raise CorpusError(f"duplicate video id {v.video_id!r}")
            self._by_id[v.video_id] = v
        for q in self.queries:
            video = self._by_id.get(q.video_id)
            if video is None:
                raise CorpusError(f"query {q.query_id!r} refers to unknown video {q.video_id!r}")
            if q.target.end > video.T:
                raise CorpusError(
                    f"query {q.query_id!r}: moment end {q.target.end} exceeds video length {video.T}")

    def video(self, video_id):
        return self._by_id[video_id]

    def queries_of(self, video_id):
        return [q for q in self.queries if q.video_id == video_id]

    @property
    def D_v(self):
        return self.videos[0].dim if self.videos else 0

    @property
    def D_t(self):
        return self.queries[0].tokens.shape[1] if self.queries else 0

    def __eq__(self, other):
        return (isinstance(other, Corpus) and self.split == other.split
                and self.videos == other.videos and self.queries == other.queries)

    def stats(self):
        """Video lengths, queries per video and moment coverage."""
        lengths = np.array([v.T for v in self.videos], dtype=float)
        per_video = np.array([len(self.queries_of(v.video_id)) for v in self.videos], dtype=float)
        coverage = np.array([q.target.length / self.video(q.video_id).T for q in self.queries])
        return {
            "n_videos": len(self.videos),
            "n_queries": len(self.queries),
            "video_length_mean": float(lengths.mean()) if lengths.size else 0.0,
            "video_length_min": float(lengths.min()) if lengths.size else 0.0,
            "video_length_max": float(lengths.max()) if lengths.size else 0.0,
            "queries_per_video_mean": float(per_video.mean()) if per_video.size else 0.0,
            "coverage_mean": float(coverage.mean()) if coverage.size else 0.0,
            "coverage_min": float(coverage.min()) if coverage.size else 0.0,
            "coverage_max": float(coverage.max()) if coverage.size else 0.0,
        }


# -- synthetic corpora ----------------------------------------------------

def synthetic_text_projection(seed, D_v, D_t):
    """The fixed event-to-token map used by :func:`generate_synthetic_corpus`."""
    rng = np.random.default_rng([int(seed), 0x7E47])
    return rng.standard_normal((D_v, D_t)) / np.sqrt(D_v)


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _check_range(name, rng_pair, low=0):
    lo, hi = rng_pair
    if lo < low or hi < lo:
        raise CorpusError(f"{name}: degenerate range {rng_pair}")
    return int(lo), int(hi)


def generate_synthetic_corpus(seed, n_videos, T_range=(64, 128), queries_per_video_range=(1, 4),
                              D_v=16, D_t=16, snr=4.0, *, K_range=(4, 8),
                              moment_length_range=(4, 32), fps_equivalent=1.0, split="train"):
    """Random videos with planted, text-describable events.

    Each query owns a random event vector ``u``. The video features are white
    noise of std ``1/snr`` plus ``u`` over the query's steps ``[s, e)``; each of
    the query's K tokens is ``u @ P`` plus fresh noise of std ``1/snr``, where
    ``P`` is :func:`synthetic_text_projection`. ``snr=np.inf`` removes noise.
    """
    if n_videos < 0:
        raise CorpusError("n_videos must be >= 0")
    if not snr > 0:
        raise CorpusError(f"snr must be > 0, got {snr}")
    t_lo, t_hi = _check_range("T_range", T_range, low=1)
    q_lo, q_hi = _check_range("queries_per_video_range", queries_per_video_range)
    k_lo, k_hi = _check_range("K_range", K_range, low=1)
    m_lo, m_hi = _check_range("moment_length_range", moment_length_range, low=1)
    if m_lo > t_hi:
        raise CorpusError("moment_length_range exceeds every admissible video length")

    rng = np.random.default_rng(int(seed))
    proj = synthetic_text_projection(seed, D_v, D_t)
    noise = 0.0 if np.isinf(snr) else 1.0 / snr
    videos, queries = [], []
    for vi in range(n_videos):
        T = int(rng.integers(max(t_lo, m_lo), t_hi + 1))
        vid = f"v{vi:04d}"
        feats = noise * rng.standard_normal((T, D_v))
        for qi in range(int(rng.integers(q_lo, q_hi + 1))):
            length = int(rng.integers(m_lo, min(m_hi, T) + 1))
            start = int(rng.integers(0, T - length + 1))
            u = rng.standard_normal(D_v)
            feats[start:start + length] += u
            K = int(rng.integers(k_lo, k_hi + 1))
            tokens = u @ proj + noise * rng.standard_normal((K, D_t))
            queries.append(QueryTokens(f"{vid}_q{qi:03d}", vid, _f32(tokens),
                                       MomentInterval(float(start), float(start + length))))
        videos.append(FeatureSequence(vid, _f32(feats), fps_equivalent))
    return Corpus(videos, queries, split)


# -- snippets -----------------------------------------------------------------

def enumerate_snippets(video, T_w, stride=None):
    """Windows of length T_w every ``stride`` steps; the last ends at T."""
    if T_w < 1:
        raise CorpusError(f"T_w must be >= 1, got {T_w}")
    stride = T_w if stride is None else int(stride)
    if not 1 <= stride <= T_w:
        raise CorpusError(f"stride must lie in [1, T_w={T_w}] so windows cover every step, got {stride}")
    T = video.T if isinstance(video, FeatureSequence) else int(video)
    vid = video.video_id if isinstance(video, FeatureSequence) else ""
    length = min(T_w, T)
    offsets, o = [], 0
    while True:
        if o + length >= T:
            last = T - length
            if not offsets or offsets[-1] != last:
                offsets.append(last)
            break
        offsets.append(o)
        o += stride
    return [Snippet(vid, off, length) for off in offsets]


def valid_queries_for(snippet, corpus):
    """Queries of the snippet's video whose moment lies fully inside it."""
    return [q for q in corpus.queries
            if q.video_id == snippet.video_id and snippet.contains(q.target)]


def snippet_features(corpus, snippet):
    return corpus.video(snippet.video_id).features[snippet.offset:snippet.end]


# -- persistence ----------------------------------------------------------------

def save_corpus(corpus, directory):
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    videos = []
    for v in corpus.videos:
        rel = f"features/{v.video_id}.f32"
        v.features.astype("<f4").tofile(directory / rel)
        videos.append({"id": v.video_id, "path": rel, "T": v.T, "D_v": v.dim,
                       "fps_equivalent": v.fps_equivalent})
    with open(directory / "queries.jsonl", "w") as fh:
        for q in corpus.queries:
            fh.write(json.dumps({"query_id": q.query_id, "video_id": q.video_id,
                                 "tokens": q.tokens.tolist(),
                                 "start": q.target.start, "end": q.target.end}) + "\n")
    manifest = {"videos": videos, "queries_path": "queries.jsonl",
                "D_t": corpus.D_t, "split": corpus.split}
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return directory / "manifest.json"


def load_corpus(manifest_path):
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise CorpusError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    videos = []
    for rec in manifest["videos"]:
        path = root / rec["path"]
        if not path.exists():
            raise CorpusError(f"video {rec['id']!r}: feature file missing: {path}")
        raw = np.fromfile(path, dtype="<f4")
        T, D_v = int(rec["T"]), int(rec["D_v"])
        if raw.size != T * D_v:
            raise CorpusError(
                f"video {rec['id']!r}: {raw.size} values on disk, manifest says T={T} x D_v={D_v}")
        feats = raw.astype(np.float64).reshape(T, D_v)
        if not np.all(np.isfinite(feats)):
            raise CorpusError(f"video {rec['id']!r}: non-finite feature values in {path}")
        videos.append(FeatureSequence(rec["id"], feats, float(rec.get("fps_equivalent", 1.0))))

    D_t = int(manifest["D_t"])
    qpath = root / manifest["queries_path"]
    if not qpath.exists():
        raise CorpusError(f"queries file missing: {qpath}")
    queries = []
    with open(qpath) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            qid = rec.get("query_id", f"line {lineno}")
            if "tokens" in rec:
                tokens = np.asarray(rec["tokens"], dtype=np.float64)
            else:
                tpath = root / rec["tokens_path"]
                if not tpath.exists():
                    raise CorpusError(f"query {qid!r}: token file missing: {tpath}")
                flat = np.fromfile(tpath, dtype="<f4").astype(np.float64)
                if flat.size % D_t:
                    raise CorpusError(f"query {qid!r}: {flat.size} token values not divisible by D_t={D_t}")
                tokens = flat.reshape(-1, D_t)
            if tokens.ndim != 2 or tokens.shape[1] != D_t:
                raise CorpusError(f"query {qid!r}: token matrix shape {tokens.shape} != (K, {D_t})")
            if not np.all(np.isfinite(tokens)):
                raise CorpusError(f"query {qid!r}: non-finite token values")
            queries.append(QueryTokens(qid, rec["video_id"], tokens,
                                       MomentInterval(float(rec["start"]), float(rec["end"]))))
    return Corpus(videos, queries, manifest.get("split", "train"))
