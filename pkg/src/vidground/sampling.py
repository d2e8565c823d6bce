"""Mini-batch samplers over the set of valid (snippet, query) triplets.

Query-centric sampling draws a query uniformly, then a snippet uniformly among
those containing its moment. Video-centric sampling draws a video with
probability proportional to its number of valid snippets, a snippet with
probability proportional to its number of valid queries, then ``B_q`` of that
snippet's queries uniformly with replacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import enumerate_snippets, valid_queries_for


class SamplingError(ValueError):
    pass


@dataclass
class VideoEntry:
    video_id: str
    snippets: list                      # valid snippets only
    queries: list                       # per valid snippet: list of QueryTokens

    @property
    def n_valid(self):
        return len(self.snippets)


@dataclass
class SamplingIndex:
    videos: list                        # VideoEntry with n_valid >= 1
    query_snippets: dict                # query_id -> list of (video_pos, snippet_pos)
    queries: list                       # every query with >= 1 covering snippet
    all_counts: dict = field(default_factory=dict)  # video_id -> M_+ incl. zero

    @property
    def n_triplets(self):
        return sum(len(qs) for v in self.videos for qs in v.queries)

    def triplets(self):
        for v in self.videos:
            for snip, qs in zip(v.snippets, v.queries):
                for q in qs:
                    yield snip, q

    def video_probabilities(self):
        m = np.array([v.n_valid for v in self.videos], dtype=float)
        return m / m.sum()

    def snippet_probabilities(self, video_pos):
        n = np.array([len(qs) for qs in self.videos[video_pos].queries], dtype=float)
        return n / n.sum()


@dataclass
class Group:
    snippet: object
    queries: list

    def __len__(self):
        return len(self.queries)


@dataclass
class Batch:
    groups: list

    @property
    def size(self):
        return sum(len(g) for g in self.groups)

    def triplets(self):
        for g in self.groups:
            for q in g.queries:
                yield g.snippet, q


def build_index(corpus, T_w, stride=None):
    videos, query_snippets, all_counts = [], {}, {}
    for video in corpus.videos:
        snippets, per_snip = [], []
        for snip in enumerate_snippets(video, T_w, stride):
            qs = valid_queries_for(snip, corpus)
            if qs:
                snippets.append(snip)
                per_snip.append(qs)
        all_counts[video.video_id] = len(snippets)
        if not snippets:
            continue
        vpos = len(videos)
        videos.append(VideoEntry(video.video_id, snippets, per_snip))
        for spos, qs in enumerate(per_snip):
            for q in qs:
                query_snippets.setdefault(q.query_id, []).append((vpos, spos))
    if not videos:
        raise SamplingError("corpus has no valid (snippet, query) triplet")
    by_id = {q.query_id: q for q in corpus.queries}
    queries = [by_id[qid] for qid in query_snippets]
    return SamplingIndex(videos, query_snippets, queries, all_counts)


def sample_query_centric(index, batch_size, rng):
    if batch_size < 1:
        raise SamplingError(f"batch size must be >= 1, got {batch_size}")
    groups = []
    for _ in range(batch_size):
        q = index.queries[int(rng.integers(len(index.queries)))]
        covering = index.query_snippets[q.query_id]
        vpos, spos = covering[int(rng.integers(len(covering)))]
        groups.append(Group(index.videos[vpos].snippets[spos], [q]))
    return Batch(groups)


def sample_video_centric(index, batch_size, queries_per_snippet, rng):
    bq = int(queries_per_snippet)
    if bq < 1 or batch_size < 1 or batch_size % bq:
        raise SamplingError(f"B_q={queries_per_snippet} must divide batch size {batch_size}")
    p_video = index.video_probabilities()
    groups = []
    for _ in range(batch_size // bq):
        vpos = int(rng.choice(len(index.videos), p=p_video))
        entry = index.videos[vpos]
        spos = int(rng.choice(entry.n_valid, p=index.snippet_probabilities(vpos)))
        pool = entry.queries[spos]
        picks = rng.integers(len(pool), size=bq)
        groups.append(Group(entry.snippets[spos], [pool[int(i)] for i in picks]))
    return Batch(groups)


def make_sampler(kind, index, batch_size, queries_per_snippet=1):
    """Return ``rng -> Batch`` for ``kind`` in {'video', 'query'}."""
    if kind == "query":
        return lambda rng: sample_query_centric(index, batch_size, rng)
    if kind == "video":
        if batch_size % queries_per_snippet:
            raise SamplingError(f"B_q={queries_per_snippet} must divide batch size {batch_size}")
        return lambda rng: sample_video_centric(index, batch_size, queries_per_snippet, rng)
    raise SamplingError(f"unknown sampler {kind!r}; use 'video' or 'query'")
