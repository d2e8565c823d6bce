"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numbers

import numpy as np

from .datamodel import Corpus, CorpusError


def check_corpus(corpus, *, require_queries=True, D_v=None, D_t=None):
    """Return ``corpus`` after checking its type, content and feature widths."""
    if not isinstance(corpus, Corpus):
        raise TypeError(f"expected a Corpus, got {type(corpus).__name__}")
    if not corpus.videos:
        raise CorpusError("corpus has no videos")
    if require_queries and not corpus.queries:
        raise CorpusError("corpus has no queries")
    if D_v is not None and corpus.D_v != D_v:
        raise CorpusError(f"video features have width {corpus.D_v}, model expects {D_v}")
    if D_t is not None and corpus.queries and corpus.D_t != D_t:
        raise CorpusError(f"query tokens have width {corpus.D_t}, model expects {D_t}")
    for v in corpus.videos:
        if not np.all(np.isfinite(v.features)):
            raise CorpusError(f"video {v.video_id!r} has non-finite features")
    return corpus


def check_positive_int(name, value, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive_float(name, value):
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_choice(name, value, choices):
    if value not in choices:
        raise ValueError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value


def check_thresholds(values):
    """Sorted unique tIoU thresholds in (0, 1]."""
    out = sorted({float(v) for v in values})
    if not out or out[0] <= 0 or out[-1] > 1:
        raise ValueError(f"tIoU thresholds must lie in (0, 1], got {values!r}")
    return tuple(out)


def check_ks(values):
    out = sorted({int(v) for v in values})
    if not out or out[0] < 1:
        raise ValueError(f"k values must be positive integers, got {values!r}")
    return tuple(out)
