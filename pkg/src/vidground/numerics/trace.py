"""Multiply-accumulate accounting for forward passes.

Ops that do arithmetic proportional to a product of dimensions (matmul,
convolutions) report their MAC count to every active :class:`MacTrace` on the
current thread. Elementwise ops are free in this model.
"""

from __future__ import annotations

import contextlib
import threading
from collections import defaultdict
from dataclasses import dataclass, field

_local = threading.local()


def _stack():
    st = getattr(_local, "traces", None)
    if st is None:
        st = _local.traces = []
    return st


def _scopes():
    sc = getattr(_local, "scopes", None)
    if sc is None:
        sc = _local.scopes = []
    return sc


@dataclass
class OpRecord:
    op: str
    macs: int
    scope: str
    shapes: tuple


@dataclass
class MacTrace:
    records: list = field(default_factory=list)

    @property
    def total(self):
        return mac_count(self)

    def by_scope(self):
        out = defaultdict(int)
        for r in self.records:
            out[r.scope] += r.macs
        return dict(out)

    def scope_total(self, prefix):
        return sum(r.macs for r in self.records if r.scope == prefix or r.scope.startswith(prefix + "/"))


@contextlib.contextmanager
def trace_macs():
    """Record MACs of every op executed inside the block."""
    tr = MacTrace()
    st = _stack()
    st.append(tr)
    try:
        yield tr
    finally:
        st.remove(tr)


@contextlib.contextmanager
def scope(name):
    """Label ops recorded inside the block; nested scopes join with '/'."""
    sc = _scopes()
    sc.append(name)
    try:
        yield
    finally:
        sc.pop()


def record(op, macs, *shapes):
    st = getattr(_local, "traces", None)
    if not st:
        return
    rec = OpRecord(op, int(macs), "/".join(_scopes()), shapes)
    for tr in st:
        tr.records.append(rec)


def mac_count(trace):
    return sum(r.macs for r in trace.records)
