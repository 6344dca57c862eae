"""Staleness and session-guarantee measurement over a storage trace.

A read that starts at ``t`` and returns version ``v`` of a key misses every
write of that key with a larger version that was acknowledged before ``t``.
Its staleness is ``t`` minus the earliest such acknowledgement, i.e. how long
the value served had already been superseded; a read missing nothing has
staleness 0.  Versions compare within one key only.
"""

from __future__ import annotations

import bisect
import math
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass
from typing import Any

from ..runtime.storage import ReadRow, StorageTrace, WriteRow


@dataclass(frozen=True)
class StalenessSample:
    obj: str
    attribute: str
    mode: str
    read_ms: int
    write_ms: int | None  # ack time of the earliest missed write
    staleness_ms: int


def _newer(a: Any, b: Any) -> bool:
    """``a`` is a strictly later version than ``b`` (``None`` is the initial state)."""
    if a is None:
        return False
    return b is None or a > b


class _KeyIndex:
    """Writes of one key sorted by version, with a suffix minimum of ack times."""

    def __init__(self, writes: Iterable[WriteRow]):
        rows = sorted(writes, key=lambda w: (w.version, w.ack))
        self.versions = [w.version for w in rows]
        self.suffix_min = [0] * len(rows)
        best = math.inf
        for i in range(len(rows) - 1, -1, -1):
            best = min(best, rows[i].ack)
            self.suffix_min[i] = best

    def earliest_missed(self, version: Any) -> int | None:
        i = 0 if version is None else bisect.bisect_right(self.versions, version)
        return self.suffix_min[i] if i < len(self.versions) else None


def _split(key: str) -> tuple[str, str]:
    obj, _, attr = key.rpartition("/")
    return obj, attr


def staleness_samples(trace: StorageTrace) -> list[StalenessSample]:
    by_key: dict[str, list[WriteRow]] = defaultdict(list)
    for w in trace.writes:
        by_key[w.key].append(w)
    index = {k: _KeyIndex(ws) for k, ws in by_key.items()}
    out = []
    for r in trace.reads:
        idx = index.get(r.key)
        first = idx.earliest_missed(r.version) if idx is not None else None
        missed = first is not None and first < r.start
        obj, attr = _split(r.key)
        out.append(StalenessSample(obj, attr, r.mode, r.start, first if missed else None, r.start - first if missed else 0))
    return out


def brute_force_staleness(trace: StorageTrace) -> list[int]:
    """All-pairs reference for :func:`staleness_samples`, one value per read."""
    out = []
    for r in trace.reads:
        acks = [w.ack for w in trace.writes if w.key == r.key and w.ack < r.start and _newer(w.version, r.version)]
        out.append(r.start - min(acks) if acks else 0)
    return out


def summarize(samples: Iterable[StalenessSample]) -> dict[str, dict[str, float]]:
    """Per consistency mode: ``count``, ``max_ms`` and ``mean_ms``."""
    groups: dict[str, list[int]] = defaultdict(list)
    for s in samples:
        groups[s.mode].append(s.staleness_ms)
    return {
        mode: {"count": len(v), "max_ms": max(v), "mean_ms": round(sum(v) / len(v), 6)}
        for mode, v in sorted(groups.items())
    }


def measure_staleness(trace: StorageTrace) -> dict[str, dict[str, float]]:
    return summarize(staleness_samples(trace))


# -- checkers ------------------------------------------------------------------------


def check_strong_reads(trace: StorageTrace) -> list[str]:
    """Strong reads must see every write acknowledged before they began and
    must not see a write that began after they returned."""
    strong_writes = [w for w in trace.writes if w.mode == "strong"]
    by_version = {(w.key, w.version): w for w in strong_writes}
    reads = [r for r in trace.reads if r.mode == "strong"]
    sub = StorageTrace(strong_writes, reads)
    problems = []
    for r, s in zip(reads, staleness_samples(sub)):
        if s.staleness_ms:
            problems.append(f"{r.key}: read at {r.start} returned version {r.version}, missing a write acked at {s.write_ms}")
        w = by_version.get((r.key, r.version))
        if w is not None and w.start > r.end:
            problems.append(f"{r.key}: read ending at {r.end} returned version {r.version} written at {w.start}")
    return problems


def check_ryw(trace: StorageTrace) -> list[str]:
    """Every session read must reflect the session's own acknowledged writes."""
    groups: dict[tuple[int, str], list[WriteRow]] = defaultdict(list)
    for w in trace.writes:
        if w.session is not None:
            groups[(w.session, w.key)].append(w)
    # per (session, key): ack times ascending and the newest version acked so far
    own: dict[tuple[int, str], tuple[list[int], list[Any]]] = {}
    for k, ws in groups.items():
        ws.sort(key=lambda w: w.ack)
        newest, best = [], None
        for w in ws:
            if _newer(w.version, best):
                best = w.version
            newest.append(best)
        own[k] = ([w.ack for w in ws], newest)
    problems = []
    for r in trace.reads:
        if r.session is None or (r.session, r.key) not in own:
            continue
        acks, newest = own[(r.session, r.key)]
        upto = bisect.bisect_left(acks, r.start)
        need = newest[upto - 1] if upto else None
        if _newer(need, r.version):
            problems.append(f"session {r.session} read {r.key} at {r.start}: version {r.version} predates own write {need}")
    return problems


def gated_violations(trace: StorageTrace, windows: Iterable[tuple[int, int]], delta_ms: int) -> list[ReadRow | WriteRow]:
    """Bounded-staleness operations that succeeded when the gate should have
    refused them: wholly inside a partition window more than ``delta_ms`` after it began."""
    bad: list[ReadRow | WriteRow] = []
    for lo, hi in windows:
        gate = lo + delta_ms
        for r in trace.reads:
            if r.mode == "bounded" and r.start > gate and r.end < hi:
                bad.append(r)
        for w in trace.writes:
            if w.mode == "bounded" and w.start > gate and w.ack < hi:
                bad.append(w)
    return bad
