"""Read-your-writes sessions over anti-entropy replicas.

A session is pinned to one replica, preferring the client's own datacenter
and then the lowest latency.  Reads and writes go to the pin only, so every
read sees the session's earlier writes.  The token remembers what the
session wrote and what it has read; a re-pin only moves to a replica that
already covers both, which keeps read-your-writes and monotonic reads
across failover.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from .antientropy.crdt import CrdtValue, GCounter, LwwMap, LwwRegister, Stamp
from .antientropy.replica import Replica
from .errors import KindMismatch, NoQualifiedReplica, NoReplicaAvailable, ReplicaUnreachable

# requirement shapes: ("lww", Stamp) | ("ctr", {replica: n}) | ("map", {field: Stamp})
Requirement = tuple[str, Any]


@dataclass
class SessionToken:
    session_id: int
    pinned: str
    write_counter: int = 0
    high_water: dict[str, int] = field(default_factory=dict)
    writes: dict[str, Requirement] = field(default_factory=dict)
    seen: dict[str, Requirement] = field(default_factory=dict)


@dataclass(frozen=True)
class Ack:
    counter: int
    version: Any


def requirement_of(value: CrdtValue) -> Requirement:
    """The coverage requirement that ``value`` itself satisfies."""
    if isinstance(value, LwwRegister):
        return ("lww", value.stamp)
    if isinstance(value, GCounter):
        return ("ctr", {r: n for r, n in value.counts.items() if n})
    if isinstance(value, LwwMap):
        return ("map", {f: reg.stamp for f, reg in value.entries.items()})
    raise TypeError(f"not a CRDT value: {value!r}")


def join(a: Requirement | None, b: Requirement) -> Requirement:
    if a is None:
        return b
    if a[0] != b[0]:
        raise KindMismatch(f"requirement kinds differ: {a[0]} vs {b[0]}")
    if a[0] == "lww":
        return ("lww", max(a[1], b[1]))
    merged = dict(a[1])
    for k, v in b[1].items():
        if k not in merged or v > merged[k]:
            merged[k] = v
    return (a[0], merged)


def covers(value: CrdtValue | None, req: Requirement) -> bool:
    kind, need = req
    if kind == "lww":
        return need.ms < 0 or (isinstance(value, LwwRegister) and value.stamp >= need)
    if kind == "ctr":
        if not need:
            return True
        return isinstance(value, GCounter) and all(value.counts.get(r, 0) >= n for r, n in need.items())
    if kind == "map":
        if not need:
            return True
        if not isinstance(value, LwwMap):
            return False
        return all(f in value.entries and value.entries[f].stamp >= s for f, s in need.items())
    raise ValueError(f"unknown requirement kind {kind!r}")


class SessionManager:
    """Session routing over a set of replicas (replica id == datacenter id)."""

    def __init__(
        self,
        replicas: Mapping[str, Replica],
        *,
        latency: Callable[[str, str], float] = lambda a, b: 0,
        is_up: Callable[[str], bool] = lambda dc: True,
        reachable: Callable[[str, str], bool] | None = None,
    ):
        self.replicas = replicas
        self.latency = latency
        self.is_up = is_up
        self.reachable = reachable or (lambda a, b: is_up(b))
        self._ids = itertools.count(1)

    def _rank(self, client_dc: str, placement: Sequence[str]) -> list[str]:
        order = {dc: i for i, dc in enumerate(placement)}
        return sorted(placement, key=lambda dc: (dc != client_dc, self.latency(client_dc, dc), order[dc]))

    def open_session(self, client_dc: str, placement: Sequence[str]) -> SessionToken:
        live = [dc for dc in placement if dc in self.replicas and self.reachable(client_dc, dc)]
        if not live:
            raise NoReplicaAvailable(f"no live replica among {list(placement)}")
        return SessionToken(next(self._ids), self._rank(client_dc, live)[0])

    def _pinned(self, t: SessionToken, client_dc: str) -> Replica:
        if not self.reachable(client_dc, t.pinned):
            raise ReplicaUnreachable(f"pinned replica {t.pinned} unreachable from {client_dc}")
        return self.replicas[t.pinned]

    def write(self, t: SessionToken, key: str, value: bytes | None, now: int, client_dc: str) -> Ack:
        rep = self._pinned(t, client_dc)
        stamp = rep.write(key, value, now)
        return self._ack(t, key, ("lww", stamp), stamp)

    def increment(self, t: SessionToken, key: str, n: int, client_dc: str) -> Ack:
        rep = self._pinned(t, client_dc)
        rep.increment(key, n)
        slot = rep.read(key).counts.get(rep.id, 0)
        return self._ack(t, key, ("ctr", {rep.id: slot}), slot)

    def put_fields(self, t: SessionToken, key: str, updates: dict[str, bytes | None], now: int, client_dc: str) -> Ack:
        rep = self._pinned(t, client_dc)
        stamp = rep.put_fields(key, updates, now)
        return self._ack(t, key, ("map", {f: stamp for f in updates}), stamp)

    def _ack(self, t: SessionToken, key: str, req: Requirement, version: Any) -> Ack:
        t.write_counter += 1
        t.high_water[key] = t.write_counter
        t.writes[key] = join(t.writes.get(key), req)
        return Ack(t.write_counter, version)

    def read(self, t: SessionToken, key: str, client_dc: str) -> CrdtValue | None:
        rep = self._pinned(t, client_dc)
        value = rep.read(key)
        for req in (t.writes.get(key), t.seen.get(key)):
            if req is not None and not covers(value, req):
                # only reachable if the pin lost state, which replicas never do
                raise NoQualifiedReplica(f"{t.pinned} no longer covers session {t.session_id} on {key}")
        if value is not None:
            t.seen[key] = join(t.seen.get(key), requirement_of(value))
        return value

    def qualifies(self, t: SessionToken, dc: str) -> bool:
        rep = self.replicas.get(dc)
        if rep is None:
            return False
        for reqs in (t.writes, t.seen):
            for key, req in reqs.items():
                if not covers(rep.read(key), req):
                    return False
        return True

    def repin(self, t: SessionToken, placement: Sequence[str], client_dc: str) -> SessionToken:
        if self.reachable(client_dc, t.pinned) and t.pinned in placement:
            return t
        for dc in self._rank(client_dc, [p for p in placement if p != t.pinned]):
            if self.reachable(client_dc, dc) and self.qualifies(t, dc):
                t.pinned = dc
                return t
        raise NoQualifiedReplica(f"no reachable replica covers session {t.session_id}")


def stamp_of(value: CrdtValue | None) -> Stamp | None:
    return value.stamp if isinstance(value, LwwRegister) else None
