"""State-based CRDTs backing replicated attributes.

scalar-bytes attributes map to :class:`LwwRegister`, counters to
:class:`GCounter`, and map-of-bytes to :class:`LwwMap`.  Values are immutable;
every update and merge returns a new value.
"""

from __future__ import annotations

import hashlib
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import NamedTuple, Union

from ..errors import KindMismatch
from ..wire import encode_record


class Stamp(NamedTuple):
    """LWW timestamp: simulated milliseconds, ties broken by replica id."""

    ms: int
    replica: str


ZERO = Stamp(-1, "")


@dataclass(frozen=True)
class LwwRegister:
    """Last-writer-wins register.  ``value is None`` is a tombstone."""

    value: bytes | None = None
    stamp: Stamp = ZERO

    def _key(self):
        # value breaks exact-stamp ties so merge stays commutative
        return (self.stamp, self.value is not None, self.value or b"")

    def set(self, value: bytes | None, stamp: Stamp) -> LwwRegister:
        new = LwwRegister(value, stamp)
        return new if new._key() > self._key() else self

    def merge(self, other: LwwRegister) -> LwwRegister:
        return other if other._key() > self._key() else self

    def read(self) -> bytes | None:
        return self.value

    def encode(self) -> bytes:
        return encode_record(b"R", self.stamp.ms, self.stamp.replica, self.value)


@dataclass(frozen=True)
class GCounter:
    """Grow-only counter; each replica only ever bumps its own slot."""

    counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("GCounter slots are non-negative")

    def increment(self, replica: str, n: int = 1) -> GCounter:
        if n < 0:
            raise ValueError("GCounter only grows")
        c = dict(self.counts)
        c[replica] = c.get(replica, 0) + n
        return GCounter(c)

    def merge(self, other: GCounter) -> GCounter:
        c = dict(self.counts)
        for r, n in other.counts.items():
            if n > c.get(r, 0):
                c[r] = n
        return GCounter(c)

    def read(self) -> int:
        return sum(self.counts.values())

    def __eq__(self, other):
        if not isinstance(other, GCounter):
            return NotImplemented
        return {k: v for k, v in self.counts.items() if v} == {k: v for k, v in other.counts.items() if v}

    def __hash__(self):
        return hash(tuple(sorted((k, v) for k, v in self.counts.items() if v)))

    def encode(self) -> bytes:
        items = sorted((r, n) for r, n in self.counts.items() if n)
        return encode_record(b"G", *(x for r, n in items for x in (r, n)))


@dataclass(frozen=True)
class LwwMap:
    """Map of independent LWW registers; removal writes a tombstone."""

    entries: Mapping[str, LwwRegister] = field(default_factory=dict)

    def put(self, key: str, value: bytes | None, stamp: Stamp) -> LwwMap:
        e = dict(self.entries)
        e[key] = e.get(key, LwwRegister()).set(value, stamp)
        return LwwMap(e)

    def merge(self, other: LwwMap) -> LwwMap:
        e = dict(self.entries)
        for k, reg in other.entries.items():
            mine = e.get(k)
            e[k] = reg if mine is None else mine.merge(reg)
        return LwwMap(e)

    def read(self) -> dict[str, bytes]:
        return {k: r.value for k, r in sorted(self.entries.items()) if r.value is not None}

    def stamp(self) -> Stamp:
        return max((r.stamp for r in self.entries.values()), default=ZERO)

    def __eq__(self, other):
        if not isinstance(other, LwwMap):
            return NotImplemented
        return dict(self.entries) == dict(other.entries)

    def __hash__(self):
        return hash(tuple(sorted(self.entries.items())))

    def encode(self) -> bytes:
        parts = []
        for k, r in sorted(self.entries.items()):
            parts += [k, r.stamp.ms, r.stamp.replica, r.value]
        return encode_record(b"M", *parts)


CrdtValue = Union[LwwRegister, GCounter, LwwMap]


def crdt_merge(a: CrdtValue, b: CrdtValue) -> CrdtValue:
    """Least upper bound of two values of the same CRDT kind."""
    if type(a) is not type(b):
        raise KindMismatch(f"cannot merge {type(a).__name__} with {type(b).__name__}")
    return a.merge(b)


def value_hash(v: CrdtValue) -> bytes:
    return hashlib.sha256(v.encode()).digest()


def version_of(v: CrdtValue):
    """Total-order version used for staleness accounting."""
    if isinstance(v, LwwRegister):
        return v.stamp
    if isinstance(v, LwwMap):
        return v.stamp()
    return None
