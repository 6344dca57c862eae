"""A CRDT replica store, its staleness gate, and a one-shot pairwise sync."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..errors import FetchFailed, KindMismatch
from .crdt import CrdtValue, GCounter, LwwMap, LwwRegister, Stamp, crdt_merge, value_hash
from .mst import MerkleSearchTree, mst_diff

MIN_SYNC_PERIOD_MS = 500


def default_sync_period(delta_ms: int | None) -> int:
    """Half the staleness bound, never below 500 ms."""
    if delta_ms is None:
        return 5000
    return max(MIN_SYNC_PERIOD_MS, delta_ms // 2)


@dataclass
class ReplicaSyncState:
    replica_id: str
    last_sync: dict[str, int] = field(default_factory=dict)
    period_ms: int = 5000
    delta_ms: int | None = None


class Gate(enum.Enum):
    ALLOW = "allow"
    BLOCK = "block"


def staleness_gate(state: ReplicaSyncState, op: str, now: int, delta_ms: int | None = None) -> Gate:
    """Allow ``op`` iff every peer was synced within the staleness bound.

    Reads and writes are gated alike.  With no peers the oldest sync is
    taken to be ``now``, so a lone replica is always allowed.
    """
    if op not in ("read", "write"):
        raise ValueError(f"op must be 'read' or 'write', not {op!r}")
    bound = state.delta_ms if delta_ms is None else delta_ms
    if bound is None:
        return Gate.ALLOW
    oldest = min(state.last_sync.values(), default=now)
    return Gate.ALLOW if now - oldest <= bound else Gate.BLOCK


class Replica:
    """Key -> CRDT store with a cached Merkle Search Tree digest."""

    def __init__(self, replica_id: str, *, delta_ms: int | None = None, period_ms: int | None = None):
        self.id = replica_id
        self.store: dict[str, CrdtValue] = {}
        self._vhash: dict[bytes, bytes] = {}
        self._tree: MerkleSearchTree | None = None
        self.sync = ReplicaSyncState(
            replica_id, {}, period_ms if period_ms is not None else default_sync_period(delta_ms), delta_ms
        )

    # -- peers ---------------------------------------------------------------

    @property
    def peers(self) -> list[str]:
        return list(self.sync.last_sync)

    def add_peer(self, peer: str, now: int) -> None:
        if peer != self.id:
            self.sync.last_sync.setdefault(peer, now)

    def remove_peer(self, peer: str) -> None:
        self.sync.last_sync.pop(peer, None)

    def mark_synced(self, peer: str, at: int) -> None:
        if peer in self.sync.last_sync and at > self.sync.last_sync[peer]:
            self.sync.last_sync[peer] = at

    # -- local updates -------------------------------------------------------

    def _stamp(self, cur: Stamp | None, now: int) -> Stamp:
        s = Stamp(now, self.id)
        if cur is not None and s <= cur:
            s = Stamp(cur.ms + 1, self.id)
        return s

    def _set(self, key: str, v: CrdtValue) -> None:
        self.store[key] = v
        self._vhash[key.encode()] = value_hash(v)
        self._tree = None

    def write(self, key: str, value: bytes | None, now: int) -> Stamp:
        cur = self.store.get(key)
        if cur is None:
            cur = LwwRegister()
        elif not isinstance(cur, LwwRegister):
            raise KindMismatch(f"{key} holds a {type(cur).__name__}")
        stamp = self._stamp(cur.stamp if cur.stamp.ms >= 0 else None, now)
        self._set(key, cur.set(value, stamp))
        return stamp

    def increment(self, key: str, n: int = 1) -> int:
        cur = self.store.get(key, GCounter())
        if not isinstance(cur, GCounter):
            raise KindMismatch(f"{key} holds a {type(cur).__name__}")
        new = cur.increment(self.id, n)
        self._set(key, new)
        return new.read()

    def put_fields(self, key: str, updates: dict[str, bytes | None], now: int) -> Stamp:
        cur = self.store.get(key, LwwMap())
        if not isinstance(cur, LwwMap):
            raise KindMismatch(f"{key} holds a {type(cur).__name__}")
        stamp = self._stamp(cur.stamp() if cur.entries else None, now)
        for f, v in sorted(updates.items()):
            cur = cur.put(f, v, stamp)
        self._set(key, cur)
        return stamp

    def merge_entry(self, key: str, value: CrdtValue) -> None:
        cur = self.store.get(key)
        new = value if cur is None else crdt_merge(cur, value)
        if new is not cur:
            self._set(key, new)

    def read(self, key: str) -> CrdtValue | None:
        return self.store.get(key)

    # -- digests -------------------------------------------------------------

    def tree(self) -> MerkleSearchTree:
        if self._tree is None:
            self._tree = MerkleSearchTree.build(self._vhash)
        return self._tree

    def state_bytes(self) -> bytes:
        return b"".join(k.encode() + b"\0" + self.store[k].encode() for k in sorted(self.store))


@dataclass
class SyncResult:
    messages: int
    keys: list[str]
    fetches: int


def sync_pair(a: Replica, b: Replica, now: int, *, link_up: bool = True) -> SyncResult:
    """Run one complete anti-entropy exchange between ``a`` and ``b`` at ``now``.

    Root hashes are compared first; on mismatch ``a`` walks ``b``'s tree,
    then both sides swap and merge their values for the divergent keys.
    Raises :class:`FetchFailed` (leaving sync times untouched) when the link
    is down.
    """
    if not link_up:
        raise FetchFailed(f"{a.id} cannot reach {b.id}")
    ta, tb = a.tree(), b.tree()
    messages = 2
    keys: list[str] = []
    fetches = 0
    if ta.root != tb.root:
        d = mst_diff(ta, tb)
        fetches = d.fetches
        messages += 2 * d.rounds
        keys = [k.decode() for k in d.keys]
        mine = {k: a.store[k] for k in keys if k in a.store}
        theirs = {k: b.store[k] for k in keys if k in b.store}
        for k, v in mine.items():
            b.merge_entry(k, v)
        for k, v in theirs.items():
            a.merge_entry(k, v)
        messages += 2
    a.mark_synced(b.id, now)
    b.mark_synced(a.id, now)
    return SyncResult(messages, keys, fetches)
