"""Event-driven anti-entropy between the replicas of one class.

Every replica periodically opens a round with each peer.  A round is a chain
of messages on ``ae/<class>/<a>-<b>``:

    Probe(root) -> ProbeAck(equal | remote root)
    [FetchReq(hashes) -> FetchResp(nodes)]*   one pair per diverging tree level
    Batch(initiator values) -> BatchAck(responder values)

A round that does not finish within ``timeout_ms`` fails and leaves both
sides' sync times untouched.  Sync times record the moment the round
*started*: everything the peer held before that instant is reflected once
the round completes, which keeps the staleness gate conservative.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any

from ..simnet import Envelope, EventHandle, Network
from .crdt import CrdtValue
from .mst import MerkleSearchTree, MstNode, diff_steps
from .replica import Replica


@dataclass(frozen=True)
class Probe:
    rid: int
    root: bytes
    t0: int


@dataclass(frozen=True)
class ProbeAck:
    rid: int
    equal: bool
    root: bytes


@dataclass(frozen=True)
class FetchReq:
    rid: int
    hashes: tuple[bytes, ...]


@dataclass(frozen=True)
class FetchResp:
    rid: int
    nodes: dict[bytes, MstNode]


@dataclass(frozen=True)
class Batch:
    rid: int
    t0: int
    keys: tuple[str, ...]
    entries: dict[str, CrdtValue]


@dataclass(frozen=True)
class BatchAck:
    rid: int
    entries: dict[str, CrdtValue]


@dataclass
class _Round:
    rid: int
    a: str
    b: str
    t0: int
    steps: Any = None
    timer: EventHandle | None = None
    done: bool = False


@dataclass
class SyncStats:
    started: int = 0
    completed: int = 0
    failed: int = 0
    messages: int = 0
    fetched_nodes: int = 0
    merged_keys: int = 0
    history: list[tuple[int, str, str, str]] = field(default_factory=list)


class AntiEntropyGroup:
    def __init__(
        self,
        net: Network,
        name: str,
        replicas: dict[str, Replica] | None = None,
        *,
        period_ms: int = 5000,
        timeout_ms: int = 2000,
        keep_history: bool = False,
    ):
        self.net = net
        self.sim = net.sim
        self.name = name
        self.prefix = f"ae/{name}/"
        self.period_ms = period_ms
        self.timeout_ms = timeout_ms
        self.replicas: dict[str, Replica] = {}
        self.stats = SyncStats()
        self.keep_history = keep_history
        self._rids = itertools.count(1)
        self._rounds: dict[int, _Round] = {}
        self._snapshots: dict[tuple[str, int], tuple[int, MerkleSearchTree]] = {}
        self._timers: dict[tuple[str, str], EventHandle] = {}
        for dc, rep in (replicas or {}).items():
            self.add_replica(dc, rep, fresh=False)

    # -- membership ---------------------------------------------------------

    def add_replica(self, dc: str, rep: Replica, *, fresh: bool = True) -> None:
        """Join ``rep`` (hosted at ``dc``, id == dc) to the group.

        A ``fresh`` replica starts empty, so it treats every peer as never
        synced until its first successful round.
        """
        now = self.sim.now
        never = -(10**12)
        for other_dc, other in self.replicas.items():
            other.add_peer(dc, now)
            rep.add_peer(other_dc, never if fresh else now)
        self.replicas[dc] = rep
        self.net.subscribe(dc, self.prefix, self._on_message, prefix=True)
        n = len(self.replicas)
        for i, other_dc in enumerate(self.replicas):
            if other_dc == dc:
                continue
            self._arm(dc, other_dc, now + (self.period_ms * i) // (2 * n) + 1)
            self._arm(other_dc, dc, now + (self.period_ms * (i + n)) // (2 * n) + 1)

    def remove_replica(self, dc: str) -> None:
        self.replicas.pop(dc, None)
        self.net.unsubscribe(dc, self.prefix)
        for other in self.replicas.values():
            other.remove_peer(dc)
        for key in [k for k in self._timers if dc in k]:
            self._timers.pop(key).cancel()

    def _arm(self, a: str, b: str, at: int) -> None:
        old = self._timers.get((a, b))
        if old is not None:
            old.cancel()
        self._timers[(a, b)] = self.sim.schedule(max(at, self.sim.now), self._tick, a, b)

    def _tick(self, a: str, b: str) -> None:
        if a not in self.replicas or b not in self.replicas:
            return
        self._timers[(a, b)] = self.sim.call_later(self.period_ms, self._tick, a, b)
        if self.net.is_up(a):
            self.start_round(a, b)

    # -- protocol -----------------------------------------------------------

    def _send(self, src: str, dst: str, msg: Any) -> None:
        self.stats.messages += 1
        self.net.post(src, dst, f"{self.prefix}{min(src, dst)}-{max(src, dst)}", (src, msg))

    def start_round(self, a: str, b: str) -> int:
        rid = next(self._rids)
        rnd = _Round(rid, a, b, self.sim.now)
        rnd.timer = self.sim.call_later(self.timeout_ms, self._expire, rid)
        self._rounds[rid] = rnd
        self.stats.started += 1
        self._send(a, b, Probe(rid, self.replicas[a].tree().root, rnd.t0))
        return rid

    def _expire(self, rid: int) -> None:
        rnd = self._rounds.pop(rid, None)
        if rnd is None or rnd.done:
            return
        rnd.done = True
        self.stats.failed += 1
        self._log(rnd, "failed")

    def _finish(self, rnd: _Round) -> None:
        rnd.done = True
        if rnd.timer:
            rnd.timer.cancel()
        self._rounds.pop(rnd.rid, None)
        self.stats.completed += 1
        self.replicas[rnd.a].mark_synced(rnd.b, rnd.t0)
        self._log(rnd, "ok")

    def _log(self, rnd: _Round, what: str) -> None:
        if self.keep_history:
            self.stats.history.append((self.sim.now, rnd.a, rnd.b, what))

    def _on_message(self, env: Envelope) -> None:
        src, msg = env.payload
        me = env.dst
        rep = self.replicas.get(me)
        if rep is None:
            return
        if isinstance(msg, Probe):
            tree = rep.tree()
            if tree.root == msg.root:
                rep.mark_synced(src, msg.t0)
                self._send(me, src, ProbeAck(msg.rid, True, tree.root))
            else:
                self._gc_snapshots()
                self._snapshots[(me, msg.rid)] = (self.sim.now, tree)
                self._send(me, src, ProbeAck(msg.rid, False, tree.root))
        elif isinstance(msg, FetchReq):
            snap = self._snapshots.get((me, msg.rid))
            if snap is None:
                return
            tree = snap[1]
            self._send(me, src, FetchResp(msg.rid, {h: tree.nodes[h] for h in msg.hashes}))
        elif isinstance(msg, Batch):
            for k, v in msg.entries.items():
                rep.merge_entry(k, v)
            self._snapshots.pop((me, msg.rid), None)
            rep.mark_synced(src, msg.t0)
            reply = {k: rep.store[k] for k in msg.keys if k in rep.store}
            self._send(me, src, BatchAck(msg.rid, reply))
        else:
            rnd = self._rounds.get(msg.rid)
            if rnd is None or rnd.done:
                return
            if isinstance(msg, ProbeAck):
                if msg.equal:
                    self._finish(rnd)
                    return
                rnd.steps = diff_steps(rep.tree(), msg.root)
                self._advance(rnd, None)
            elif isinstance(msg, FetchResp):
                self.stats.fetched_nodes += len(msg.nodes)
                self._advance(rnd, msg.nodes)
            elif isinstance(msg, BatchAck):
                for k, v in msg.entries.items():
                    rep.merge_entry(k, v)
                self._finish(rnd)

    def _advance(self, rnd: _Round, nodes) -> None:
        try:
            need = next(rnd.steps) if nodes is None else rnd.steps.send(nodes)
        except StopIteration as stop:
            keys = tuple(sorted(k.decode() for k in stop.value))
            rep = self.replicas[rnd.a]
            self.stats.merged_keys += len(keys)
            self._send(rnd.a, rnd.b, Batch(rnd.rid, rnd.t0, keys, {k: rep.store[k] for k in keys if k in rep.store}))
            return
        self._send(rnd.a, rnd.b, FetchReq(rnd.rid, tuple(need)))

    def _gc_snapshots(self) -> None:
        cutoff = self.sim.now - 2 * self.timeout_ms
        for key in [k for k, (t, _) in self._snapshots.items() if t < cutoff]:
            del self._snapshots[key]
