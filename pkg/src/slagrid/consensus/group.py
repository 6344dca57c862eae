"""Drives a set of :class:`RaftNode` state machines over the simulated network.

One :class:`RaftGroup` backs all strong attributes of one class replica set.
Node ids are the datacenter ids hosting them.  Peer traffic travels on
``raft/<class>/<shard>``; client replies come back on
``raft/<class>/<shard>/c`` at the caller's datacenter.

Clients (:meth:`RaftGroup.write`, :meth:`RaftGroup.read`) follow
``NotLeader`` redirects for at most ten hops, give up after
``client_timeout_ms``, and fail fast when their failure detector says no
quorum of members is reachable.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from ..errors import NoReplicaAvailable, NotLeader, StorageTimeout
from ..simnet import Envelope, EventHandle, Network
from .node import ELECTION_MS, HEARTBEAT_MS, Command, LogEntry, RaftNode, Role

MAX_HOPS = 10

# (error, value, version); writes get value None and their log index as version
Callback = Callable[[Exception | None, Any, int | None], None]


@dataclass(frozen=True)
class ClientReq:
    req_id: int
    client_dc: str
    kind: str  # "w" or "r"
    arg: Any


@dataclass(frozen=True)
class ClientResp:
    req_id: int
    error: Exception | None
    value: Any = None
    version: int | None = None  # log index: of the write, or of the last write to the key read


@dataclass
class RaftTrace:
    """Ground-truth events for the safety checkers."""

    leaders: list[tuple[int, str, int, tuple[int, ...]]] = field(default_factory=list)
    applies: list[tuple[int, str, LogEntry]] = field(default_factory=list)
    commits: dict[tuple[int, int], int] = field(default_factory=dict)


@dataclass
class _Req:
    rid: int
    client_dc: str
    kind: str
    arg: Any
    cb: Callback
    target: str = ""
    hops: int = 0
    timer: EventHandle | None = None
    retry: EventHandle | None = None


class RaftGroup:
    def __init__(
        self,
        net: Network,
        cls: str,
        members: list[str],
        *,
        shard: int = 0,
        election_ms: tuple[int, int] = ELECTION_MS,
        heartbeat_ms: int = HEARTBEAT_MS,
        check_quorum: bool = True,
        client_timeout_ms: int = 1000,
        trace: bool = False,
        reachable: Callable[[str, str], bool] | None = None,
        nodes: dict[str, RaftNode] | None = None,
    ):
        self.net = net
        self.sim = net.sim
        self.cls = cls
        self.topic = f"raft/{cls}/{shard}"
        self.reply_topic = self.topic + "/c"
        self.members = list(members)
        self.heartbeat_ms = heartbeat_ms
        self.client_timeout_ms = client_timeout_ms
        self.reachable = reachable or (lambda a, b: True)
        self.trace = RaftTrace() if trace else None
        self.nodes: dict[str, RaftNode] = {}
        for dc in self.members:
            node = (nodes or {}).get(dc)
            if node is None:
                node = RaftNode(
                    dc,
                    self.members,
                    rng=self.sim.rng,
                    now=self.sim.now,
                    election_ms=election_ms,
                    heartbeat_ms=heartbeat_ms,
                    check_quorum=check_quorum,
                )
            self.nodes[dc] = node
        self._timer_at: dict[str, float] = {dc: math.inf for dc in self.members}
        self._flush_pending: set[str] = set()
        self._tickets: dict[tuple[str, int], tuple[int, str, str, Any]] = {}
        self._reqs: dict[int, _Req] = {}
        self._rids = itertools.count(1)
        self._hint: dict[str, str] = {}
        self._subscribed: set[str] = set()
        self.stopped = False
        for dc in self.members:
            net.subscribe(dc, self.topic, self._on_peer)
            self._arm(dc)

    # -- introspection -------------------------------------------------------

    def leader(self) -> str | None:
        """The live leader with the highest term, if any."""
        best = None
        for dc, n in self.nodes.items():
            if n.role is Role.LEADER and self.net.is_up(dc) and (best is None or n.term > self.nodes[best].term):
                best = dc
        return best

    def logs(self) -> dict[str, list[LogEntry]]:
        return {dc: list(n.log) for dc, n in self.nodes.items()}

    def stop(self) -> None:
        """Detach from the network; timers become no-ops.  Node state is kept."""
        self.stopped = True
        for dc in self.members:
            self.net.unsubscribe(dc, self.topic)
        for dc in self._subscribed:
            self.net.unsubscribe(dc, self.reply_topic)
        for req in list(self._reqs.values()):
            self._finish(req, StorageTimeout("raft group stopped"), None)

    # -- node driving -------------------------------------------------------------

    def _arm(self, dc: str) -> None:
        d = self.nodes[dc].next_deadline()
        d = max(d, self.sim.now)
        if d < self._timer_at[dc]:
            self._timer_at[dc] = d
            self.sim.schedule(d, self._on_timer, dc, d)

    def _on_timer(self, dc: str, at: int) -> None:
        if self.stopped or self._timer_at[dc] != at:
            return
        self._timer_at[dc] = math.inf
        if not self.net.is_up(dc):
            self._timer_at[dc] = self.sim.now + self.heartbeat_ms
            self.sim.call_later(self.heartbeat_ms, self._on_timer, dc, self._timer_at[dc])
            return
        node = self.nodes[dc]
        if self.sim.now >= node.next_deadline():
            node.tick(self.sim.now)
        self._pump(dc)

    def _on_flush(self, dc: str) -> None:
        self._flush_pending.discard(dc)
        if self.stopped:
            return
        self.nodes[dc].flush(self.sim.now)
        self._pump(dc)

    def _pump(self, dc: str) -> None:
        node = self.nodes[dc]
        if node.notes:
            notes, node.notes = node.notes, []
            for note in notes:
                self._on_note(dc, note)
        if node.outbox:
            out, node.outbox = node.outbox, []
            for dst, msg in out:
                self.net.post(dc, dst, self.topic, (dc, msg))
        if node.dirty and dc not in self._flush_pending:
            self._flush_pending.add(dc)
            self.sim.schedule(self.sim.now, self._on_flush, dc)
        self._arm(dc)

    def _on_note(self, dc: str, note: tuple) -> None:
        kind = note[0]
        if kind == "apply":
            if self.trace is not None:
                e = note[1]
                self.trace.applies.append((self.sim.now, dc, e))
                self.trace.commits.setdefault((e.index, e.term), self.sim.now)
            return
        if kind == "leader":
            if self.trace is not None:
                self.trace.leaders.append((note[1], dc, self.sim.now, note[2]))
            return
        if kind == "term":
            return
        _, ticket, err, index = note
        pending = self._tickets.pop((dc, ticket), None)
        if pending is None:
            return
        req_id, client_dc, rkind, key = pending
        value = version = None
        if err is None:
            if rkind == "r":
                node = self.nodes[dc]
                value, version = node.state.get(key), node.versions.get(key, 0)
            else:
                version = index
        self.net.post(dc, client_dc, self.reply_topic, ClientResp(req_id, err, value, version))

    def _on_peer(self, env: Envelope) -> None:
        dc = env.dst
        if self.stopped:
            return
        src, msg = env.payload
        node = self.nodes[dc]
        if isinstance(msg, ClientReq):
            self._on_client_req(dc, msg)
            return
        node.handle(src, msg, self.sim.now)
        self._pump(dc)

    def _on_client_req(self, dc: str, req: ClientReq) -> None:
        node = self.nodes[dc]
        now = self.sim.now
        try:
            if req.kind == "w":
                ticket = node.propose(req.arg, now)
            else:
                ticket = node.read_index(now)
        except NotLeader as exc:
            self.net.post(dc, req.client_dc, self.reply_topic, ClientResp(req.req_id, exc))
            return
        self._tickets[(dc, ticket)] = (req.req_id, req.client_dc, req.kind, req.arg)
        self._pump(dc)

    # -- clients ----------------------------------------------------------------------

    def _ensure_reply_sub(self, client_dc: str) -> None:
        if client_dc not in self._subscribed:
            self._subscribed.add(client_dc)
            self.net.subscribe(client_dc, self.reply_topic, self._on_reply)

    def write(self, client_dc: str, cmd: Command, cb: Callback) -> None:
        self._submit(client_dc, "w", cmd, cb)

    def read(self, client_dc: str, key: str, cb: Callback) -> None:
        self._submit(client_dc, "r", key, cb)

    def _candidates(self, client_dc: str) -> list[str]:
        ok = [m for m in self.members if self.reachable(client_dc, m)]
        return sorted(ok, key=lambda m: (m != client_dc, self.net.latency(client_dc, m), self.members.index(m)))

    def _submit(self, client_dc: str, kind: str, arg: Any, cb: Callback) -> None:
        self._ensure_reply_sub(client_dc)
        req = _Req(next(self._rids), client_dc, kind, arg, cb)
        self._reqs[req.rid] = req
        req.timer = self.sim.call_later(self.client_timeout_ms, self._on_timeout, req.rid)
        hint = self._hint.get(client_dc)
        self._route(req, hint)

    def _route(self, req: _Req, prefer: str | None) -> None:
        cands = self._candidates(req.client_dc)
        if len(cands) < len(self.members) // 2 + 1:
            self._finish(req, NoReplicaAvailable(f"no quorum of {self.topic} reachable from {req.client_dc}"), None)
            return
        if prefer is None or prefer not in cands:
            if req.target in cands:
                i = cands.index(req.target)
                prefer = cands[(i + 1) % len(cands)] if req.hops else req.target
            else:
                prefer = cands[0]
        req.target = prefer
        self.net.post(req.client_dc, prefer, self.topic, (req.client_dc, ClientReq(req.rid, req.client_dc, req.kind, req.arg)))

    def _on_reply(self, env: Envelope) -> None:
        resp: ClientResp = env.payload
        req = self._reqs.get(resp.req_id)
        if req is None:
            return
        err = resp.error
        if isinstance(err, NotLeader):
            req.hops += 1
            if req.hops > MAX_HOPS:
                self._finish(req, err, None)
                return
            if err.hint is not None and err.hint != req.target:
                self._hint[req.client_dc] = err.hint
                self._route(req, err.hint)
            else:
                self._hint.pop(req.client_dc, None)
                req.retry = self.sim.call_later(self.heartbeat_ms, self._retry, req.rid)
            return
        if err is None:
            self._hint[req.client_dc] = req.target
        self._finish(req, err, resp.value, resp.version)

    def _retry(self, rid: int) -> None:
        req = self._reqs.get(rid)
        if req is not None:
            self._route(req, None)

    def _on_timeout(self, rid: int) -> None:
        req = self._reqs.get(rid)
        if req is not None:
            req.timer = None
            self._hint.pop(req.client_dc, None)
            self._finish(req, StorageTimeout(f"{self.topic} request timed out"), None)

    def _finish(self, req: _Req, err: Exception | None, value: Any, version: int | None = None) -> None:
        self._reqs.pop(req.rid, None)
        if req.timer is not None:
            req.timer.cancel()
        if req.retry is not None:
            req.retry.cancel()
        req.cb(err, value, version)
