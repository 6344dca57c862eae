"""Per-class storage: one consistency backend per attribute, chosen by its SLA.

* ``strong`` attributes live in one Raft group spanning the replica set;
* ``bounded`` attributes live in CRDT replicas kept in sync by anti-entropy
  and guarded by the staleness gate;
* ``ryw`` attributes live in the same CRDT replicas, accessed through
  sessions pinned to one replica.

Operations are asynchronous: every call ends in ``cb(error, value)``.
Access to a replica outside the caller's datacenter costs a round trip on
``obj/<class>/data``.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, NamedTuple

from ..antientropy.crdt import GCounter, LwwMap, LwwRegister, Stamp
from ..antientropy.replica import Gate, Replica, default_sync_period, staleness_gate
from ..antientropy.service import AntiEntropyGroup
from ..consensus import Command, RaftGroup
from ..errors import (
    KindMismatch,
    NoQualifiedReplica,
    NoReplicaAvailable,
    ReplicaUnreachable,
    StalenessExceeded,
    StorageError,
    StorageTimeout,
)
from ..model import AttributeKind, BoundedStaleness, FlattenedClass, ObjectId
from ..session import SessionManager, SessionToken
from ..simnet import Envelope, EventHandle, Network
from .detector import FailureDetector

Callback = Callable[[Exception | None, Any], None]
REMOTE_TIMEOUT_MS = 1000
RYW_SYNC_PERIOD_MS = 5000


class WriteRow(NamedTuple):
    key: str
    mode: str
    version: Any
    start: int
    ack: int
    session: int | None


class ReadRow(NamedTuple):
    key: str
    mode: str
    start: int
    end: int
    version: Any  # None for a never-written key
    session: int | None


@dataclass
class StorageTrace:
    """Acknowledged writes and served reads of bytes attributes.

    Versions are log indexes for strong keys and LWW stamps otherwise.
    ``blocked`` rows are ``(key, op, ms, replica)`` for gated operations.
    """

    writes: list[WriteRow] = field(default_factory=list)
    reads: list[ReadRow] = field(default_factory=list)
    blocked: list[tuple[str, str, int, str]] = field(default_factory=list)


@dataclass(frozen=True)
class DataReq:
    corr: int
    reply_dc: str
    target: str
    op: str  # "r" or "w"
    key: str
    kind: str
    value: Any
    delta_ms: int | None
    session: int | None


@dataclass(frozen=True)
class DataResp:
    corr: int
    error: Exception | None
    value: Any
    version: Any


def plain(value) -> Any:
    if value is None:
        return None
    if isinstance(value, LwwRegister):
        return value.value
    if isinstance(value, GCounter):
        return value.read()
    if isinstance(value, LwwMap):
        return value.read()
    return value


def _version(value) -> Any:
    return value.stamp if isinstance(value, LwwRegister) else None


class ClassStorage:
    def __init__(
        self,
        net: Network,
        flat: FlattenedClass,
        sites: list[str],
        detector: FailureDetector,
        *,
        trace: StorageTrace | None = None,
        raft_opts: dict | None = None,
        ae_period_ms: int | None = None,
    ):
        self.net = net
        self.sim = net.sim
        self.flat = flat
        self.cls = flat.name
        self.sites = list(sites)
        self.detector = detector
        self.trace = trace
        self.modes = {a.name: flat.member_sla[a.name].consistency for a in flat.attributes}
        self.kinds = {a.name: a.kind for a in flat.attributes}
        self._corr = itertools.count(1)
        self._pending: dict[int, tuple[Callback, EventHandle, str, str, int]] = {}
        self.tokens: dict[int, SessionToken] = {}

        self.raft: RaftGroup | None = None
        if any(c.mode == "strong" for c in self.modes.values()):
            self.raft = RaftGroup(net, self.cls, self.sites, reachable=detector.reachable, **(raft_opts or {}))

        self.replicas: dict[str, Replica] = {}
        self.ae: AntiEntropyGroup | None = None
        self.sessions: SessionManager | None = None
        weak = [c for c in self.modes.values() if c.mode != "strong"]
        if weak:
            deltas = [c.delta_ms for c in weak if isinstance(c, BoundedStaleness)]
            period = ae_period_ms or (default_sync_period(min(deltas)) if deltas else RYW_SYNC_PERIOD_MS)
            self.sync_period_ms = period
            self.delta_ms = min(deltas) if deltas else None
            self.replicas = {dc: Replica(dc, delta_ms=self.delta_ms, period_ms=period) for dc in self.sites}
            self.ae = AntiEntropyGroup(net, self.cls, dict(self.replicas), period_ms=period)
            self.sessions = SessionManager(self.replicas, latency=net.latency, reachable=detector.reachable)
        for dc in self.sites:
            self._subscribe(dc)

    def _subscribe(self, dc: str) -> None:
        self.net.subscribe(dc, f"obj/{self.cls}/data", self._on_data, prefix=False)

    # -- membership ---------------------------------------------------------

    def add_site(self, dc: str) -> None:
        """Grow the CRDT replica set by one fresh replica (Raft membership is fixed)."""
        if dc in self.sites:
            return
        self.sites.append(dc)
        self._subscribe(dc)
        if self.ae is not None:
            rep = Replica(dc, delta_ms=self.delta_ms, period_ms=self.sync_period_ms)
            self.replicas[dc] = rep
            self.ae.add_replica(dc, rep, fresh=True)

    def remove_site(self, dc: str) -> None:
        if dc not in self.sites:
            return
        self.sites.remove(dc)
        if self.ae is not None:
            self.ae.remove_replica(dc)
            self.replicas.pop(dc, None)

    def stop(self) -> None:
        if self.raft is not None:
            self.raft.stop()
        if self.ae is not None:
            for dc in list(self.ae.replicas):
                self.ae.remove_replica(dc)
        for dc in self.sites:
            self.net.unsubscribe(dc, f"obj/{self.cls}/data")

    # -- sessions -----------------------------------------------------------

    def open_session(self, client_dc: str) -> SessionToken:
        if self.sessions is None:
            raise NoReplicaAvailable(f"{self.cls} has no session-capable storage")
        t = self.sessions.open_session(client_dc, self.sites)
        self.tokens[t.session_id] = t
        return t

    # -- entry points -------------------------------------------------------

    @staticmethod
    def key(obj: ObjectId, attr: str) -> str:
        return f"{obj}/{attr}"

    def read(self, dc: str, obj: ObjectId, attr: str, cb: Callback, session: SessionToken | None = None) -> None:
        self._op(dc, "r", obj, attr, None, cb, session)

    def write(self, dc: str, obj: ObjectId, attr: str, value: Any, cb: Callback, session: SessionToken | None = None) -> None:
        self._op(dc, "w", obj, attr, value, cb, session)

    def _op(self, dc, op, obj, attr, value, cb, session) -> None:
        mode = self.modes[attr]
        key = self.key(obj, attr)
        start = self.sim.now
        if mode.mode == "strong":
            self._strong(dc, op, key, value, cb, start)
            return
        delta = mode.delta_ms if isinstance(mode, BoundedStaleness) else None
        if mode.mode == "ryw":
            tok = session
            if tok is None:
                try:
                    tok = self.open_session(dc)
                except StorageError as exc:
                    cb(exc, None)
                    return
            else:
                self.tokens.setdefault(tok.session_id, tok)
            target = tok.pinned
            if not self.detector.reachable(dc, target):
                try:
                    self.sessions.repin(tok, self.sites, dc)
                except NoQualifiedReplica as exc:
                    cb(exc, None)
                    return
                target = tok.pinned
            sid = tok.session_id
        else:
            target = self._nearest(dc)
            if target is None:
                cb(NoReplicaAvailable(f"no replica of {self.cls} reachable from {dc}"), None)
                return
            sid = None
        req = DataReq(0, dc, target, op, key, mode.mode, value, delta, sid)
        if target == dc:
            err, val, ver = self._serve(req)
            if err is None:
                self._record(key, op, ver, start, sid)
            cb(err, val)
            return
        corr = next(self._corr)
        timer = self.sim.call_later(REMOTE_TIMEOUT_MS, self._timeout, corr)
        self._pending[corr] = (cb, timer, op, key, start, sid)
        self.net.post(dc, target, f"obj/{self.cls}/data", DataReq(corr, dc, target, op, key, mode.mode, value, delta, sid))

    def _nearest(self, dc: str) -> str | None:
        if dc in self.replicas and self.net.is_up(dc):
            return dc
        ok = [s for s in self.sites if s in self.replicas and self.detector.reachable(dc, s)]
        if not ok:
            return None
        return min(ok, key=lambda s: (self.net.latency(dc, s), self.sites.index(s)))

    # -- strong -------------------------------------------------------------

    def _strong(self, dc, op, key, value, cb, start) -> None:
        raft = self.raft
        if op == "r":
            def done(err, val, version):
                if err is None:
                    self._record(key, "r", version or None, start, None)
                cb(err, val)

            raft.read(dc, key, done)
            return
        if isinstance(value, tuple) and value and value[0] == "incr":
            cmd = Command(key, "incr", value[1])
        elif isinstance(value, dict):
            cmd = Command(key, "put", dict(value))
        else:
            cmd = Command(key, "set", value)

        def wdone(err, _val, version):
            if err is None and cmd.op == "set":
                self._record(key, "w", version, start, None)
            cb(err, None)

        raft.write(dc, cmd, wdone)

    # -- weak (CRDT) ------------------------------------------------------------

    def _serve(self, req: DataReq) -> tuple[Exception | None, Any, Any]:
        """Execute a data op at its target replica; returns (error, value, version)."""
        rep = self.replicas.get(req.target)
        if rep is None:
            return NoReplicaAvailable(f"{req.target} holds no replica of {self.cls}"), None, None
        now = self.sim.now
        try:
            if req.kind == "bounded":
                if staleness_gate(rep.sync, "read" if req.op == "r" else "write", now, req.delta_ms) is Gate.BLOCK:
                    if self.trace is not None:
                        self.trace.blocked.append((req.key, req.op, now, req.target))
                    return StalenessExceeded(f"{req.target} has not synced with every peer within {req.delta_ms} ms"), None, None
                if req.op == "r":
                    v = rep.read(req.key)
                    return None, plain(v), _version(v)
                return None, None, self._apply(rep, req.key, req.value, now, None)
            tok = self.tokens[req.session]
            if req.op == "r":
                v = self.sessions.read(tok, req.key, req.target)
                return None, plain(v), _version(v)
            return None, None, self._apply(rep, req.key, req.value, now, tok)
        except (ReplicaUnreachable, NoQualifiedReplica, KindMismatch) as exc:
            return exc, None, None

    def _apply(self, rep: Replica, key: str, value: Any, now: int, tok: SessionToken | None) -> Stamp | None:
        attr = key.rsplit("/", 1)[1]
        kind = self.kinds[attr]
        mgr = self.sessions
        if kind is AttributeKind.COUNTER or (isinstance(value, tuple) and value and value[0] == "incr"):
            n = value[1] if isinstance(value, tuple) else int(value)
            if tok is not None:
                mgr.increment(tok, key, n, rep.id)
            else:
                rep.increment(key, n)
            return None
        if kind is AttributeKind.MAP or isinstance(value, dict):
            if tok is not None:
                return mgr.put_fields(tok, key, dict(value), now, rep.id).version
            return rep.put_fields(key, dict(value), now)
        if tok is not None:
            return mgr.write(tok, key, value, now, rep.id).version
        return rep.write(key, value, now)

    def _record(self, key: str, op: str, version: Any, start: int, session: int | None) -> None:
        if self.trace is None:
            return
        attr = key.rsplit("/", 1)[1]
        if self.kinds[attr] is not AttributeKind.BYTES:
            return
        mode = self.modes[attr].mode
        if op == "w":
            self.trace.writes.append(WriteRow(key, mode, version, start, self.sim.now, session))
        else:
            self.trace.reads.append(ReadRow(key, mode, start, self.sim.now, version, session))

    def _on_data(self, env: Envelope) -> None:
        msg = env.payload
        if isinstance(msg, DataReq):
            err, val, ver = self._serve(msg)
            self.net.post(env.dst, msg.reply_dc, f"obj/{self.cls}/data", DataResp(msg.corr, err, val, ver))
            return
        pending = self._pending.pop(msg.corr, None)
        if pending is None:
            return
        cb, timer, op, key, start, sid = pending
        timer.cancel()
        if msg.error is None:
            self._record(key, op, msg.version, start, sid)
        cb(msg.error, msg.value)

    def _timeout(self, corr: int) -> None:
        pending = self._pending.pop(corr, None)
        if pending is not None:
            pending[0](StorageTimeout(f"{self.cls} data op timed out"), None)
