"""Deterministic discrete-event core and multi-datacenter network model.

One :class:`Simulator` owns the virtual clock (integer milliseconds), the event
queue and the only random number generator.  :class:`Network` layers
datacenters, per-link latency, scripted partitions and datacenter crashes on
top of it; messages travel as :class:`Envelope` records routed by topic.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from typing import Any

from .errors import (
    InvalidPartition,
    OverlapWithExistingPartition,
    PastTimestamp,
    UnknownDatacenter,
)


class EventHandle:
    __slots__ = ("time", "seq", "fn", "args", "cancelled")

    def __init__(self, time: int, seq: int, fn: Callable, args: tuple):
        self.time = time
        self.seq = seq
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Single-queue event loop; equal timestamps fire in insertion order."""

    def __init__(self, seed: int = 0):
        self.now = 0
        self.seed = seed
        self.rng = random.Random(seed)
        self._queue: list[tuple[int, int, EventHandle]] = []
        self._seq = itertools.count()
        self.fired = 0

    def schedule(self, at: int, fn: Callable, *args: Any) -> EventHandle:
        at = int(at)
        if at < self.now:
            raise PastTimestamp(f"cannot schedule at {at} ms, clock is at {self.now} ms")
        seq = next(self._seq)
        h = EventHandle(at, seq, fn, args)
        heapq.heappush(self._queue, (at, seq, h))
        return h

    def call_later(self, delay: int, fn: Callable, *args: Any) -> EventHandle:
        return self.schedule(self.now + max(0, int(delay)), fn, *args)

    def peek(self) -> int | None:
        q = self._queue
        while q and q[0][2].cancelled:
            heapq.heappop(q)
        return q[0][0] if q else None

    def step(self) -> bool:
        """Fire the next live event; return False when the queue is empty."""
        q = self._queue
        while q:
            h = heapq.heappop(q)[2]
            if h.cancelled:
                continue
            self.now = h.time
            self.fired += 1
            h.fn(*h.args)
            return True
        return False

    def run(self, until: int | None = None, max_events: int | None = None) -> None:
        """Run events with timestamp <= ``until``, then park the clock at ``until``."""
        q = self._queue
        n = 0
        pop = heapq.heappop
        while q:
            h = q[0][2]
            if h.cancelled:
                pop(q)
                continue
            if until is not None and h.time > until:
                break
            if max_events is not None and n >= max_events:
                return
            pop(q)
            self.now = h.time
            self.fired += 1
            h.fn(*h.args)
            n += 1
        if until is not None and until > self.now:
            self.now = until

    def run_until(self, predicate: Callable[[], bool], limit: int) -> bool:
        """Step until ``predicate()`` holds or the clock would pass ``limit``."""
        while not predicate():
            t = self.peek()
            if t is None or t > limit:
                self.now = max(self.now, limit)
                return predicate()
            self.step()
        return True


@dataclass(frozen=True)
class Envelope:
    src: str
    dst: str
    topic: str
    payload: Any
    send_time: int


@dataclass(frozen=True)
class PartitionEvent:
    group_a: frozenset[str]
    group_b: frozenset[str]
    start: int
    duration: int

    def __post_init__(self):
        object.__setattr__(self, "group_a", frozenset(self.group_a))
        object.__setattr__(self, "group_b", frozenset(self.group_b))
        if not self.group_a or not self.group_b:
            raise InvalidPartition("partition groups must be non-empty")
        if self.group_a & self.group_b:
            raise InvalidPartition("partition groups must be disjoint")
        if self.duration <= 0:
            raise InvalidPartition("partition duration must be positive")

    @property
    def end(self) -> int:
        return self.start + self.duration

    def separates(self, a: str, b: str) -> bool:
        return (a in self.group_a and b in self.group_b) or (a in self.group_b and b in self.group_a)

    def active(self, t: int) -> bool:
        return self.start <= t < self.end


Handler = Callable[[Envelope], None]


class Network:
    """Datacenters joined by latency links, with partitions and crashes.

    ``latency`` maps ``(a, b)`` pairs (or nested ``{a: {b: ms}}``) to one-way
    latency; it is made symmetric.  ``jitter_ms`` adds a uniform random extra
    delay in ``[0, jitter_ms]`` to every cross-datacenter message.
    ``link_rate`` optionally caps messages per second on a directed
    cross-datacenter link; excess messages wait their turn.
    """

    def __init__(
        self,
        sim: Simulator,
        datacenters: Iterable[str],
        latency: Mapping | None = None,
        *,
        intra_dc_ms: int = 0,
        jitter_ms: int = 0,
        link_rate: Mapping[tuple[str, str], float] | None = None,
        keep_log: bool = False,
    ):
        self.sim = sim
        self.datacenters: list[str] = list(dict.fromkeys(datacenters))
        self._dcset = set(self.datacenters)
        self.intra_dc_ms = intra_dc_ms
        self.jitter_ms = jitter_ms
        self._lat: dict[tuple[str, str], int] = {}
        for (a, b), ms in _pairs(latency or {}):
            self.set_latency(a, b, ms)
        self._rate: dict[tuple[str, str], float] = {}
        for (a, b), r in (link_rate or {}).items():
            self._check(a)
            self._check(b)
            self._rate[(a, b)] = float(r)
        self._link_free: dict[tuple[str, str], float] = {}
        self._last_delivery: dict[tuple[str, str], int] = {}
        self._exact: dict[tuple[str, str], Handler] = {}
        self._prefix: dict[str, list[tuple[str, Handler]]] = {}
        self.partitions: list[PartitionEvent] = []
        self._down: dict[str, bool] = {}
        self.crash_log: list[tuple[int, str, str]] = []
        self.drop_count = 0
        self.drops_by_reason: dict[str, int] = {}
        self.sent_count = 0
        self.delivered_count = 0
        self.keep_log = keep_log
        self.log: list[tuple[int, str, str, str, int | None]] = []

    # -- topology -----------------------------------------------------------

    def _check(self, dc: str) -> None:
        if dc not in self._dcset:
            raise UnknownDatacenter(dc)

    def add_datacenter(self, dc: str, latency: Mapping[str, float] | None = None) -> None:
        if dc not in self._dcset:
            self.datacenters.append(dc)
            self._dcset.add(dc)
        for peer, ms in (latency or {}).items():
            self.set_latency(dc, peer, ms)

    def set_latency(self, a: str, b: str, ms: float) -> None:
        self._check(a)
        self._check(b)
        if ms < 0:
            raise ValueError("latency must be non-negative")
        self._lat[(a, b)] = self._lat[(b, a)] = int(round(ms))

    def latency(self, a: str, b: str) -> int:
        if a == b:
            return self.intra_dc_ms
        return self._lat.get((a, b), 0)

    def subscribe(self, dc: str, topic: str, handler: Handler, *, prefix: bool = False) -> None:
        self._check(dc)
        if prefix:
            self._prefix.setdefault(dc, []).append((topic, handler))
        else:
            self._exact[(dc, topic)] = handler

    def unsubscribe(self, dc: str, topic: str) -> None:
        self._exact.pop((dc, topic), None)
        subs = self._prefix.get(dc)
        if subs:
            self._prefix[dc] = [(p, h) for p, h in subs if p != topic]

    # -- faults -------------------------------------------------------------

    def inject_partition(self, p: PartitionEvent) -> None:
        for dc in (*p.group_a, *p.group_b):
            self._check(dc)
        if p.start < self.sim.now:
            raise InvalidPartition(f"partition start {p.start} is already in the past")
        for q in self.partitions:
            if p.start < q.end and q.start < p.end and _shares_link(p, q):
                raise OverlapWithExistingPartition(f"{p} overlaps {q}")
        self.partitions.append(p)
        self.partitions.sort(key=lambda x: x.start)

    def partitioned(self, a: str, b: str, t: int) -> bool:
        return any(p.active(t) and p.separates(a, b) for p in self.partitions)

    def link_up(self, a: str, b: str, t0: int, t1: int) -> bool:
        """True if no partition separates ``a`` and ``b`` anywhere in ``[t0, t1]``."""
        if a == b:
            return True
        for p in self.partitions:
            if p.start <= t1 and t0 < p.end and p.separates(a, b):
                return False
        return True

    def partition_active(self, t: int | None = None) -> bool:
        t = self.sim.now if t is None else t
        return any(p.active(t) for p in self.partitions)

    def crash(self, dc: str) -> None:
        self._check(dc)
        if not self._down.get(dc):
            self._down[dc] = True
            self.crash_log.append((self.sim.now, dc, "down"))

    def recover(self, dc: str) -> None:
        self._check(dc)
        if self._down.get(dc):
            self._down[dc] = False
            self.crash_log.append((self.sim.now, dc, "up"))

    def schedule_outage(self, dc: str, start: int, duration: int) -> None:
        self.sim.schedule(start, self.crash, dc)
        self.sim.schedule(start + duration, self.recover, dc)

    def is_up(self, dc: str) -> bool:
        return not self._down.get(dc, False)

    def reachable(self, a: str, b: str, t: int | None = None) -> bool:
        """Instantaneous ground-truth reachability."""
        t = self.sim.now if t is None else t
        return self.is_up(a) and self.is_up(b) and not self.partitioned(a, b, t)

    # -- messaging ----------------------------------------------------------

    def _drop(self, reason: str, env: Envelope) -> None:
        self.drop_count += 1
        self.drops_by_reason[reason] = self.drops_by_reason.get(reason, 0) + 1
        if self.keep_log:
            self.log.append((env.send_time, env.src, env.dst, env.topic, None))

    def send(self, env: Envelope) -> None:
        self._check(env.src)
        self._check(env.dst)
        self.sent_count += 1
        now = self.sim.now
        if not self.is_up(env.src):
            self._drop("crashed", env)
            return
        src, dst = env.src, env.dst
        if src == dst:
            at = now + self.intra_dc_ms
        else:
            link = (src, dst)
            depart: float = now
            rate = self._rate.get(link)
            if rate:
                depart = max(float(now), self._link_free.get(link, 0.0))
                self._link_free[link] = depart + 1000.0 / rate
            at = int(math.ceil(depart)) + self._lat.get(link, 0)
            if self.jitter_ms:
                at += self.sim.rng.randint(0, self.jitter_ms)
            last = self._last_delivery.get(link)
            if last is not None and at < last:
                at = last
            self._last_delivery[link] = at
            if not self.link_up(src, dst, now, at):
                self._drop("partition", env)
                return
        self.sim.schedule(at, self._deliver, env)

    def post(self, src: str, dst: str, topic: str, payload: Any = None) -> None:
        self.send(Envelope(src, dst, topic, payload, self.sim.now))

    def _deliver(self, env: Envelope) -> None:
        if not self.is_up(env.dst):
            self._drop("crashed", env)
            return
        # partitions injected after the send are honoured here
        if not self.link_up(env.src, env.dst, env.send_time, self.sim.now):
            self._drop("partition", env)
            return
        handler = self._exact.get((env.dst, env.topic))
        if handler is None:
            for prefix, h in self._prefix.get(env.dst, ()):
                if env.topic.startswith(prefix):
                    handler = h
                    break
        if handler is None:
            self._drop("no-subscriber", env)
            return
        self.delivered_count += 1
        if self.keep_log:
            self.log.append((env.send_time, env.src, env.dst, env.topic, self.sim.now))
        handler(env)


def _pairs(latency: Mapping) -> Iterable[tuple[tuple[str, str], float]]:
    for k, v in latency.items():
        if isinstance(v, Mapping):
            for k2, ms in v.items():
                yield (k, k2), ms
        else:
            yield tuple(k), v


def _shares_link(p: PartitionEvent, q: PartitionEvent) -> bool:
    for a in p.group_a:
        for b in p.group_b:
            if q.separates(a, b):
                return True
    return False
