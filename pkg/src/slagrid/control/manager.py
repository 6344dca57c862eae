"""Deployment and SLA monitoring: the control plane as one actor on the event loop.

Deployment is a two-phase exchange on ``ctl/<dc>``.  The control plane,
hosted at its home datacenter, asks every chosen site to *prepare* (hold
its reserved slots), then to *commit* (start the class runtime).  Once
every site has confirmed, the class storage is brought up and the class is
live.  A refusal or a missing answer within ``deploy_timeout_ms`` aborts the
deployment everywhere, leaving no runtime behind.

The monitor samples every ``monitor_ms``.  Three consecutive breaching
samples trigger a correction:

* a replica its detector has lost is replaced by the next site in rotation;
* an availability shortfall adds a replica from rotation;
* a throughput shortfall grows the function's reservation by 10 % (at
  least one slot) on every site serving it.

No correction starts while a partition is active (ground truth from the
network), since a partition is not something re-placement can fix.  A failed
correction is retried after 1, 2, 4, ... monitoring periods, at most 5 times.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from ..errors import DeployFailed, InsufficientCapacity, SlaGridError
from ..model import FlattenedClass
from ..simnet import Envelope
from .placement import (
    PlacementPlan,
    Placer,
    class_target,
    estimate_failure_prob,
    set_availability,
)

if TYPE_CHECKING:
    from ..runtime.classrt import Invocation
    from ..runtime.platform import Platform

STRIKES = 3
MAX_RETRIES = 5
GROWTH = 0.10
DeployCallback = Callable[[Exception | None, PlacementPlan | None], None]


class Metric(str, enum.Enum):
    STALENESS_MS = "staleness_ms"
    COMMITTED_RPS = "committed_rps"
    AVAILABILITY_WINDOW = "availability_window"
    QUEUE_WAIT_MS = "queue_wait_ms"


@dataclass(frozen=True)
class SlaMetricSample:
    t_ms: int
    class_name: str
    metric: Metric
    value: float
    member: str | None = None


@dataclass(frozen=True)
class Ctl:
    kind: str  # prepare | commit | abort | add | ok | fail | ready
    op: int
    cls: str
    dc: str
    reason: str = ""


@dataclass
class _Op:
    op: int
    cls: str
    sites: list[str]
    cb: Callable[[Exception | None], None]
    phase: str = "prepare"
    acked: set[str] = field(default_factory=set)
    timer: Any = None


@dataclass
class Correction:
    t_ms: int
    class_name: str
    action: str  # replace | add_replica | grow_reservation
    cause: str
    dc: str | None
    attempt: int
    ok: bool
    detail: str = ""

    def as_record(self) -> dict:
        return {
            "t_ms": self.t_ms,
            "class": self.class_name,
            "action": self.action,
            "cause": self.cause,
            "dc": self.dc,
            "attempt": self.attempt,
            "ok": self.ok,
            "detail": self.detail,
        }


class ControlPlane:
    def __init__(
        self,
        platform: Platform,
        placer: Placer | None = None,
        *,
        home: str | None = None,
        monitor_ms: int = 1000,
        deploy_timeout_ms: int = 1000,
        strikes: int = STRIKES,
        max_retries: int = MAX_RETRIES,
    ):
        self.platform = platform
        self.net = platform.net
        self.sim = platform.sim
        self.placer = placer or Placer(list(platform.profiles.values()))
        self.home = home or next(
            (dc for dc, p in platform.profiles.items() if p.tier.value == "cloud"), next(iter(platform.profiles))
        )
        self.monitor_ms = monitor_ms
        self.deploy_timeout_ms = deploy_timeout_ms
        self.strikes_needed = strikes
        self.max_retries = max_retries
        self.plans: dict[str, PlacementPlan] = {}
        self.samples: list[SlaMetricSample] = []
        self.corrections: list[Correction] = []
        self.uptime: dict[str, list[bool]] = {dc: [] for dc in platform.profiles}
        self._strikes: dict[tuple, int] = {}
        self._busy: set[tuple] = set()
        self._ops: dict[int, _Op] = {}
        self._opids = itertools.count(1)
        self._window: dict[tuple[str, str], list[int]] = {}
        self._pending_reserve: dict[tuple[int, str], dict[str, int]] = {}
        self._monitor = None
        for dc in platform.profiles:
            self.net.subscribe(dc, f"ctl/{dc}", self._on_ctl)
        platform.observers.append(self._observe)

    # -- load and placement -------------------------------------------------------

    def load(self) -> dict[str, int]:
        return {dc: wk.reserved_total for dc, wk in self.platform.workers.items()}

    def plan(self, flat: FlattenedClass) -> PlacementPlan:
        return self.placer.place(flat, load=self.load(), failure_probs=self.failure_probs())

    def failure_probs(self) -> dict[str, float]:
        """Declared probability, raised to the observed estimate when that is worse."""
        out = {}
        for dc, p in self.platform.profiles.items():
            obs = self.uptime.get(dc)
            est = estimate_failure_prob(obs) if obs else 0.0
            out[dc] = max(p.failure_prob, est)
        return out

    # -- deployment -----------------------------------------------------------------

    def deploy(self, flat: FlattenedClass, cb: DeployCallback | None = None, *, plan: PlacementPlan | None = None) -> None:
        try:
            plan = plan or self.plan(flat)
        except SlaGridError as exc:
            if cb:
                cb(exc, None)
            return
        self.platform.begin(flat, plan)

        def finished(err):
            if err is None:
                self.platform.activate(flat.name)
                self.plans[flat.name] = plan
            if cb:
                cb(err, plan if err is None else None)

        op = _Op(next(self._opids), flat.name, list(plan.sites), finished)
        self._ops[op.op] = op
        self._phase(op, "prepare")

    def deploy_sync(self, flat: FlattenedClass, *, plan: PlacementPlan | None = None) -> PlacementPlan:
        err, plan = self.platform.call(lambda done: self.deploy(flat, lambda e, p: done((e, p)), plan=plan))
        if err is not None:
            raise err
        return plan

    def _phase(self, op: _Op, phase: str) -> None:
        op.phase = phase
        op.acked = set()
        if op.timer is not None:
            op.timer.cancel()
        op.timer = self.sim.call_later(self.deploy_timeout_ms, self._op_timeout, op.op)
        for dc in op.sites:
            self.net.post(self.home, dc, f"ctl/{dc}", Ctl(phase, op.op, op.cls, dc))

    def _op_timeout(self, opid: int) -> None:
        op = self._ops.get(opid)
        if op is not None:
            missing = sorted(set(op.sites) - op.acked)
            self._abort(op, DeployFailed(missing[0] if missing else op.sites[0], f"no answer to {op.phase}"))

    def _abort(self, op: _Op, err: Exception) -> None:
        self._ops.pop(op.op, None)
        if op.timer is not None:
            op.timer.cancel()
        for dc in op.sites:
            self.net.post(self.home, dc, f"ctl/{dc}", Ctl("abort", op.op, op.cls, dc))
        # sites the abort cannot reach are cleaned up here; runtimes never outlive the plan
        self.platform.abort(op.cls, op.sites)
        op.cb(err)

    def _on_ctl(self, env: Envelope) -> None:
        msg: Ctl = env.payload
        here = env.dst
        if msg.kind in ("ok", "fail", "ready"):
            self._on_answer(msg)
            return
        reply = "ok"
        reason = ""
        try:
            if msg.kind == "prepare":
                self.platform.prepare(here, msg.cls)
            elif msg.kind == "commit":
                self.platform.start(here, msg.cls)
                reply = "ready"
            elif msg.kind == "abort":
                if msg.cls in self.platform._staged:
                    self.platform.release(here, msg.cls)
                return
            elif msg.kind == "add":
                self.platform.add_site(msg.cls, here, self._pending_reserve.pop((msg.op, here), {}))
        except (SlaGridError, KeyError) as exc:
            reply, reason = "fail", str(exc)
        self.net.post(here, self.home, f"ctl/{self.home}", Ctl(reply, msg.op, msg.cls, here, reason))

    def _on_answer(self, msg: Ctl) -> None:
        op = self._ops.get(msg.op)
        if op is None:
            return
        if op.phase == "add":
            self._ops.pop(op.op, None)
            op.timer.cancel()
            op.cb(DeployFailed(msg.dc, msg.reason) if msg.kind == "fail" else None)
            return
        if msg.kind == "fail":
            self._abort(op, DeployFailed(msg.dc, msg.reason))
            return
        op.acked.add(msg.dc)
        if op.acked >= set(op.sites):
            if op.phase == "prepare":
                self._phase(op, "commit")
            else:
                self._ops.pop(op.op, None)
                op.timer.cancel()
                op.cb(None)

    # -- single-site additions (corrections) ----------------------------------------------

    def _add_site(self, cls: str, dc: str, reserved: dict[str, int], cb: Callable[[Exception | None], None]) -> None:
        opid = next(self._opids)
        self._pending_reserve[(opid, dc)] = reserved
        op = _Op(opid, cls, [dc], cb, phase="add")
        self._ops[opid] = op
        op.timer = self.sim.call_later(self.deploy_timeout_ms, self._add_timeout, opid)
        self.net.post(self.home, dc, f"ctl/{dc}", Ctl("add", opid, cls, dc))

    def _add_timeout(self, opid: int) -> None:
        op = self._ops.pop(opid, None)
        if op is not None:
            self._pending_reserve.pop((opid, op.sites[0]), None)
            op.cb(DeployFailed(op.sites[0], "no answer"))

    # -- monitoring -----------------------------------------------------------------

    def start_monitor(self) -> None:
        if self._monitor is None:
            self._monitor = self.sim.call_later(self.monitor_ms, self._tick)

    def stop_monitor(self) -> None:
        if self._monitor is not None:
            self._monitor.cancel()
            self._monitor = None

    def _observe(self, inv: Invocation) -> None:
        w = self._window.get((inv.target.class_name, inv.function))
        if w is None:
            w = self._window[(inv.target.class_name, inv.function)] = [0, 0, 0]
        w[0] += 1
        if inv.error is None:
            w[1] += 1
            w[2] += inv.wait

    def _tick(self) -> None:
        self._monitor = self.sim.call_later(self.monitor_ms, self._tick)
        now = self.sim.now
        det = self.platform.detector
        up = {dc: det.reachable(self.home, dc) for dc in self.platform.profiles}
        for dc, ok in up.items():
            self.uptime[dc].append(ok)
        partitioned = self.net.partition_active(now)
        window, self._window = self._window, {}
        scale = 1000 / self.monitor_ms
        for cls in sorted(self.platform.deployments):
            dep = self.platform.deployments[cls]
            plan = dep.plan
            live = [dc for dc in plan.sites if up[dc]]
            self.samples.append(SlaMetricSample(now, cls, Metric.AVAILABILITY_WINDOW, len(live) / len(plan.sites)))
            for fn in dep.flat.functions:
                seen, ok, wait = window.get((cls, fn.name), (0, 0, 0))
                self.samples.append(SlaMetricSample(now, cls, Metric.COMMITTED_RPS, ok * scale, fn.name))
                if ok:
                    self.samples.append(SlaMetricSample(now, cls, Metric.QUEUE_WAIT_MS, wait / ok, fn.name))
            if partitioned:
                self._strikes = {k: v for k, v in self._strikes.items() if k[0] != cls}
                continue
            dead = [dc for dc in plan.sites if not up[dc]]
            for dc in plan.sites:
                self._strike((cls, "dead", dc), dc in dead, lambda c=cls, dc=dc, **kw: self._replace(c, dc, **kw))
            probs = self.failure_probs()
            target = class_target(dep.flat)
            short = not dead and target > 0 and set_availability(probs[dc] for dc in live) < target
            self._strike((cls, "availability"), short, lambda c=cls, **kw: self._add_replica(c, **kw))
            for fn in dep.flat.functions:
                floor = dep.flat.member_sla[fn.name].throughput
                if not floor:
                    continue
                seen, ok, _ = window.get((cls, fn.name), (0, 0, 0))
                offered = seen * scale
                breach = offered > 0 and ok * scale < 0.95 * min(offered, floor)
                self._strike((cls, "throughput", fn.name), breach, lambda c=cls, f=fn.name, **kw: self._grow(c, f, **kw))

    def _strike(self, key: tuple, breach: bool, act: Callable[[], None]) -> None:
        if not breach:
            self._strikes.pop(key, None)
            return
        n = self._strikes.get(key, 0) + 1
        self._strikes[key] = n
        if n >= self.strikes_needed and key not in self._busy:
            self._strikes.pop(key, None)
            self._busy.add(key)
            self._attempt(key, act, 1)

    def _attempt(self, key: tuple, act: Callable[..., None], attempt: int) -> None:
        def retry(ok: bool) -> None:
            if ok or attempt >= self.max_retries:
                self._busy.discard(key)
                return
            delay = self.monitor_ms * 2 ** (attempt - 1)
            self.sim.call_later(delay, self._attempt, key, act, attempt + 1)

        act(attempt=attempt, then=retry)

    def _log(self, cls, action, cause, dc, attempt, ok, detail="") -> None:
        self.corrections.append(Correction(self.sim.now, cls, action, cause, dc, attempt, ok, detail))

    # -- corrective actions ------------------------------------------------------------

    def _candidate(self, cls: str, exclude: list[str]) -> str | None:
        det = self.platform.detector
        allowed = [dc for dc in self.placer.order if det.reachable(self.home, dc)]
        return self.placer.next_site(exclude=exclude, allowed=allowed)

    def _replace(self, cls: str, dead: str, *, attempt: int = 1, then=lambda ok: None) -> None:
        dep = self.platform.deployments.get(cls)
        if dep is None or dead not in dep.plan.sites:
            then(True)
            return
        new = self._candidate(cls, dep.plan.sites)
        if new is None:
            self._log(cls, "replace", f"{dead} unreachable", None, attempt, False, "no spare site")
            then(False)
            return
        moved = dict(dep.plan.reserved.get(dead, {}))

        def done(err):
            if err is None:
                self.platform.drop_site(cls, dead)
            self._log(cls, "replace", f"{dead} unreachable", new, attempt, err is None, str(err or ""))
            then(err is None)

        self._add_site(cls, new, moved, done)

    def _add_replica(self, cls: str, *, attempt: int = 1, then=lambda ok: None) -> None:
        dep = self.platform.deployments[cls]
        new = self._candidate(cls, dep.plan.sites)
        if new is None:
            self._log(cls, "add_replica", "availability below target", None, attempt, False, "no spare site")
            then(False)
            return

        def done(err):
            self._log(cls, "add_replica", "availability below target", new, attempt, err is None, str(err or ""))
            then(err is None)

        self._add_site(cls, new, {}, done)

    def _grow(self, cls: str, fn: str, *, attempt: int = 1, then=lambda ok: None) -> None:
        dep = self.platform.deployments[cls]
        sites = [dc for dc in dep.plan.sites if dep.plan.reserved.get(dc, {}).get(fn)]
        if not sites:
            sla = dep.flat.member_sla[fn]
            sites = [dc for dc in dep.plan.sites if dc in (sla.locality or ())] or list(dep.plan.sites)
        ok = True
        detail = []
        for dc in sites:
            cur = dep.plan.reserved.get(dc, {}).get(fn, 0)
            want = cur + max(1, math.ceil(cur * GROWTH))
            try:
                self.platform.set_reservation(cls, dc, fn, want)
                detail.append(f"{dc}:{cur}->{want}")
            except InsufficientCapacity as exc:
                ok = False
                detail.append(str(exc))
        self._log(cls, "grow_reservation", f"{fn} below throughput floor", ",".join(sites), attempt, ok, "; ".join(detail))
        then(ok)
