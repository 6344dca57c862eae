"""Run a :class:`ScenarioScript` in the simulator and produce a report.

A run has a setup phase (deploy every class through the control plane,
create objects, let replicas settle) followed by the workload phase.  Script
times are relative to the start of the workload phase, ``t0``.  Workloads are
open loop: arrival ``i`` of a workload at rate ``r`` is issued at
``floor(i * 1000 / r)`` ms after its start whatever happened to earlier calls.
"""

from __future__ import annotations

import enum
import math
from collections import Counter, defaultdict
from fractions import Fraction
from collections.abc import Callable
from typing import Any

from ..control import ControlPlane
from ..control.placement import PlacementPlan
from ..model import FlattenedClass, ObjectId, validate_class
from ..runtime import HandlerRegistry, Invocation, Platform, StorageTrace
from ..runtime.handlers import split_handler_id
from ..session import SessionToken
from ..simnet import Network, PartitionEvent, Simulator
from .metrics import MetricsReport, MetricsRow, percentile
from .script import ScenarioScript, WorkloadSpec, ms
from .staleness import check_ryw, check_strong_reads, staleness_samples, summarize

READERS = {"get", "rw"}
WRITERS = {"put", "rw"}


def _plain(x: Any) -> Any:
    """JSON-native copy of ``x`` (tuples become lists, keys become strings)."""
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, dict):
        return {str(_plain(k)): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set, frozenset)):
        items = [_plain(v) for v in x]
        return sorted(items) if isinstance(x, (set, frozenset)) else items
    if isinstance(x, Fraction):
        return float(x)
    if isinstance(x, float) and x.is_integer():
        return int(x)
    return x


def _num(x: float) -> int | float:
    return int(x) if float(x).is_integer() else round(x, 6)


class _Workload:
    """Open-loop arrival generator for one :class:`WorkloadSpec`."""

    def __init__(self, run: ScenarioRun, idx: int, spec: WorkloadSpec):
        self.run = run
        self.idx = idx
        self.spec = spec
        self.name = f"{spec.cls}.{spec.function}"
        rate = Fraction(spec.rate).limit_denominator(1_000_000)
        self.rate = rate
        # arrival i lands at floor(i * 1000 / rate) = (i * 1000 * q) // p
        self._num, self._den = 1000 * rate.denominator, rate.numerator
        self.begin = run.t0 + ms(spec.start_s)
        self.end = self.begin + ms(spec.duration_s)
        pool = run.objects[spec.cls]
        self.targets = pool[: spec.objects] if spec.objects else pool
        self.sessions: list[SessionToken | None] = []
        self.seq = 0
        self.record = run._recorder(self.name)

    def arrival_ms(self, i: int) -> int:
        return self.begin + (i * self._num) // self._den

    def open_sessions(self) -> None:
        spec = self.spec
        pools = self.run.session_pools
        if spec.session_pool is not None and spec.session_pool in pools:
            self.sessions = pools[spec.session_pool]
            return
        for _ in range(spec.sessions):
            self.sessions.append(self.run.platform.open_session(spec.cls, spec.client_dc))
        if spec.session_pool is not None:
            pools[spec.session_pool] = self.sessions

    def start(self) -> None:
        if self.rate > 0 and self.targets:
            self.run.sim.schedule(self.arrival_ms(0), self._fire)

    def _fire(self) -> None:
        sim = self.run.sim
        now = sim.now
        while self.arrival_ms(self.seq) == now:
            self._issue()
            self.seq += 1
        nxt = self.arrival_ms(self.seq)
        if nxt < self.end:
            sim.schedule(nxt, self._fire)

    def _issue(self) -> None:
        spec = self.spec
        i = self.seq
        payload = f"{self.idx}:{i}".encode() if spec.payload == "unique" else spec.payload.encode()
        session = self.sessions[i % len(self.sessions)] if self.sessions else None
        self.run.offered[self.name].append(self.run.sim.now)
        self.run.platform.invoke(
            self.targets[i % len(self.targets)],
            spec.function,
            payload,
            client_dc=spec.client_dc,
            session=session,
            cb=self.record,
        )


class ScenarioRun:
    """One scenario's simulated world; :meth:`execute` runs it to completion.

    ``observe`` is called with ``(function, invocation)`` for every workload reply.
    """

    def __init__(
        self,
        script: ScenarioScript,
        *,
        registry: HandlerRegistry | None = None,
        raft_opts: dict | None = None,
        observe: Callable[[str, Invocation], None] | None = None,
    ):
        self.script = script
        self.observe = observe
        self.sim = Simulator(script.seed)
        self.net = Network(
            self.sim,
            script.dc_ids,
            script.latency,
            intra_dc_ms=script.intra_dc_ms,
            jitter_ms=script.jitter_ms,
            link_rate=script.link_rate,
        )
        self.trace = StorageTrace() if script.measure.staleness else None
        kw = {} if script.invoke_timeout_ms is None else {"invoke_timeout_ms": script.invoke_timeout_ms}
        self.platform = Platform(
            self.net,
            script.datacenters,
            registry=registry,
            scaler=script.scaler,
            storage_trace=self.trace,
            raft_opts=raft_opts,
            **kw,
        )
        self.ctl = ControlPlane(self.platform)
        self.flats: dict[str, FlattenedClass] = {}
        self.objects: dict[str, list[ObjectId]] = {}
        self.offered: dict[str, list[int]] = defaultdict(list)
        # function -> (arrival, replied, error name or None)
        self.done: dict[str, list[tuple[int, int, str | None]]] = defaultdict(list)
        self.replica_samples: list[tuple[int, dict[str, int]]] = []
        self.t0 = 0
        self.workloads: list[_Workload] = []
        self.session_pools: dict[str, list[SessionToken | None]] = {}

    # -- phases ---------------------------------------------------------------------

    def setup(self) -> None:
        script = self.script
        known = {c.name: c for c in script.classes}
        for defn in script.classes:
            self.flats[defn.name] = validate_class(defn, self.platform.registry, known)
        for name, flat in self.flats.items():
            spec = script.placement.get(name)
            plan = None
            if spec is not None:
                plan = PlacementPlan(name, list(spec.sites), len(spec.sites), {dc: dict(f) for dc, f in spec.reserved.items()})
            self.ctl.deploy_sync(flat, plan=plan)
        for name in self.flats:
            self.objects[name] = [self.platform.create_object(name) for _ in range(script.objects.get(name, 0))]
        self.sim.run(until=self.sim.now + ms(script.measure.settle_s))
        self.t0 = self.sim.now
        self.workloads = [_Workload(self, i, w) for i, w in enumerate(script.workloads)]
        for w in self.workloads:
            w.open_sessions()

    def schedule(self) -> None:
        t0 = self.t0
        for p in self.script.partitions:
            self.net.inject_partition(PartitionEvent(frozenset(p.a), frozenset(p.b), t0 + ms(p.start_s), ms(p.duration_s)))
        for o in self.script.outages:
            if o.duration_s is None:
                self.sim.schedule(t0 + ms(o.start_s), self.net.crash, o.dc)
            else:
                self.net.schedule_outage(o.dc, t0 + ms(o.start_s), ms(o.duration_s))
        for w in self.workloads:
            w.start()
        if self.script.measure.monitor:
            self.ctl.start_monitor()
        self._sample_replicas()

    def _sample_replicas(self) -> None:
        counts = {name: len(dep.plan.sites) for name, dep in sorted(self.platform.deployments.items())}
        self.replica_samples.append((self.sim.now, counts))
        if self.sim.now < self.end_ms:
            self.sim.call_later(ms(self.script.measure.sample_period_s), self._sample_replicas)

    @property
    def end_ms(self) -> int:
        return self.t0 + ms(self.script.horizon_s() + self.script.measure.drain_s)

    def _recorder(self, name: str):
        out = self.done[name]
        observe = self.observe

        def rec(inv: Invocation) -> None:
            out.append((inv.arrival, inv.replied, None if inv.error is None else type(inv.error).__name__))
            if observe is not None:
                observe(name, inv)

        return rec

    def execute(self) -> MetricsReport:
        self.setup()
        self.schedule()
        self.sim.run(until=self.end_ms)
        self.ctl.stop_monitor()
        return self.report()

    # -- reporting --------------------------------------------------------------------

    def _function_info(self, name: str) -> tuple[str, str | None, str]:
        """(mode, traced attribute key suffix, handler base) for ``Class.fn``."""
        cls, fn = name.split(".", 1)
        flat = self.flats[cls]
        base, arg = split_handler_id(flat.function(fn).handler)
        if arg is not None and flat.has_attribute(arg):
            return flat.member_sla[arg].consistency.mode, arg, base
        return flat.member_sla[fn].consistency.mode, None, base

    def report(self) -> MetricsReport:
        period = ms(self.script.measure.sample_period_s)
        t0 = self.t0
        nb = max(1, math.ceil((self.end_ms - t0) / period))

        def bucket(t: int) -> int | None:
            b = (t - t0) // period
            return b if 0 <= b < nb else None

        samples = staleness_samples(self.trace) if self.trace is not None else []
        stale_by: dict[tuple[str, str, int], int] = {}
        for s in samples:
            b = bucket(s.read_ms)
            if b is None:
                continue
            k = (s.obj.partition("#")[0], s.attribute, b)
            stale_by[k] = max(stale_by.get(k, 0), s.staleness_ms)
        wlat_by: dict[tuple[str, str, int], list[int]] = defaultdict(list)
        wlat_mode: dict[str, list[int]] = defaultdict(list)
        for w in self.trace.writes if self.trace is not None else []:
            wlat_mode[w.mode].append(w.ack - w.start)
            b = bucket(w.ack)
            if b is not None:
                obj, _, attr = w.key.rpartition("/")
                wlat_by[(obj.partition("#")[0], attr, b)].append(w.ack - w.start)

        replicas = [dict() for _ in range(nb)]
        for t, counts in self.replica_samples:
            b = bucket(t)
            if b is not None:
                replicas[b] = counts

        rows = []
        invocations = {}
        for name in sorted(set(self.offered) | set(self.done)):
            cls = name.split(".", 1)[0]
            mode, attr, base = self._function_info(name)
            offered = [0] * nb
            for t in self.offered[name]:
                b = bucket(t)
                if b is not None:
                    offered[b] += 1
            ok: list[list[int]] = [[] for _ in range(nb)]
            errs = [0] * nb
            by_error: Counter[str] = Counter()
            for arrival, replied, err in self.done[name]:
                if err is not None:
                    by_error[err] += 1
                b = bucket(replied)
                if b is None:
                    continue
                if err is None:
                    ok[b].append(replied - arrival)
                else:
                    errs[b] += 1
            n_ok = sum(1 for *_, e in self.done[name] if e is None)
            invocations[name] = {
                "offered": len(self.offered[name]),
                "committed": n_ok,
                "errors": len(self.done[name]) - n_ok,
                "by_error": dict(sorted(by_error.items())),
            }
            last = 0
            for b in range(nb):
                count = replicas[b].get(cls)
                last = count if count is not None else last
                stale = None
                wlat = None
                if attr is not None and base not in WRITERS - READERS:
                    stale = stale_by.get((cls, attr, b), 0 if ok[b] else None)
                if attr is not None and base not in READERS - WRITERS:
                    wl = wlat_by.get((cls, attr, b))
                    wlat = percentile(wl, 50) if wl else None
                p50 = percentile(ok[b], 50)
                rows.append(
                    MetricsRow(
                        t_sec=_num(b * period / 1000),
                        function=name,
                        mode=mode,
                        offered=_num(offered[b] * 1000 / period),
                        committed_rps=_num(len(ok[b]) * 1000 / period),
                        errors=errs[b],
                        p50_latency_ms=p50,
                        staleness_max_ms=stale,
                        write_latency_p50_ms=wlat,
                        replica_count=last,
                    )
                )
        rows.sort(key=lambda r: (r.t_sec, r.function))
        summary = {
            "t0_ms": t0,
            "duration_ms": self.end_ms - t0,
            "sample_period_ms": period,
            "invocations": invocations,
            "staleness": summarize(samples),
            "write_latency": {
                mode: {
                    "count": len(v),
                    "p50_ms": percentile(v, 50),
                    "p99_ms": percentile(v, 99),
                    "mean_ms": round(sum(v) / len(v), 6),
                    "max_ms": max(v),
                }
                for mode, v in sorted(wlat_mode.items())
            },
            "checks": self.checks(),
            "placement": {name: dep.plan.as_record() for name, dep in sorted(self.platform.deployments.items())},
            "partitions": [
                {"a": sorted(p.group_a), "b": sorted(p.group_b), "start_ms": p.start - t0, "duration_ms": p.duration}
                for p in self.net.partitions
            ],
            "crashes": [[t - t0, dc, what] for t, dc, what in self.net.crash_log],
            "network": {
                "sent": self.net.sent_count,
                "delivered": self.net.delivered_count,
                "dropped": self.net.drop_count,
                "drops_by_reason": dict(sorted(self.net.drops_by_reason.items())),
            },
            "corrections": [c.as_record() for c in self.ctl.corrections],
        }
        return MetricsReport(self.script.name, self.script.seed, rows, _plain(summary))

    def checks(self) -> dict[str, int]:
        if self.trace is None:
            return {}
        return {
            "strong_violations": len(check_strong_reads(self.trace)),
            "ryw_violations": len(check_ryw(self.trace)),
            "blocked": len(self.trace.blocked),
        }


def run_scenario(script: ScenarioScript, **kw) -> MetricsReport:
    """Deterministically run ``script``; the same script and seed give the same report."""
    return ScenarioRun(script, **kw).execute()
