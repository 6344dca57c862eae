"""The whole simulated deployment: datacenters, workers, class runtimes, routing.

Invocations travel as length-prefixed records on ``obj/<class>/<instance>``:

* request ``inv, corr, client_dc, class, instance, function, payload,
  session_id, event_source, event_kind``;
* reply ``res, corr, error_type, error_message, start, end, wait, cold,
  reserved, exec_dc, <result fields>`` (see :func:`slagrid.wire.encode_value`);
* object table updates ``new, class, instance`` and ``del, class, instance``.

Routing picks the executing datacenter for each call.  When the function
has a locality SLA it is the first preferred datacenter that hosts the class
and that the caller's failure detector trusts; with none trusted the call
fails rather than running elsewhere.  Otherwise calls are spread by smooth
weighted round robin over the trusted hosts, weighted by the function's
reserved slots there (or by datacenter capacity when nothing is reserved).
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from .. import errors as errs
from ..errors import (
    AlreadyDeleted,
    InvocationTimeout,
    NoReplicaAvailable,
    SlaGridError,
    UnknownClass,
    UnknownFunction,
    UnknownObject,
    UnknownRule,
)
from ..model import DatacenterProfile, FlattenedClass, ObjectId, TriggerEvent, TriggerRule
from ..session import SessionToken
from ..simnet import Envelope, EventHandle, Network
from ..wire import as_int, as_str, decode_record, decode_value, encode_record, encode_value
from .classrt import ClassRuntime, Deployment, Invocation, ObjMeta, event_payload
from .detector import FailureDetector
from .handlers import HandlerRegistry, TriggerEventInfo
from .storage import ClassStorage, StorageTrace
from .workers import DcWorkers, ScalerConfig

if TYPE_CHECKING:
    from ..control.placement import PlacementPlan

InvokeCallback = Callable[[Invocation], None]
INVOKE_TIMEOUT_MS = 2000


@dataclass(frozen=True)
class ObjectDescriptor:
    id: ObjectId
    sites: tuple[str, ...]
    created: int


def _error_fields(err: Exception | None) -> list:
    if err is None:
        return [None, None]
    return [type(err).__name__, str(err)]


def _error_from(name: str | None, msg: str | None) -> Exception | None:
    if name is None:
        return None
    cls = getattr(errs, name, None)
    if not (isinstance(cls, type) and issubclass(cls, SlaGridError)):
        cls = SlaGridError
    err = cls.__new__(cls)
    Exception.__init__(err, msg)
    if isinstance(err, errs.NotLeader):
        err.hint = None
    return err


class Platform:
    def __init__(
        self,
        net: Network,
        profiles: Iterable[DatacenterProfile],
        *,
        registry: HandlerRegistry | None = None,
        scaler: ScalerConfig | dict[str, ScalerConfig] | None = None,
        detector: FailureDetector | None = None,
        invoke_timeout_ms: int = INVOKE_TIMEOUT_MS,
        storage_trace: StorageTrace | None = None,
        raft_opts: dict | None = None,
    ):
        self.net = net
        self.sim = net.sim
        self.profiles = {p.id: p for p in profiles}
        self.registry = registry or HandlerRegistry()
        self.detector = detector or FailureDetector(net)
        self.invoke_timeout_ms = invoke_timeout_ms
        self.storage_trace = storage_trace
        self.raft_opts = raft_opts
        self.workers: dict[str, DcWorkers] = {}
        for dc, p in self.profiles.items():
            cfg = scaler.get(dc) if isinstance(scaler, dict) else scaler
            self.workers[dc] = DcWorkers(self.sim, dc, p.capacity, cfg)
            net.subscribe(dc, "obj/", self._on_obj, prefix=True)
        self.deployments: dict[str, Deployment] = {}
        self._staged: dict[str, Deployment] = {}
        self.observers: list[InvokeCallback] = []
        self.trigger_log: list[tuple[int, str, TriggerRule, ObjectId]] = []
        self._corr = itertools.count(1)
        self._pending: dict[int, tuple[Invocation, InvokeCallback | None, EventHandle]] = {}

    # -- deployment steps (driven by the control plane) ---------------------------

    def begin(self, flat: FlattenedClass, plan: PlacementPlan) -> Deployment:
        dep = Deployment(flat, plan)
        self._staged[flat.name] = dep
        return dep

    def prepare(self, dc: str, cls: str) -> None:
        """Hold this datacenter's reserved slots for the staged class."""
        dep = self._staged[cls]
        if not self.net.is_up(dc):
            raise errs.DeployFailed(dc, "datacenter down")
        wk = self.workers[dc]
        done: list[str] = []
        try:
            for fn, n in sorted(dep.plan.reserved.get(dc, {}).items()):
                wk.reserve(f"{cls}.{fn}", n)
                done.append(fn)
        except errs.InsufficientCapacity:
            for fn in done:
                wk.release_reservation(f"{cls}.{fn}")
            raise

    def start(self, dc: str, cls: str) -> ClassRuntime:
        dep = self._staged.get(cls) or self.deployments[cls]
        rt = ClassRuntime(self, dep, dc)
        for inst, meta in dep.objects.items():
            rt.add_object(inst)
            if meta.deleted is not None:
                rt.tombstone(inst)
        dep.runtimes[dc] = rt
        return rt

    def release(self, dc: str, cls: str) -> None:
        """Drop the runtime and reservations of ``cls`` at ``dc``."""
        dep = self._staged.get(cls) or self.deployments.get(cls)
        if dep is not None:
            dep.runtimes.pop(dc, None)
            for fn in dep.plan.reserved.get(dc, {}):
                self.workers[dc].release_reservation(f"{cls}.{fn}")

    def abort(self, cls: str, sites: Iterable[str]) -> None:
        for dc in sites:
            self.release(dc, cls)
        self._staged.pop(cls, None)

    def activate(self, cls: str) -> Deployment:
        dep = self._staged.pop(cls)
        dep.storage = ClassStorage(
            self.net, dep.flat, dep.plan.sites, self.detector, trace=self.storage_trace, raft_opts=self.raft_opts
        )
        self.deployments[cls] = dep
        return dep

    def deploy_now(self, flat: FlattenedClass, plan: PlacementPlan) -> Deployment:
        """Deploy without control-plane messaging (tests and tools)."""
        self.begin(flat, plan)
        prepared = []
        try:
            for dc in plan.sites:
                self.prepare(dc, flat.name)
                prepared.append(dc)
        except SlaGridError:
            self.abort(flat.name, prepared)
            raise
        for dc in plan.sites:
            self.start(dc, flat.name)
        return self.activate(flat.name)

    def add_site(self, cls: str, dc: str, reserved: dict[str, int] | None = None) -> None:
        """Start a further runtime of a deployed class (a correction)."""
        dep = self.deployments[cls]
        if dc in dep.plan.sites:
            return
        dep.plan.sites.append(dc)
        dep.plan.k = len(dep.plan.sites)
        if reserved:
            dep.plan.reserved[dc] = dict(reserved)
            for fn, n in reserved.items():
                self.workers[dc].reserve(f"{cls}.{fn}", n)
        self.start(dc, cls)
        dep.storage.add_site(dc)

    def drop_site(self, cls: str, dc: str) -> None:
        dep = self.deployments[cls]
        if dc not in dep.plan.sites:
            return
        self.release(dc, cls)
        dep.plan.sites.remove(dc)
        dep.plan.k = len(dep.plan.sites)
        dep.plan.reserved.pop(dc, None)
        dep.storage.remove_site(dc)

    def set_reservation(self, cls: str, dc: str, fn: str, slots: int) -> None:
        dep = self.deployments[cls]
        self.workers[dc].reserve(f"{cls}.{fn}", slots)
        dep.plan.reserved.setdefault(dc, {})[fn] = slots

    def _dep(self, cls: str) -> Deployment:
        dep = self.deployments.get(cls)
        if dep is None:
            raise UnknownClass(f"class {cls!r} is not deployed")
        return dep

    # -- objects ----------------------------------------------------------------------

    def create_object(self, cls: str, *, dc: str | None = None) -> ObjectId:
        dep = self._dep(cls)
        entry = dc or dep.plan.sites[0]
        dep.next_instance += 1
        inst = dep.next_instance
        dep.objects[inst] = ObjMeta(self.sim.now)
        self._propagate(dep, entry, "new", inst)
        return ObjectId(cls, inst)

    def get_object(self, obj: ObjectId) -> ObjectDescriptor:
        dep = self._dep(obj.class_name)
        meta = dep.objects.get(obj.instance)
        if meta is None:
            raise UnknownObject(str(obj))
        if meta.deleted is not None:
            raise AlreadyDeleted(str(obj))
        return ObjectDescriptor(obj, tuple(dep.plan.sites), meta.created)

    def delete_object(self, obj: ObjectId, *, dc: str | None = None) -> None:
        dep = self._dep(obj.class_name)
        meta = dep.objects.get(obj.instance)
        if meta is None:
            raise UnknownObject(str(obj))
        if meta.deleted is not None:
            raise AlreadyDeleted(str(obj))
        meta.deleted = self.sim.now
        entry = dc or dep.plan.sites[0]
        self._propagate(dep, entry, "del", obj.instance)
        for attr in dep.flat.attributes:
            self._fire(dep, attr.name, TriggerEvent.ON_DELETE, obj, entry)

    def _propagate(self, dep: Deployment, entry: str, kind: str, inst: int) -> None:
        for site in dep.plan.sites:
            rt = dep.runtimes.get(site)
            if site == entry and rt is not None:
                (rt.add_object if kind == "new" else rt.tombstone)(inst)
            else:
                self.net.post(entry, site, f"obj/{dep.name}/{inst}", encode_record(kind, dep.name, inst))

    # -- triggers --------------------------------------------------------------------

    def register_trigger(self, cls: str, rule: TriggerRule) -> None:
        dep = self._dep(cls)
        flat = dep.flat
        if not flat.has_function(rule.target_function):
            raise errs.UnknownMember(f"{cls}: trigger targets unknown function {rule.target_function!r}")
        if flat.has_function(rule.source):
            if not rule.event.for_function:
                raise errs.EventKindMismatch(f"{rule.event.value} is not a function event")
        elif flat.has_attribute(rule.source):
            if rule.event.for_function:
                raise errs.EventKindMismatch(f"{rule.event.value} is not an attribute event")
        else:
            raise errs.DanglingTriggerSource(f"{cls}: trigger source {rule.source!r} is not a member")
        if rule in dep.suppressed:
            dep.suppressed.remove(rule)
        if rule not in dep.triggers:
            dep.triggers.append(rule)

    def suppress(self, cls: str, rule: TriggerRule) -> None:
        dep = self._dep(cls)
        if rule not in dep.triggers:
            raise UnknownRule(f"{cls}: no active rule {rule}")
        dep.triggers.remove(rule)
        dep.suppressed.append(rule)

    def _fire(self, dep: Deployment, source: str, event: TriggerEvent, obj: ObjectId, dc: str) -> None:
        for rule in dep.rules_for(source, event):
            self.trigger_log.append((self.sim.now, dep.name, rule, obj))
            info = TriggerEventInfo(source, event.value, obj)
            self.invoke(obj, rule.target_function, event_payload(info), client_dc=dc, event=info)

    def attribute_written(self, dep: Deployment, obj: ObjectId, attr: str, dc: str) -> None:
        meta = dep.objects.get(obj.instance)
        if meta is not None and attr not in meta.written:
            meta.written.add(attr)
            self._fire(dep, attr, TriggerEvent.ON_CREATE, obj, dc)
        self._fire(dep, attr, TriggerEvent.ON_UPDATE, obj, dc)

    # -- sessions --------------------------------------------------------------------

    def open_session(self, cls: str, client_dc: str) -> SessionToken:
        return self._dep(cls).storage.open_session(client_dc)

    # -- invocation ------------------------------------------------------------------

    def route(self, dep: Deployment, function: str, client_dc: str, session: SessionToken | None = None) -> str | None:
        det = self.detector
        hosts = [dc for dc in dep.plan.sites if dc in dep.runtimes]
        sla = dep.flat.member_sla[function]
        if sla.locality:
            for dc in sla.locality:
                if dc in dep.runtimes and det.reachable(client_dc, dc):
                    return dc
            return None
        cands = [dc for dc in hosts if det.reachable(client_dc, dc)]
        # a session's calls run beside its pinned replica unless reservations say otherwise
        if session is not None and session.pinned in cands:
            held = {dc for dc in cands if dep.plan.reserved.get(dc, {}).get(function)}
            if not held or session.pinned in held:
                return session.pinned
        if len(cands) <= 1:
            return cands[0] if cands else None
        weights = {}
        for dc in cands:
            w = dep.plan.reserved.get(dc, {}).get(function, 0)
            weights[dc] = w
        if not any(weights.values()):
            weights = {dc: self.profiles[dc].capacity for dc in cands}
        cur = dep.wrr.setdefault(function, {})
        total = 0
        best = None
        for dc in cands:
            w = weights[dc]
            cur[dc] = cur.get(dc, 0) + w
            total += w
            if best is None or cur[dc] > cur[best]:
                best = dc
        cur[best] -= total
        return best

    def invoke(
        self,
        target: ObjectId,
        function: str,
        payload: bytes = b"",
        *,
        client_dc: str,
        cb: InvokeCallback | None = None,
        session: SessionToken | None = None,
        event: TriggerEventInfo | None = None,
    ) -> Invocation:
        """Call ``function`` on ``target`` from ``client_dc``; ``cb(inv)`` runs on completion."""
        now = self.sim.now
        inv = Invocation(target, function, payload, now, next(self._corr), client_dc, session=session, event=event)
        dep = self.deployments.get(target.class_name)
        if dep is None:
            return self._complete(inv, cb, UnknownClass(f"class {target.class_name!r} is not deployed"))
        if function not in dep.functions:
            return self._complete(inv, cb, UnknownFunction(f"{target.class_name} has no function {function!r}"))
        if not self.net.is_up(client_dc):
            return self._complete(inv, cb, NoReplicaAvailable(f"{client_dc} is down"))
        dc = self.route(dep, function, client_dc, session)
        if dc is None:
            return self._complete(inv, cb, NoReplicaAvailable(f"no runtime for {target.class_name}.{function} reachable from {client_dc}"))
        if dc == client_dc:
            dep.runtimes[dc].execute(inv, lambda i: self._done(dep, i, cb))
            return inv
        timer = self.sim.call_later(self.invoke_timeout_ms, self._timeout, inv.corr)
        self._pending[inv.corr] = (inv, cb, timer)
        ev = event or TriggerEventInfo(None, None, target)
        rec = encode_record(
            "inv", inv.corr, client_dc, target.class_name, target.instance, function, payload,
            session.session_id if session else None, ev.source, ev.event,
        )
        self.net.post(client_dc, dc, f"obj/{target.class_name}/{target.instance}", rec)
        return inv

    def _complete(self, inv: Invocation, cb: InvokeCallback | None, err: Exception) -> Invocation:
        inv.start = inv.end = self.sim.now
        inv.error = err
        self._notify(inv, cb)
        return inv

    def _notify(self, inv: Invocation, cb: InvokeCallback | None) -> None:
        inv.replied = self.sim.now
        for obs in self.observers:
            obs(inv)
        if cb is not None:
            cb(inv)

    def _done(self, dep: Deployment, inv: Invocation, cb: InvokeCallback | None) -> None:
        """Completion at the executing datacenter (local callers included)."""
        self._after(dep, inv)
        self._notify(inv, cb)

    def _after(self, dep: Deployment, inv: Invocation) -> None:
        if inv.exec_dc is None or inv.start is None:
            return
        ok = inv.error is None
        if isinstance(inv.error, (UnknownObject, AlreadyDeleted, errs.NoCapacity)):
            return  # never ran
        self._fire(dep, inv.function, TriggerEvent.ON_COMPLETE if ok else TriggerEvent.ON_FAILURE, inv.target, inv.exec_dc)

    def _timeout(self, corr: int) -> None:
        pending = self._pending.pop(corr, None)
        if pending is not None:
            inv, cb, _ = pending
            self._complete(inv, cb, InvocationTimeout(f"no reply for {inv.target}.{inv.function}"))

    def _on_obj(self, env: Envelope) -> None:
        f = decode_record(env.payload)
        kind = as_str(f[0])
        if kind == "inv":
            self._on_request(env, f)
        elif kind == "res":
            self._on_reply(f)
        else:
            dep = self.deployments.get(as_str(f[1])) or self._staged.get(as_str(f[1]))
            rt = dep.runtimes.get(env.dst) if dep else None
            if rt is not None:
                (rt.add_object if kind == "new" else rt.tombstone)(as_int(f[2]))

    def _on_request(self, env: Envelope, f: list) -> None:
        corr, client_dc, cls, inst = as_int(f[1]), as_str(f[2]), as_str(f[3]), as_int(f[4])
        function, payload, sid = as_str(f[5]), f[6] or b"", as_int(f[7])
        src, kind = as_str(f[8]), as_str(f[9])
        target = ObjectId(cls, inst)
        inv = Invocation(target, function, payload, self.sim.now, corr, client_dc)
        if src is not None:
            inv.event = TriggerEventInfo(src, kind, target)
        here = env.dst
        dep = self.deployments.get(cls)
        rt = dep.runtimes.get(here) if dep else None

        def reply(i: Invocation) -> None:
            if dep is not None:
                self._after(dep, i)
            try:
                body = encode_value(i.result)
                err = i.error
            except TypeError as exc:
                body, err = ["n"], errs.HandlerError(str(exc))
            rec = encode_record(
                "res", corr, *_error_fields(err), i.start, i.end, i.wait, i.cold, int(i.reserved), here, *body
            )
            self.net.post(here, client_dc, f"obj/{cls}/{inst}", rec)

        if rt is None:
            inv.start = inv.end = self.sim.now
            inv.error = NoReplicaAvailable(f"no runtime of {cls} at {here}")
            reply(inv)
            return
        if sid is not None:
            inv.session = dep.storage.tokens.get(sid)
        rt.execute(inv, reply)

    def _on_reply(self, f: list) -> None:
        corr = as_int(f[1])
        pending = self._pending.pop(corr, None)
        if pending is None:
            return
        inv, cb, timer = pending
        timer.cancel()
        inv.error = _error_from(as_str(f[2]), as_str(f[3]))
        inv.start, inv.end = as_int(f[4]), as_int(f[5])
        inv.wait, inv.cold, inv.reserved = as_int(f[6]), as_int(f[7]), bool(as_int(f[8]))
        inv.exec_dc = as_str(f[9])
        inv.result = decode_value(f[10:])
        self._notify(inv, cb)

    # -- helpers ---------------------------------------------------------------------

    def call(self, fn: Callable[[Callable[[Any], None]], Any], *, limit_ms: int = 10_000) -> Any:
        """Run the simulation until the callback handed to ``fn`` fires; return its argument."""
        box: list = []
        fn(box.append)
        self.sim.run_until(lambda: bool(box), self.sim.now + limit_ms)
        if not box:
            raise TimeoutError("operation did not complete")
        return box[0]

    def invoke_sync(self, target: ObjectId, function: str, payload: bytes = b"", *, client_dc: str, **kw) -> Invocation:
        return self.call(lambda done: self.invoke(target, function, payload, client_dc=client_dc, cb=done, **kw))
