"""One class's runtime inside one datacenter, and the class-wide deployment record.

A :class:`ClassRuntime` keeps the local object table and executes
invocations: it admits them to a worker slot, holds the slot for the
function's service time (plus any cold start), then runs the handler and
its storage operations.  The slot is released when the compute part ends;
storage round trips happen after it, so reservations size compute only.
"""

from __future__ import annotations

from collections.abc import Callable, Generator
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from ..errors import (
    AlreadyDeleted,
    HandlerError,
    NoCapacity,
    SlaGridError,
    UnknownMember,
    UnknownObject,
)
from ..model import FlattenedClass, FunctionDef, ObjectId, TriggerEvent, TriggerRule
from ..session import SessionToken
from ..wire import encode_record
from .handlers import Commit, Ctx, Invoke, Refresh, TriggerEventInfo, run_plain
from .storage import ClassStorage
from .workers import Slot

if TYPE_CHECKING:
    from ..control.placement import PlacementPlan
    from .platform import Platform

Done = Callable[["Invocation"], None]
OpCallback = Callable[[Exception | None, Any], None]


@dataclass(slots=True, eq=False)
class Invocation:
    """One function call; times are sim-ms and ``arrival <= start <= end``."""

    target: ObjectId
    function: str
    payload: bytes
    arrival: int
    corr: int
    client_dc: str
    reserved: bool = False
    exec_dc: str | None = None
    start: int | None = None
    end: int | None = None
    replied: int | None = None  # when the caller saw the outcome
    wait: int = 0
    cold: int = 0
    error: Exception | None = None
    result: Any = None
    session: SessionToken | None = None
    event: TriggerEventInfo | None = None


@dataclass
class ObjMeta:
    created: int
    deleted: int | None = None
    written: set[str] = field(default_factory=set)


@dataclass
class Deployment:
    """Everything the platform knows about one deployed class."""

    flat: FlattenedClass
    plan: PlacementPlan
    storage: ClassStorage | None = None
    runtimes: dict[str, ClassRuntime] = field(default_factory=dict)
    triggers: list[TriggerRule] = field(default_factory=list)
    suppressed: list[TriggerRule] = field(default_factory=list)
    objects: dict[int, ObjMeta] = field(default_factory=dict)
    next_instance: int = 0
    wrr: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        self.functions: dict[str, FunctionDef] = {f.name: f for f in self.flat.functions}
        self.triggers = list(self.flat.triggers)

    @property
    def name(self) -> str:
        return self.flat.name

    def rules_for(self, source: str, event: TriggerEvent) -> list[TriggerRule]:
        return [r for r in self.triggers if r.source == source and r.event is event]


def event_payload(info: TriggerEventInfo) -> bytes:
    return encode_record(info.source, info.event, str(info.obj))


class ClassRuntime:
    def __init__(self, platform: Platform, dep: Deployment, dc: str):
        self.platform = platform
        self.dep = dep
        self.dc = dc
        self.sim = platform.sim
        self.workers = platform.workers[dc]
        self.objects: dict[int, bool] = {}  # instance -> deleted
        self.executed = 0

    # -- object table -----------------------------------------------------------

    def add_object(self, instance: int) -> None:
        self.objects.setdefault(instance, False)

    def tombstone(self, instance: int) -> None:
        self.objects[instance] = True

    # -- execution ------------------------------------------------------------------

    def execute(self, inv: Invocation, done: Done) -> None:
        inv.exec_dc = self.dc
        state = self.objects.get(inv.target.instance)
        if state is None:
            self._fail(inv, UnknownObject(f"{inv.target} is not known at {self.dc}"), done)
            return
        if state and not (inv.event is not None and inv.event.event == TriggerEvent.ON_DELETE.value):
            self._fail(inv, AlreadyDeleted(f"{inv.target} was deleted"), done)
            return
        fn = self.dep.functions[inv.function]
        key = f"{self.dep.name}.{fn.name}"

        def start(slot: Slot, wait: int, cold: int) -> None:
            inv.start = self.sim.now
            inv.wait = wait
            inv.cold = cold
            inv.reserved = slot.reserved
            self.sim.call_later(cold + fn.service_ms, self._computed, inv, fn, slot, done)

        try:
            self.workers.admit(key, fn.service_ms, start)
        except NoCapacity as exc:
            self._fail(inv, exc, done)

    def _fail(self, inv: Invocation, err: Exception, done: Done) -> None:
        now = self.sim.now
        inv.start = inv.start if inv.start is not None else now
        inv.end = now
        inv.error = err
        done(inv)

    def _computed(self, inv: Invocation, fn: FunctionDef, slot: Slot, done: Done) -> None:
        self.workers.release(slot)
        self.executed += 1
        handler, arg = self.platform.registry.resolve(fn.handler)
        ctx = Ctx(inv.target, inv.payload, self.dc, arg, inv.event)
        try:
            result, gen = run_plain(handler, ctx)
        except SlaGridError as exc:
            self._finish(inv, exc, None, done)
            return
        except Exception as exc:  # handler bugs surface as HandlerError
            self._finish(inv, HandlerError(f"{fn.name}: {exc!r}"), None, done)
            return
        if gen is not None:
            self._drive(inv, gen, None, done)
        else:
            self._run_queued(inv, list(ctx.queued), 0, result, done)

    def _run_queued(self, inv: Invocation, ops: list, i: int, result: Any, done: Done) -> None:
        if i == len(ops):
            self._finish(inv, None, result, done)
            return

        def next_op(err, _val):
            if err is not None:
                self._finish(inv, err, None, done)
            else:
                self._run_queued(inv, ops, i + 1, result, done)

        self._do_op(inv, ops[i], next_op)

    def _drive(self, inv: Invocation, gen: Generator, value: Any, done: Done) -> None:
        try:
            op = gen.send(value)
        except StopIteration as stop:
            self._finish(inv, None, stop.value, done)
            return
        except SlaGridError as exc:
            self._finish(inv, exc, None, done)
            return
        except Exception as exc:
            self._finish(inv, HandlerError(f"{inv.function}: {exc!r}"), None, done)
            return

        def resume(err, val):
            if err is not None:
                gen.close()
                self._finish(inv, err, None, done)
            else:
                self._drive(inv, gen, val, done)

        self._do_op(inv, op, resume)

    def _finish(self, inv: Invocation, err: Exception | None, result: Any, done: Done) -> None:
        inv.end = self.sim.now
        inv.error = err
        inv.result = result
        done(inv)

    # -- storage and relays -------------------------------------------------------------

    def _session(self, inv: Invocation, attr: str) -> SessionToken | None:
        storage = self.dep.storage
        if storage.modes[attr].mode != "ryw":
            return None
        if inv.session is None:
            inv.session = storage.open_session(self.dc)
        return inv.session

    def _do_op(self, inv: Invocation, op: Any, cb: OpCallback) -> None:
        if isinstance(op, Invoke):
            self.platform.invoke(op.target, op.function, op.payload, client_dc=self.dc, cb=lambda i: cb(i.error, i.result))
            return
        if not isinstance(op, (Refresh, Commit)):
            cb(HandlerError(f"{inv.function} yielded {op!r}, not a storage or invoke operation"), None)
            return
        storage = self.dep.storage
        if op.attr not in storage.modes:
            cb(UnknownMember(f"{self.dep.name} has no attribute {op.attr!r}"), None)
            return
        try:
            session = self._session(inv, op.attr)
        except SlaGridError as exc:
            cb(exc, None)
            return
        if isinstance(op, Refresh):
            storage.read(self.dc, inv.target, op.attr, cb, session)
            return

        def committed(err, _val):
            if err is None:
                self.platform.attribute_written(self.dep, inv.target, op.attr, self.dc)
            cb(err, None)

        storage.write(self.dc, inv.target, op.attr, op.value, committed, session)
