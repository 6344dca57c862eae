"""Scenario documents: datacenters, classes, workloads and a fault schedule.

A scenario is one YAML mapping.  Times are in simulated seconds and are
relative to the end of the setup phase (deploy, object creation, settle)::

    name: partition-demo
    seed: 7
    datacenters:
      - {id: edge, tier: edge, capacity: 64, failure_prob: 0.01}
      - {id: cloud, tier: cloud, capacity: 256, failure_prob: 0.001}
    latency: {edge: {cloud: 17}}          # one-way ms, symmetric
    network: {jitter_ms: 0, link_rate: [[edge, cloud, 1000]]}
    classes:
      - kv.yaml                            # path relative to this file
      - {name: Inline, sla: {consistency: ryw, availability: 0.99}, ...}
    placement:                             # optional, overrides the placer
      Inline: {sites: [edge, cloud], reserved: {edge: {put: 2}}}
    objects: {Inline: 10}
    workloads:
      - {class: Inline, function: put, rate: 100, duration: 10,
         client_dc: edge, start: 0, objects: 10, sessions: 0}
    partitions:
      - {a: [edge], b: [cloud], start: 5, duration: 2}
    outages:
      - {dc: edge, start: 3, duration: 1}  # duration omitted: never recovers
    measure: {staleness: true, sample_period: 1, settle: 1, drain: 3, monitor: false}

``sessions`` is 0 for a fresh session per invocation or the size of a pool
of long-lived sessions reused round robin.  Workloads naming the same
``session_pool`` share one pool, opened by the first of them.  ``payload`` is ``unique``
(default, a distinct value per call) or a literal string.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..classfile import class_from_dict, load_classes
from ..errors import ScriptError, ValidationError
from ..model import ClassDefinition, DatacenterProfile, Tier
from ..runtime.workers import ScalerConfig


@dataclass(frozen=True)
class WorkloadSpec:
    cls: str
    function: str
    rate: float  # invocations per simulated second, open loop
    duration_s: float
    client_dc: str
    start_s: float = 0.0
    objects: int | None = None  # None: every object of the class
    sessions: int = 0
    payload: str = "unique"
    session_pool: str | None = None


@dataclass(frozen=True)
class PartitionSpec:
    a: tuple[str, ...]
    b: tuple[str, ...]
    start_s: float
    duration_s: float


@dataclass(frozen=True)
class OutageSpec:
    dc: str
    start_s: float
    duration_s: float | None = None


@dataclass(frozen=True)
class PlacementSpec:
    sites: tuple[str, ...]
    reserved: dict[str, dict[str, int]] = field(default_factory=dict)


@dataclass(frozen=True)
class MeasureSpec:
    staleness: bool = True
    sample_period_s: float = 1.0
    settle_s: float = 1.0
    drain_s: float = 3.0
    monitor: bool = False


@dataclass
class ScenarioScript:
    name: str
    seed: int
    datacenters: list[DatacenterProfile]
    latency: dict[tuple[str, str], float]
    classes: list[ClassDefinition]
    workloads: list[WorkloadSpec] = field(default_factory=list)
    partitions: list[PartitionSpec] = field(default_factory=list)
    outages: list[OutageSpec] = field(default_factory=list)
    objects: dict[str, int] = field(default_factory=dict)
    placement: dict[str, PlacementSpec] = field(default_factory=dict)
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    jitter_ms: int = 0
    intra_dc_ms: int = 0
    link_rate: dict[tuple[str, str], float] = field(default_factory=dict)
    scaler: ScalerConfig | None = None
    invoke_timeout_ms: int | None = None

    @property
    def dc_ids(self) -> list[str]:
        return [d.id for d in self.datacenters]

    def horizon_s(self) -> float:
        """End of the last workload or fault, relative to the workload start."""
        ends = [w.start_s + w.duration_s for w in self.workloads]
        ends += [p.start_s + p.duration_s for p in self.partitions]
        ends += [o.start_s + (o.duration_s or 0) for o in self.outages]
        return max(ends, default=0.0)


def ms(seconds: float) -> int:
    return round(seconds * 1000)


# -- parsing ---------------------------------------------------------------------


def _need(doc: dict, key: str, where: str) -> Any:
    if not isinstance(doc, dict):
        raise ScriptError("expected a mapping", where)
    if key not in doc:
        raise ScriptError(f"missing {key!r}", where)
    return doc[key]


def _num(raw: Any, where: str, *, positive: bool = False, minimum: float | None = 0.0) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ScriptError(f"expected a number, got {raw!r}", where)
    if positive and raw <= 0:
        raise ScriptError(f"must be positive, got {raw!r}", where)
    if minimum is not None and raw < minimum:
        raise ScriptError(f"must be >= {minimum}, got {raw!r}", where)
    return float(raw)


def _dcs(raw: Any, where: str) -> tuple[str, ...]:
    if isinstance(raw, str):
        raw = [raw]
    if not isinstance(raw, list) or not raw:
        raise ScriptError("expected a non-empty list of datacenter ids", where)
    return tuple(str(x) for x in raw)


def _latency(raw: Any, where: str) -> dict[tuple[str, str], float]:
    out: dict[tuple[str, str], float] = {}
    if raw is None:
        return out
    if isinstance(raw, dict):
        for a, row in raw.items():
            if not isinstance(row, dict):
                raise ScriptError("expected {a: {b: ms}}", f"{where}.{a}")
            for b, v in row.items():
                out[(str(a), str(b))] = _num(v, f"{where}.{a}.{b}")
        return out
    if isinstance(raw, list):
        for i, item in enumerate(raw):
            if not (isinstance(item, list) and len(item) == 3):
                raise ScriptError("expected [a, b, ms]", f"{where}[{i}]")
            out[(str(item[0]), str(item[1]))] = _num(item[2], f"{where}[{i}]")
        return out
    raise ScriptError("expected a mapping or a list of [a, b, ms]", where)


def _classes(raw: Any, where: str, base: Path | None) -> list[ClassDefinition]:
    if not isinstance(raw, list):
        raise ScriptError("expected a list of class files or class documents", where)
    out: list[ClassDefinition] = []
    for i, item in enumerate(raw):
        loc = f"{where}[{i}]"
        if isinstance(item, str):
            path = Path(item)
            if not path.is_absolute() and base is not None:
                path = base / path
            if not path.exists():
                raise ScriptError(f"class file {item!r} not found", loc)
            out.extend(load_classes(path))
        elif isinstance(item, dict):
            out.append(class_from_dict(item, loc))
        else:
            raise ScriptError("expected a file name or a class document", loc)
    return out


def script_from_dict(doc: Any, *, base: Path | None = None, where: str = "<scenario>") -> ScenarioScript:
    """Build and validate a :class:`ScenarioScript`; errors carry their location."""
    if not isinstance(doc, dict):
        raise ScriptError("scenario must be a mapping", where)
    seed = _need(doc, "seed", where)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScriptError(f"seed must be an integer, got {seed!r}", f"{where}.seed")

    dcs: list[DatacenterProfile] = []
    for i, d in enumerate(_need(doc, "datacenters", where) or []):
        loc = f"{where}.datacenters[{i}]"
        try:
            dcs.append(
                DatacenterProfile(
                    str(_need(d, "id", loc)),
                    Tier(d.get("tier", "edge")),
                    int(_num(_need(d, "capacity", loc), f"{loc}.capacity")),
                    _num(d.get("failure_prob", 0.01), f"{loc}.failure_prob"),
                )
            )
        except (ValueError, ValidationError) as exc:
            raise ScriptError(str(exc), loc) from exc
    if not dcs:
        raise ScriptError("at least one datacenter is required", f"{where}.datacenters")
    ids = [d.id for d in dcs]
    if len(set(ids)) != len(ids):
        raise ScriptError("duplicate datacenter id", f"{where}.datacenters")
    known = set(ids)

    def check_dc(dc: str, loc: str) -> str:
        if dc not in known:
            raise ScriptError(f"unknown datacenter {dc!r}", loc)
        return dc

    latency = _latency(doc.get("latency"), f"{where}.latency")
    for a, b in latency:
        check_dc(a, f"{where}.latency")
        check_dc(b, f"{where}.latency")

    net = doc.get("network") or {}
    link_rate = {}
    for i, item in enumerate(net.get("link_rate") or []):
        loc = f"{where}.network.link_rate[{i}]"
        if not (isinstance(item, list) and len(item) == 3):
            raise ScriptError("expected [src, dst, messages_per_second]", loc)
        link_rate[(check_dc(str(item[0]), loc), check_dc(str(item[1]), loc))] = _num(item[2], loc, positive=True)

    classes = _classes(_need(doc, "classes", where), f"{where}.classes", base)
    names = {c.name for c in classes}

    def check_cls(name: str, loc: str) -> str:
        if name not in names:
            raise ScriptError(f"unknown class {name!r}", loc)
        return name

    objects = {}
    for name, n in (doc.get("objects") or {}).items():
        loc = f"{where}.objects.{name}"
        objects[check_cls(str(name), loc)] = int(_num(n, loc))

    placement = {}
    for name, p in (doc.get("placement") or {}).items():
        loc = f"{where}.placement.{name}"
        check_cls(str(name), loc)
        sites = tuple(check_dc(s, f"{loc}.sites") for s in _dcs(_need(p, "sites", loc), f"{loc}.sites"))
        reserved = {
            check_dc(str(dc), f"{loc}.reserved"): {str(f): int(_num(n, f"{loc}.reserved.{dc}.{f}")) for f, n in fns.items()}
            for dc, fns in (p.get("reserved") or {}).items()
        }
        placement[str(name)] = PlacementSpec(sites, reserved)

    defs = {c.name: c for c in classes}
    workloads = []
    for i, w in enumerate(doc.get("workloads") or []):
        loc = f"{where}.workloads[{i}]"
        cls = check_cls(str(_need(w, "class", loc)), f"{loc}.class")
        fn = str(_need(w, "function", loc))
        if not _has_function(defs, cls, fn):
            raise ScriptError(f"class {cls} has no function {fn!r}", f"{loc}.function")
        workloads.append(
            WorkloadSpec(
                cls,
                fn,
                _num(_need(w, "rate", loc), f"{loc}.rate"),
                _num(_need(w, "duration", loc), f"{loc}.duration", positive=True),
                check_dc(str(_need(w, "client_dc", loc)), f"{loc}.client_dc"),
                _num(w.get("start", 0), f"{loc}.start"),
                None if w.get("objects") is None else int(_num(w["objects"], f"{loc}.objects", positive=True)),
                int(_num(w.get("sessions", 0), f"{loc}.sessions")),
                str(w.get("payload", "unique")),
                None if w.get("session_pool") is None else str(w["session_pool"]),
            )
        )

    partitions = []
    for i, p in enumerate(doc.get("partitions") or []):
        loc = f"{where}.partitions[{i}]"
        a = tuple(check_dc(x, f"{loc}.a") for x in _dcs(_need(p, "a", loc), f"{loc}.a"))
        b = tuple(check_dc(x, f"{loc}.b") for x in _dcs(_need(p, "b", loc), f"{loc}.b"))
        if set(a) & set(b):
            raise ScriptError("partition sides overlap", loc)
        partitions.append(
            PartitionSpec(a, b, _num(_need(p, "start", loc), f"{loc}.start"), _num(_need(p, "duration", loc), f"{loc}.duration", positive=True))
        )

    outages = []
    for i, o in enumerate(doc.get("outages") or []):
        loc = f"{where}.outages[{i}]"
        dur = o.get("duration")
        outages.append(
            OutageSpec(
                check_dc(str(_need(o, "dc", loc)), f"{loc}.dc"),
                _num(_need(o, "start", loc), f"{loc}.start"),
                None if dur is None else _num(dur, f"{loc}.duration", positive=True),
            )
        )

    m = doc.get("measure") or {}
    loc = f"{where}.measure"
    measure = MeasureSpec(
        bool(m.get("staleness", True)),
        _num(m.get("sample_period", 1.0), f"{loc}.sample_period", positive=True),
        _num(m.get("settle", 1.0), f"{loc}.settle"),
        _num(m.get("drain", 3.0), f"{loc}.drain"),
        bool(m.get("monitor", False)),
    )

    scaler = None
    if doc.get("scaler") is not None:
        try:
            scaler = ScalerConfig(**doc["scaler"])
        except TypeError as exc:
            raise ScriptError(str(exc), f"{where}.scaler") from exc

    timeout = doc.get("invoke_timeout_ms")
    return ScenarioScript(
        name=str(doc.get("name", where)),
        seed=seed,
        datacenters=dcs,
        latency=latency,
        classes=classes,
        workloads=workloads,
        partitions=partitions,
        outages=outages,
        objects=objects,
        placement=placement,
        measure=measure,
        jitter_ms=int(_num(net.get("jitter_ms", 0), f"{where}.network.jitter_ms")),
        intra_dc_ms=int(_num(net.get("intra_dc_ms", 0), f"{where}.network.intra_dc_ms")),
        link_rate=link_rate,
        scaler=scaler,
        invoke_timeout_ms=None if timeout is None else int(_num(timeout, f"{where}.invoke_timeout_ms", positive=True)),
    )


def _has_function(defs: dict[str, ClassDefinition], cls: str, fn: str) -> bool:
    seen: set[str] = set()
    while cls in defs and cls not in seen:
        seen.add(cls)
        if any(f.name == fn for f in defs[cls].functions):
            return True
        cls = defs[cls].parent or ""
    return False


def load_script(path: str | Path) -> ScenarioScript:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ScriptError(str(exc), str(path)) from exc
    except yaml.YAMLError as exc:
        raise ScriptError(f"invalid YAML ({exc})", str(path)) from exc
    return script_from_dict(doc, base=path.parent, where=str(path))
