"""Domain types: SLA records, class definitions, datacenter profiles.

``validate_class`` turns a (possibly inheriting) :class:`ClassDefinition` into a
:class:`FlattenedClass` whose members each carry one fully resolved
:class:`SlaSpec`.  Everything here is an immutable value type.
"""

from __future__ import annotations

import enum
from collections.abc import Container, Mapping
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple, Union

from .errors import (
    DanglingTriggerSource,
    DuplicateMember,
    EventKindMismatch,
    InheritanceCycle,
    InvalidSla,
    TriggerCycle,
    UnknownHandler,
    UnknownMember,
    UnknownParent,
)

# -- consistency modes ------------------------------------------------------


@dataclass(frozen=True)
class Strong:
    mode = "strong"


@dataclass(frozen=True)
class BoundedStaleness:
    delta_s: float
    mode = "bounded"

    @property
    def delta_ms(self) -> int:
        return int(round(self.delta_s * 1000))


@dataclass(frozen=True)
class ReadYourWrite:
    mode = "ryw"


Consistency = Union[Strong, BoundedStaleness, ReadYourWrite]


@dataclass(frozen=True)
class SlaSpec:
    """Declarative QoS record attached to a class or one of its members."""

    consistency: Consistency
    availability: float
    throughput: int | None = None
    locality: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.locality is not None and not isinstance(self.locality, tuple):
            object.__setattr__(self, "locality", tuple(self.locality))
        check_sla(self)


def check_sla(sla: SlaSpec) -> None:
    c = sla.consistency
    if not isinstance(c, (Strong, BoundedStaleness, ReadYourWrite)):
        raise InvalidSla(f"unknown consistency {c!r}")
    if isinstance(c, BoundedStaleness) and not c.delta_s > 0:
        raise InvalidSla(f"bounded staleness delta must be positive, got {c.delta_s}")
    if not 0 <= sla.availability < 1:
        raise InvalidSla(f"availability must lie in [0, 1), got {sla.availability}")
    if sla.throughput is not None and (int(sla.throughput) != sla.throughput or sla.throughput < 1):
        raise InvalidSla(f"throughput floor must be an integer >= 1, got {sla.throughput}")


@dataclass(frozen=True)
class SlaOverride:
    """Partial SLA: any field left as ``None`` falls through to the default."""

    consistency: Consistency | None = None
    availability: float | None = None
    throughput: int | None = None
    locality: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.locality is not None and not isinstance(self.locality, tuple):
            object.__setattr__(self, "locality", tuple(self.locality))

    @classmethod
    def full(cls, sla: SlaSpec) -> SlaOverride:
        return cls(sla.consistency, sla.availability, sla.throughput, sla.locality)

    def is_empty(self) -> bool:
        return all(getattr(self, f.name) is None for f in fields(self))


def resolve_sla(default: SlaSpec, *overrides: SlaOverride | None) -> SlaSpec:
    """Apply overrides field by field, later ones winning."""
    values = {f.name: getattr(default, f.name) for f in fields(SlaSpec)}
    for ov in overrides:
        if ov is None:
            continue
        for f in fields(SlaOverride):
            v = getattr(ov, f.name)
            if v is not None:
                values[f.name] = v
    return SlaSpec(**values)


# -- class definitions ------------------------------------------------------


class AttributeKind(str, enum.Enum):
    BYTES = "bytes"
    COUNTER = "counter"
    MAP = "map"


class TriggerEvent(str, enum.Enum):
    ON_COMPLETE = "on_complete"
    ON_FAILURE = "on_failure"
    ON_CREATE = "on_create"
    ON_UPDATE = "on_update"
    ON_DELETE = "on_delete"

    @property
    def for_function(self) -> bool:
        return self in (TriggerEvent.ON_COMPLETE, TriggerEvent.ON_FAILURE)


@dataclass(frozen=True)
class AttributeDef:
    name: str
    kind: AttributeKind = AttributeKind.BYTES
    sla: SlaOverride | None = None


@dataclass(frozen=True)
class FunctionDef:
    name: str
    handler: str
    service_ms: int = 1
    sla: SlaOverride | None = None


@dataclass(frozen=True)
class TriggerRule:
    target_function: str
    source: str
    event: TriggerEvent


@dataclass(frozen=True)
class ClassDefinition:
    name: str
    class_sla: SlaSpec | None = None
    attributes: tuple[AttributeDef, ...] = ()
    functions: tuple[FunctionDef, ...] = ()
    triggers: tuple[TriggerRule, ...] = ()
    parent: str | None = None
    sla_overrides: Mapping[str, SlaOverride] = field(default_factory=dict)


@dataclass(frozen=True)
class FlattenedClass:
    """A class after inheritance flattening and SLA resolution.

    ``attributes`` and ``functions`` carry no SLA of their own; the resolved
    record for every member lives in ``member_sla``.
    """

    name: str
    lineage: tuple[str, ...]
    class_sla: SlaSpec
    attributes: tuple[AttributeDef, ...]
    functions: tuple[FunctionDef, ...]
    triggers: tuple[TriggerRule, ...]
    member_sla: Mapping[str, SlaSpec]

    def attribute(self, name: str) -> AttributeDef:
        for a in self.attributes:
            if a.name == name:
                return a
        raise UnknownMember(f"{self.name} has no attribute {name!r}")

    def function(self, name: str) -> FunctionDef:
        for f in self.functions:
            if f.name == name:
                return f
        raise UnknownMember(f"{self.name} has no function {name!r}")

    def has_attribute(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    def has_function(self, name: str) -> bool:
        return any(f.name == name for f in self.functions)

    def consistency_modes(self) -> set[str]:
        return {self.member_sla[a.name].consistency.mode for a in self.attributes}

    def as_definition(self) -> ClassDefinition:
        """Re-express as a parentless definition (flattening it again is a no-op)."""
        return ClassDefinition(
            name=self.name,
            class_sla=self.class_sla,
            attributes=tuple(replace(a, sla=SlaOverride.full(self.member_sla[a.name])) for a in self.attributes),
            functions=tuple(replace(f, sla=SlaOverride.full(self.member_sla[f.name])) for f in self.functions),
            triggers=self.triggers,
        )


def _ancestry(defn: ClassDefinition, known: Mapping[str, ClassDefinition]) -> list[ClassDefinition]:
    chain = [defn]
    seen = {defn.name}
    cur = defn
    while cur.parent is not None:
        if cur.parent in seen:
            raise InheritanceCycle(f"inheritance cycle through {cur.parent!r}")
        parent = known.get(cur.parent)
        if parent is None:
            raise UnknownParent(f"{cur.name}: unknown parent class {cur.parent!r}")
        seen.add(parent.name)
        chain.append(parent)
        cur = parent
    chain.reverse()
    return chain


def validate_class(
    defn: ClassDefinition,
    registry: Container[str],
    known: Mapping[str, ClassDefinition] | None = None,
) -> FlattenedClass:
    """Flatten ``defn`` against its ancestors in ``known`` and resolve every SLA.

    ``registry`` is the set of handler identifiers functions may reference.
    """
    chain = _ancestry(defn, known or {})

    members: dict[str, AttributeDef | FunctionDef] = {}
    overrides: dict[str, SlaOverride] = {}
    triggers: list[TriggerRule] = []
    class_sla: SlaSpec | None = None
    for cls in chain:
        own: set[str] = set()
        for m in (*cls.attributes, *cls.functions):
            if m.name in own:
                raise DuplicateMember(f"{cls.name}: member {m.name!r} declared twice")
            own.add(m.name)
            prev = members.get(m.name)
            if prev is not None and type(prev) is not type(m):
                raise DuplicateMember(f"{cls.name}: {m.name!r} redeclared as a different member kind")
            members[m.name] = m
        for name, ov in cls.sla_overrides.items():
            if name not in members:
                raise UnknownMember(f"{cls.name}: SLA override for undeclared member {name!r}")
            overrides[name] = ov
        for t in cls.triggers:
            if t not in triggers:
                triggers.append(t)
        if cls.class_sla is not None:
            class_sla = cls.class_sla
    if class_sla is None:
        raise InvalidSla(f"{defn.name}: no class SLA declared on the class or its ancestors")
    check_sla(class_sla)

    attrs = tuple(replace(m, sla=None) for m in members.values() if isinstance(m, AttributeDef))
    funcs = tuple(replace(m, sla=None) for m in members.values() if isinstance(m, FunctionDef))

    for f in funcs:
        if f.handler not in registry:
            raise UnknownHandler(f"{defn.name}.{f.name}: handler {f.handler!r} is not registered")
        if f.service_ms < 0:
            raise InvalidSla(f"{defn.name}.{f.name}: negative service time")

    fn_names = {f.name for f in funcs}
    attr_names = {a.name for a in attrs}
    for t in triggers:
        if t.target_function not in fn_names:
            raise UnknownMember(f"{defn.name}: trigger targets unknown function {t.target_function!r}")
        if t.source in fn_names:
            if not t.event.for_function:
                raise EventKindMismatch(f"{defn.name}: {t.event.value} is not a function event ({t.source})")
        elif t.source in attr_names:
            if t.event.for_function:
                raise EventKindMismatch(f"{defn.name}: {t.event.value} is not an attribute event ({t.source})")
        else:
            raise DanglingTriggerSource(f"{defn.name}: trigger source {t.source!r} is not a member")
        if t.source == t.target_function and t.event is TriggerEvent.ON_COMPLETE:
            raise TriggerCycle(f"{defn.name}: {t.source} triggers itself on completion")

    member_sla = {name: resolve_sla(class_sla, m.sla, overrides.get(name)) for name, m in members.items()}
    return FlattenedClass(
        name=defn.name,
        lineage=tuple(c.name for c in chain),
        class_sla=class_sla,
        attributes=attrs,
        functions=funcs,
        triggers=tuple(triggers),
        member_sla=member_sla,
    )


def effective_sla(flat: FlattenedClass, member: str) -> SlaSpec:
    try:
        return flat.member_sla[member]
    except KeyError:
        raise UnknownMember(f"{flat.name} has no member {member!r}") from None


# -- infrastructure ---------------------------------------------------------


class Tier(str, enum.Enum):
    EDGE = "edge"
    CLOUD = "cloud"


@dataclass(frozen=True)
class DatacenterProfile:
    id: str
    tier: Tier
    capacity: int
    failure_prob: float
    region_latency: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.failure_prob < 1:
            raise ValueError(f"{self.id}: failure_prob must lie in (0, 1)")
        if self.capacity < 1:
            raise ValueError(f"{self.id}: capacity must be >= 1")
        for peer, lat in self.region_latency.items():
            if lat < 0:
                raise ValueError(f"{self.id}: negative latency to {peer}")


class ObjectId(NamedTuple):
    class_name: str
    instance: int

    def __str__(self) -> str:
        return f"{self.class_name}#{self.instance}"
