"""Reading and writing class documents (YAML, one document per class).

A class document looks like::

    name: KVStore
    parent: KVDataService
    sla: {consistency: ryw, availability: 0.9999, throughput: 10000}
    attributes:
      - {name: data, kind: bytes, sla: {consistency: strong}}
    functions:
      - {name: put, handler: put, service_ms: 1, sla: {locality: [edge-dc]}}
    triggers:
      - {function: process, source: data, event: on_update}
    sla_overrides:
      data: {availability: 0.999999999}

``consistency`` is ``strong``, ``ryw`` or a mapping ``{bounded_staleness: <seconds>}``
(the string ``bounded_staleness:<seconds>`` is accepted too).
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml

from .errors import InvalidSla, ScriptError, ValidationError
from .model import (
    AttributeDef,
    AttributeKind,
    BoundedStaleness,
    ClassDefinition,
    Consistency,
    FunctionDef,
    ReadYourWrite,
    SlaOverride,
    SlaSpec,
    Strong,
    TriggerEvent,
    TriggerRule,
)

_SLA_KEYS = {"consistency", "availability", "throughput", "locality"}


def parse_consistency(raw: Any) -> Consistency:
    if isinstance(raw, dict):
        if len(raw) != 1:
            raise InvalidSla(f"bad consistency {raw!r}")
        ((k, v),) = raw.items()
        raw = f"{k}:{v}"
    text = str(raw).strip().lower()
    if text == "strong":
        return Strong()
    if text in ("ryw", "read_your_write", "read-your-write"):
        return ReadYourWrite()
    for prefix in ("bounded_staleness:", "bounded:", "bs:"):
        if text.startswith(prefix):
            try:
                return BoundedStaleness(float(text[len(prefix):]))
            except ValueError:
                break
    raise InvalidSla(f"unknown consistency {raw!r}")


def format_consistency(c: Consistency) -> Any:
    if isinstance(c, BoundedStaleness):
        return {"bounded_staleness": c.delta_s}
    return c.mode


def _override(raw: dict | None, where: str) -> SlaOverride | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ScriptError("sla must be a mapping", where)
    unknown = set(raw) - _SLA_KEYS
    if unknown:
        raise ScriptError(f"unknown SLA fields {sorted(unknown)}", where)
    loc = raw.get("locality")
    return SlaOverride(
        consistency=parse_consistency(raw["consistency"]) if raw.get("consistency") is not None else None,
        availability=float(raw["availability"]) if raw.get("availability") is not None else None,
        throughput=int(raw["throughput"]) if raw.get("throughput") is not None else None,
        locality=tuple(str(x) for x in loc) if loc is not None else None,
    )


def class_from_dict(doc: dict, where: str = "") -> ClassDefinition:
    where = where or str(doc.get("name", "<class>"))
    if not isinstance(doc, dict) or "name" not in doc:
        raise ScriptError("class document needs a 'name'", where)
    try:
        sla = None
        if doc.get("sla") is not None:
            ov = _override(doc["sla"], f"{where}.sla")
            if ov.consistency is None or ov.availability is None:
                raise ScriptError("class sla needs consistency and availability", f"{where}.sla")
            sla = SlaSpec(ov.consistency, ov.availability, ov.throughput, ov.locality)
        attrs = tuple(
            AttributeDef(
                name=str(a["name"]),
                kind=AttributeKind(a.get("kind", "bytes")),
                sla=_override(a.get("sla"), f"{where}.attributes[{i}]"),
            )
            for i, a in enumerate(doc.get("attributes") or [])
        )
        funcs = tuple(
            FunctionDef(
                name=str(f["name"]),
                handler=str(f.get("handler", f["name"])),
                service_ms=int(f.get("service_ms", 1)),
                sla=_override(f.get("sla"), f"{where}.functions[{i}]"),
            )
            for i, f in enumerate(doc.get("functions") or [])
        )
        triggers = tuple(
            TriggerRule(str(t["function"]), str(t["source"]), TriggerEvent(t["event"]))
            for t in doc.get("triggers") or []
        )
        overrides = {
            str(k): _override(v, f"{where}.sla_overrides.{k}") for k, v in (doc.get("sla_overrides") or {}).items()
        }
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ScriptError(f"malformed class document ({exc})", where) from exc
    return ClassDefinition(
        name=str(doc["name"]),
        class_sla=sla,
        attributes=attrs,
        functions=funcs,
        triggers=triggers,
        parent=doc.get("parent"),
        sla_overrides=overrides,
    )


def _sla_dict(sla: SlaSpec | SlaOverride) -> dict:
    out: dict[str, Any] = {}
    if sla.consistency is not None:
        out["consistency"] = format_consistency(sla.consistency)
    if sla.availability is not None:
        out["availability"] = sla.availability
    if sla.throughput is not None:
        out["throughput"] = sla.throughput
    if sla.locality is not None:
        out["locality"] = list(sla.locality)
    return out


def class_to_dict(defn: ClassDefinition) -> dict:
    doc: dict[str, Any] = {"name": defn.name}
    if defn.parent:
        doc["parent"] = defn.parent
    if defn.class_sla is not None:
        doc["sla"] = _sla_dict(defn.class_sla)
    doc["attributes"] = [
        {"name": a.name, "kind": a.kind.value, **({"sla": _sla_dict(a.sla)} if a.sla else {})}
        for a in defn.attributes
    ]
    doc["functions"] = [
        {
            "name": f.name,
            "handler": f.handler,
            "service_ms": f.service_ms,
            **({"sla": _sla_dict(f.sla)} if f.sla else {}),
        }
        for f in defn.functions
    ]
    doc["triggers"] = [
        {"function": t.target_function, "source": t.source, "event": t.event.value} for t in defn.triggers
    ]
    if defn.sla_overrides:
        doc["sla_overrides"] = {k: _sla_dict(v) for k, v in defn.sla_overrides.items()}
    return doc


def load_classes(path: str | Path) -> list[ClassDefinition]:
    """Load every class document in a YAML stream (``---`` separated)."""
    path = Path(path)
    try:
        docs = [d for d in yaml.safe_load_all(path.read_text()) if d is not None]
    except OSError as exc:
        raise ScriptError(str(exc), str(path)) from exc
    except yaml.YAMLError as exc:
        raise ScriptError(f"invalid YAML ({exc})", str(path)) from exc
    out = []
    for i, d in enumerate(docs):
        if isinstance(d, list):
            out.extend(class_from_dict(x, f"{path}[{i}]") for x in d)
        else:
            out.append(class_from_dict(d, f"{path}[{i}]"))
    return out


def dump_classes(defns: list[ClassDefinition]) -> str:
    return yaml.safe_dump_all([class_to_dict(d) for d in defns], sort_keys=False)
