import pytest
from hypothesis import given, strategies as st

from slagrid.classfile import class_from_dict, class_to_dict, dump_classes, load_classes
from slagrid.errors import (
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
from slagrid.model import (
    AttributeDef,
    AttributeKind,
    BoundedStaleness,
    ClassDefinition,
    DatacenterProfile,
    FunctionDef,
    ObjectId,
    ReadYourWrite,
    SlaOverride,
    SlaSpec,
    Strong,
    Tier,
    TriggerEvent,
    TriggerRule,
    effective_sla,
    validate_class,
)

HANDLERS = {"echo", "put", "get", "process"}
RYW = SlaSpec(ReadYourWrite(), 0.9999)


def kv_base():
    return ClassDefinition(
        name="KVDataService",
        class_sla=RYW,
        attributes=(AttributeDef("data", AttributeKind.MAP),),
        functions=(FunctionDef("read", "get"), FunctionDef("write", "put")),
    )


def test_identity_flattening():
    defn = ClassDefinition(
        "Plain",
        RYW,
        attributes=(AttributeDef("a"), AttributeDef("b", AttributeKind.COUNTER)),
        functions=(FunctionDef("f", "echo"),),
    )
    flat = validate_class(defn, HANDLERS)
    assert [a.name for a in flat.attributes] == ["a", "b"]
    assert all(flat.member_sla[m] == RYW for m in ("a", "b", "f"))
    assert flat.lineage == ("Plain",)


def test_child_overrides_parent_attribute_sla():
    base = kv_base()
    store = ClassDefinition(
        "KVStore",
        parent="KVDataService",
        sla_overrides={"data": SlaOverride(consistency=Strong())},
    )
    flat = validate_class(store, HANDLERS, {"KVDataService": base})
    assert effective_sla(flat, "data").consistency == Strong()
    assert effective_sla(flat, "read").consistency == ReadYourWrite()
    assert effective_sla(flat, "write").consistency == ReadYourWrite()
    assert flat.lineage == ("KVDataService", "KVStore")


def test_redeclared_member_replaces_inherited_one():
    base = kv_base()
    child = ClassDefinition(
        "KVCache",
        parent="KVDataService",
        attributes=(AttributeDef("data", AttributeKind.BYTES, SlaOverride(consistency=BoundedStaleness(5))),),
    )
    flat = validate_class(child, HANDLERS, {"KVDataService": base})
    assert flat.attribute("data").kind is AttributeKind.BYTES
    assert flat.member_sla["data"].consistency == BoundedStaleness(5)


def test_inheritance_cycle_rejected():
    a = ClassDefinition("A", RYW, parent="B")
    b = ClassDefinition("B", RYW, parent="A")
    with pytest.raises(UnknownParent):
        validate_class(a, HANDLERS, {"A": a, "B": b})
    with pytest.raises(InheritanceCycle):
        validate_class(a, HANDLERS, {"A": a, "B": b})


def test_unknown_parent():
    with pytest.raises(UnknownParent):
        validate_class(ClassDefinition("A", RYW, parent="Nope"), HANDLERS)


def test_duplicate_member():
    defn = ClassDefinition("A", RYW, attributes=(AttributeDef("x"),), functions=(FunctionDef("x", "echo"),))
    with pytest.raises(DuplicateMember):
        validate_class(defn, HANDLERS)


def test_cross_kind_redeclaration_is_duplicate():
    child = ClassDefinition("C", parent="KVDataService", functions=(FunctionDef("data", "echo"),))
    with pytest.raises(DuplicateMember):
        validate_class(child, HANDLERS, {"KVDataService": kv_base()})


def test_unknown_handler():
    with pytest.raises(UnknownHandler):
        validate_class(ClassDefinition("A", RYW, functions=(FunctionDef("f", "nope"),)), HANDLERS)


def test_trigger_checks():
    base = dict(
        class_sla=RYW,
        attributes=(AttributeDef("cache"),),
        functions=(FunctionDef("process", "process"), FunctionDef("comp", "echo")),
    )
    ok = ClassDefinition("T", **base, triggers=(TriggerRule("process", "cache", TriggerEvent.ON_UPDATE),))
    assert validate_class(ok, HANDLERS).triggers == ok.triggers
    with pytest.raises(DanglingTriggerSource):
        validate_class(
            ClassDefinition("T", **base, triggers=(TriggerRule("process", "ghost", TriggerEvent.ON_UPDATE),)),
            HANDLERS,
        )
    with pytest.raises(EventKindMismatch):
        validate_class(
            ClassDefinition("T", **base, triggers=(TriggerRule("process", "cache", TriggerEvent.ON_COMPLETE),)),
            HANDLERS,
        )
    with pytest.raises(EventKindMismatch):
        validate_class(
            ClassDefinition("T", **base, triggers=(TriggerRule("comp", "process", TriggerEvent.ON_UPDATE),)),
            HANDLERS,
        )
    with pytest.raises(TriggerCycle):
        validate_class(
            ClassDefinition("T", **base, triggers=(TriggerRule("process", "process", TriggerEvent.ON_COMPLETE),)),
            HANDLERS,
        )
    # a compensator on failure is fine
    comp = ClassDefinition("T", **base, triggers=(TriggerRule("comp", "process", TriggerEvent.ON_FAILURE),))
    validate_class(comp, HANDLERS)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(consistency=Strong(), availability=1.0),
        dict(consistency=Strong(), availability=1.5),
        dict(consistency=BoundedStaleness(0), availability=0.9),
        dict(consistency=BoundedStaleness(-1), availability=0.9),
        dict(consistency=Strong(), availability=0.9, throughput=0),
    ],
)
def test_invalid_sla(kwargs):
    with pytest.raises(InvalidSla):
        SlaSpec(**kwargs)


def test_invalid_member_override_rejected():
    defn = ClassDefinition("A", RYW, attributes=(AttributeDef("x", sla=SlaOverride(availability=1.0)),))
    with pytest.raises(InvalidSla):
        validate_class(defn, HANDLERS)


def test_override_of_undeclared_member():
    defn = ClassDefinition("A", RYW, sla_overrides={"ghost": SlaOverride(consistency=Strong())})
    with pytest.raises(UnknownMember):
        validate_class(defn, HANDLERS)


def test_effective_sla_merges_fieldwise():
    cls_sla = SlaSpec(ReadYourWrite(), 0.9999, throughput=10000)
    defn = ClassDefinition(
        "DataProcessor",
        cls_sla,
        functions=(FunctionDef("process", "process", sla=SlaOverride(locality=("edge-dc",))),),
        attributes=(AttributeDef("log", sla=SlaOverride(availability=0.999999999)),),
    )
    flat = validate_class(defn, HANDLERS)
    p = effective_sla(flat, "process")
    assert p.throughput == 10000 and p.locality == ("edge-dc",)
    assert effective_sla(flat, "log").availability == 0.999999999
    assert effective_sla(flat, "log").locality is None
    with pytest.raises(UnknownMember):
        effective_sla(flat, "missing")


def test_no_overrides_returns_class_sla_verbatim():
    flat = validate_class(kv_base(), HANDLERS)
    for m in ("data", "read", "write"):
        assert effective_sla(flat, m) is not None
        assert effective_sla(flat, m) == RYW


def test_flattening_is_idempotent():
    base = kv_base()
    store = ClassDefinition(
        "KVStore",
        parent="KVDataService",
        functions=(FunctionDef("scan", "echo", service_ms=3, sla=SlaOverride(throughput=50)),),
        sla_overrides={"data": SlaOverride(consistency=Strong())},
    )
    flat = validate_class(store, HANDLERS, {"KVDataService": base})
    again = validate_class(flat.as_definition(), HANDLERS)
    assert again.member_sla == flat.member_sla
    assert again.attributes == flat.attributes
    assert again.functions == flat.functions
    assert again.triggers == flat.triggers


consistencies = st.one_of(
    st.just(Strong()),
    st.just(ReadYourWrite()),
    st.floats(0.1, 100).map(BoundedStaleness),
)
overrides = st.one_of(
    st.none(),
    st.builds(
        SlaOverride,
        consistency=st.one_of(st.none(), consistencies),
        availability=st.one_of(st.none(), st.floats(0, 0.99999)),
        throughput=st.one_of(st.none(), st.integers(1, 10**5)),
        locality=st.one_of(st.none(), st.lists(st.sampled_from(["e1", "e2", "c"]), max_size=3).map(tuple)),
    ),
)


@given(default_c=consistencies, ovs=st.lists(overrides, min_size=1, max_size=5))
def test_resolution_never_synthesizes_values(default_c, ovs):
    cls_sla = SlaSpec(default_c, 0.99)
    attrs = tuple(AttributeDef(f"a{i}", sla=ov) for i, ov in enumerate(ovs))
    flat = validate_class(ClassDefinition("P", cls_sla, attributes=attrs), HANDLERS)
    for a, ov in zip(attrs, ovs):
        got = flat.member_sla[a.name]
        for field in ("consistency", "availability", "throughput", "locality"):
            o = getattr(ov, field) if ov is not None else None
            assert getattr(got, field) == (o if o is not None else getattr(cls_sla, field))
    assert validate_class(flat.as_definition(), HANDLERS).member_sla == flat.member_sla


def test_datacenter_profile_invariants():
    DatacenterProfile("edge", Tier.EDGE, 8, 0.01, {"cloud": 17})
    with pytest.raises(ValueError):
        DatacenterProfile("x", Tier.EDGE, 8, 0.0)
    with pytest.raises(ValueError):
        DatacenterProfile("x", Tier.EDGE, 0, 0.1)
    with pytest.raises(ValueError):
        DatacenterProfile("x", Tier.EDGE, 1, 0.1, {"y": -1})


def test_object_id_str():
    assert str(ObjectId("KV", 3)) == "KV#3"


def test_class_document_round_trip(tmp_path):
    doc = {
        "name": "KVStore",
        "parent": "KVDataService",
        "sla": {"consistency": {"bounded_staleness": 10}, "availability": 0.9999, "throughput": 4000},
        "attributes": [{"name": "data", "kind": "map", "sla": {"consistency": "strong"}}],
        "functions": [{"name": "put", "handler": "put", "service_ms": 2, "sla": {"locality": ["edge"]}}],
        "triggers": [{"function": "put", "source": "data", "event": "on_update"}],
        "sla_overrides": {"put": {"availability": 0.999}},
    }
    defn = class_from_dict(doc)
    assert defn.class_sla.consistency == BoundedStaleness(10.0)
    assert defn.functions[0].sla.locality == ("edge",)
    assert class_from_dict(class_to_dict(defn)) == defn
    p = tmp_path / "c.yaml"
    p.write_text(dump_classes([kv_base(), defn]))
    assert load_classes(p) == [kv_base(), defn]
