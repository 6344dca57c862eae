import pytest

from slagrid.control.placement import PlacementPlan, reserved_slots
from slagrid.errors import (
    AlreadyDeleted,
    HandlerError,
    InsufficientCapacity,
    NoCapacity,
    NoReplicaAvailable,
    StalenessExceeded,
    UnknownClass,
    UnknownFunction,
    UnknownObject,
    UnknownRule,
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
    validate_class,
)
from slagrid.runtime import HandlerRegistry, Platform, ScalerConfig
from slagrid.runtime.handlers import Ctx
from slagrid.runtime.workers import DcWorkers
from slagrid.simnet import Network, PartitionEvent, Simulator
from slagrid.wire import decode_value, encode_value

LAT = {("edge", "cloud"): 17, ("edge", "edge2"): 5, ("edge2", "cloud"): 17}


def world(dcs=("edge", "cloud"), *, capacity=64, seed=0, scaler=None, registry=None, **netkw):
    sim = Simulator(seed)
    lat = {k: v for k, v in LAT.items() if k[0] in dcs and k[1] in dcs}
    net = Network(sim, dcs, lat, **netkw)
    profiles = [DatacenterProfile(dc, Tier.CLOUD if dc == "cloud" else Tier.EDGE, capacity, 0.01) for dc in dcs]
    return sim, net, Platform(net, profiles, scaler=scaler, registry=registry)


def deploy(plat, defn, sites, reserved=None):
    flat = validate_class(defn, plat.registry)
    plat.deploy_now(flat, PlacementPlan(flat.name, list(sites), len(sites), reserved or {}))
    return flat


def kv(consistency=Strong(), *, functions=(), triggers=(), fn_sla=None, attrs=None):
    return ClassDefinition(
        "KV",
        SlaSpec(consistency, 0.99),
        attributes=attrs or (AttributeDef("v"), AttributeDef("cache")),
        functions=(
            FunctionDef("put", "put:v", sla=fn_sla),
            FunctionDef("get", "get:v", sla=fn_sla),
            FunctionDef("echo", "echo", service_ms=5, sla=fn_sla),
            FunctionDef("fill", "put:cache"),
            *functions,
        ),
        triggers=triggers,
    )


# -- objects ------------------------------------------------------------------


def test_create_then_get_returns_descriptor():
    sim, net, plat = world()
    deploy(plat, kv(), ["edge"])
    o = plat.create_object("KV")
    d = plat.get_object(o)
    assert d.id == o and d.sites == ("edge",)


def test_create_propagates_to_every_replica_runtime():
    sim, net, plat = world(("edge", "cloud", "edge2"))
    deploy(plat, kv(), ["edge", "cloud", "edge2"])
    o = plat.create_object("KV", dc="edge")
    rts = plat.deployments["KV"].runtimes
    assert o.instance in rts["edge"].objects and o.instance not in rts["cloud"].objects
    sim.run(until=100)
    assert all(o.instance in rt.objects for rt in rts.values())


def test_delete_twice_is_already_deleted():
    sim, net, plat = world()
    deploy(plat, kv(), ["edge"])
    o = plat.create_object("KV")
    plat.delete_object(o)
    with pytest.raises(AlreadyDeleted):
        plat.delete_object(o)
    assert plat.invoke_sync(o, "echo", b"", client_dc="edge").error.__class__ is AlreadyDeleted


def test_unknown_class_object_function():
    sim, net, plat = world()
    deploy(plat, kv(), ["edge"])
    with pytest.raises(UnknownClass):
        plat.create_object("Nope")
    with pytest.raises(UnknownObject):
        plat.get_object(ObjectId("KV", 42))
    o = plat.create_object("KV")
    assert isinstance(plat.invoke_sync(o, "nope", client_dc="edge").error, UnknownFunction)
    assert isinstance(plat.invoke_sync(ObjectId("Nope", 1), "x", client_dc="edge").error, UnknownClass)


# -- invocation -------------------------------------------------------------------


def test_echo_occupies_one_slot_for_service_time():
    sim, net, plat = world(("edge",))
    deploy(plat, kv(), ["edge"])
    o = plat.create_object("KV")
    wk = plat.workers["edge"]
    busy = []
    inv = plat.invoke(o, "echo", b"p", client_dc="edge")
    for t in range(0, 7):
        sim.run(until=t)
        busy.append(wk.busy)
    assert inv.result == b"p" and inv.error is None
    assert busy == [1, 1, 1, 1, 1, 0, 0]
    assert inv.end - inv.start == 5


def test_locality_is_respected():
    sim, net, plat = world(("edge", "cloud"))
    deploy(plat, kv(fn_sla=SlaOverride(locality=("edge",))), ["cloud", "edge"])
    o = plat.create_object("KV")
    sim.run(until=500)
    for client in ("cloud", "edge", "cloud"):
        assert plat.invoke_sync(o, "echo", b"x", client_dc=client).exec_dc == "edge"


def test_locality_never_falls_back_elsewhere():
    sim, net, plat = world(("edge", "cloud"))
    deploy(plat, kv(fn_sla=SlaOverride(locality=("edge",))), ["cloud", "edge"])
    o = plat.create_object("KV", dc="cloud")
    sim.run(until=500)
    net.inject_partition(PartitionEvent(frozenset({"edge"}), frozenset({"cloud"}), 600, 5000))
    sim.run(until=1500)
    inv = plat.invoke_sync(o, "echo", b"x", client_dc="cloud")
    assert isinstance(inv.error, NoReplicaAvailable) and inv.exec_dc is None


def test_round_robin_spreads_by_capacity():
    sim, net, plat = world(("edge", "cloud"))
    deploy(plat, kv(), ["edge", "cloud"])
    o = plat.create_object("KV")
    sim.run(until=500)
    dcs = [plat.invoke_sync(o, "echo", client_dc="edge").exec_dc for _ in range(6)]
    assert dcs.count("edge") == dcs.count("cloud") == 3


def test_cross_dc_relay_is_one_hop():
    reg = HandlerRegistry()
    sim, net, plat = world(("edge", "cloud"), registry=reg, keep_log=True)
    a = ClassDefinition("A", SlaSpec(Strong(), 0.9), functions=(FunctionDef("go", "call:ping"),))
    b = ClassDefinition("B", SlaSpec(Strong(), 0.9), functions=(FunctionDef("ping", "echo"),))
    deploy(plat, a, ["edge"])
    deploy(plat, b, ["cloud"])
    oa, ob = plat.create_object("A"), plat.create_object("B")
    sim.run(until=500)
    net.log.clear()
    inv = plat.invoke_sync(oa, "go", str(ob).encode(), client_dc="edge")
    assert inv.error is None and inv.exec_dc == "edge"
    hops = [(s, d) for _, s, d, topic, _ in net.log if topic.startswith("obj/B/")]
    assert hops == [("edge", "cloud"), ("cloud", "edge")]


def test_remote_errors_keep_their_type():
    sim, net, plat = world(("edge", "cloud"))
    deploy(plat, kv(functions=(FunctionDef("boom", "fail"),), fn_sla=SlaOverride(locality=("cloud",))), ["cloud"])
    o = plat.create_object("KV")
    sim.run(until=500)
    inv = plat.invoke_sync(o, "boom", client_dc="edge")
    assert isinstance(inv.error, HandlerError) and inv.exec_dc == "cloud"


@pytest.mark.parametrize("value", [None, b"x", 7, "s", {"a": b"1", "b": None}])
def test_result_encoding_round_trips(value):
    from slagrid.wire import decode_record, encode_record

    assert decode_value(decode_record(encode_record(*encode_value(value)))) == value


# -- storage through functions -------------------------------------------------------


def test_strong_commit_then_refresh_from_any_replica():
    sim, net, plat = world(("edge", "cloud", "edge2"))
    deploy(plat, kv(), ["edge", "cloud", "edge2"])
    o = plat.create_object("KV")
    sim.run(until=1000)
    assert plat.invoke_sync(o, "put", b"new", client_dc="cloud").error is None
    for dc in ("edge", "cloud", "edge2"):
        assert plat.invoke_sync(o, "get", client_dc=dc).result == b"new"


def test_bounded_partition_longer_than_delta_blocks():
    sim, net, plat = world(("edge", "cloud"))
    deploy(plat, kv(BoundedStaleness(10)), ["edge", "cloud"])
    o = plat.create_object("KV")
    sim.run(until=1000)
    net.inject_partition(PartitionEvent(frozenset({"edge"}), frozenset({"cloud"}), 2000, 12000))
    sim.run(until=13500)
    inv = plat.invoke_sync(o, "get", client_dc="edge")
    assert isinstance(inv.error, StalenessExceeded)
    inv = plat.invoke_sync(o, "put", b"x", client_dc="edge")
    assert isinstance(inv.error, StalenessExceeded)


def test_ryw_session_reads_own_write_mid_partition():
    sim, net, plat = world(("edge", "cloud"))
    deploy(plat, kv(ReadYourWrite()), ["edge", "cloud"])
    o = plat.create_object("KV")
    sim.run(until=1000)
    net.inject_partition(PartitionEvent(frozenset({"edge"}), frozenset({"cloud"}), 1100, 10000))
    sim.run(until=2000)
    s = plat.open_session("KV", "edge")
    assert plat.invoke_sync(o, "put", b"mine", client_dc="edge", session=s).error is None
    assert plat.invoke_sync(o, "get", client_dc="edge", session=s).result == b"mine"


def test_counter_and_map_attributes():
    reg = HandlerRegistry()

    @reg.register("bump")
    def bump(ctx: Ctx):
        ctx.commit("n", ("incr", 2))
        ctx.commit("m", {"f": ctx.payload})

    @reg.register("look")
    def look(ctx: Ctx):
        n = yield ctx.refresh("n")
        m = yield ctx.refresh("m")
        return {"n": str(n).encode(), "f": m.get("f")}

    sim, net, plat = world(("edge",), registry=reg)
    defn = ClassDefinition(
        "C",
        SlaSpec(ReadYourWrite(), 0.9),
        attributes=(AttributeDef("n", AttributeKind.COUNTER), AttributeDef("m", AttributeKind.MAP)),
        functions=(FunctionDef("bump", "bump"), FunctionDef("look", "look")),
    )
    deploy(plat, defn, ["edge"])
    o = plat.create_object("C")
    s = plat.open_session("C", "edge")
    plat.invoke_sync(o, "bump", b"a", client_dc="edge", session=s)
    plat.invoke_sync(o, "bump", b"b", client_dc="edge", session=s)
    assert plat.invoke_sync(o, "look", client_dc="edge", session=s).result == {"n": b"4", "f": b"b"}


# -- triggers ------------------------------------------------------------------------------


def trigger_world(*rules, extra=()):
    reg = HandlerRegistry()
    fired = []

    @reg.register("process")
    def process(ctx: Ctx):
        fired.append((ctx.event.source, ctx.event.event, ctx.obj))

    sim, net, plat = world(("edge",), registry=reg)
    defn = kv(functions=(FunctionDef("process", "process"), FunctionDef("boom", "fail"), *extra), triggers=rules)
    deploy(plat, defn, ["edge"])
    return sim, plat, plat.create_object("KV"), fired


def test_on_update_fires_once_per_commit():
    rule = TriggerRule("process", "cache", TriggerEvent.ON_UPDATE)
    sim, plat, o, fired = trigger_world(rule)
    for i in range(3):
        plat.invoke_sync(o, "fill", bytes([i]), client_dc="edge")
    sim.run(until=sim.now + 100)
    assert fired == [("cache", "on_update", o)] * 3


def test_suppress_stops_firing_and_unknown_rule():
    rule = TriggerRule("process", "cache", TriggerEvent.ON_UPDATE)
    sim, plat, o, fired = trigger_world(rule)
    plat.suppress("KV", rule)
    plat.invoke_sync(o, "fill", b"x", client_dc="edge")
    sim.run(until=sim.now + 100)
    assert fired == []
    with pytest.raises(UnknownRule):
        plat.suppress("KV", rule)
    plat.register_trigger("KV", rule)
    plat.invoke_sync(o, "fill", b"y", client_dc="edge")
    sim.run(until=sim.now + 100)
    assert len(fired) == 1


def test_on_failure_fires_compensator_exactly_once():
    rule = TriggerRule("process", "boom", TriggerEvent.ON_FAILURE)
    sim, plat, o, fired = trigger_world(rule)
    inv = plat.invoke_sync(o, "boom", client_dc="edge")
    sim.run(until=sim.now + 100)
    assert isinstance(inv.error, HandlerError)
    assert fired == [("boom", "on_failure", o)]


def test_on_complete_and_on_create_and_on_delete():
    rules = (
        TriggerRule("process", "echo", TriggerEvent.ON_COMPLETE),
        TriggerRule("process", "v", TriggerEvent.ON_CREATE),
        TriggerRule("process", "v", TriggerEvent.ON_DELETE),
    )
    sim, plat, o, fired = trigger_world(*rules)
    plat.invoke_sync(o, "echo", client_dc="edge")
    plat.invoke_sync(o, "put", b"1", client_dc="edge")
    plat.invoke_sync(o, "put", b"2", client_dc="edge")
    sim.run(until=sim.now + 500)
    plat.delete_object(o)
    sim.run(until=sim.now + 100)
    assert [f[:2] for f in fired] == [("echo", "on_complete"), ("v", "on_create"), ("v", "on_delete")]


# -- workers and reservations ---------------------------------------------------------------


def test_reservation_formula_examples():
    assert reserved_slots(4000, 1) == 4
    assert reserved_slots(0, 1) == 0


def test_reserve_beyond_capacity_is_refused():
    sim = Simulator()
    wk = DcWorkers(sim, "edge", 8)
    wk.reserve("a", 6)
    with pytest.raises(InsufficientCapacity):
        wk.reserve("b", 3)
    assert wk.elastic_max == 2


def _open_loop(sim, rate, start, stop, fire):
    period = 1000 / rate
    n = 0
    while True:
        t = start + int(n * period)
        if t >= stop:
            return
        sim.schedule(t, fire)
        n += 1


def test_reserved_rate_sustained_with_zero_wait():
    sim, net, plat = world(("edge",), capacity=16)
    deploy(plat, kv(functions=(FunctionDef("hot", "echo", service_ms=1),)), ["edge"], {"edge": {"hot": 4}})
    o = plat.create_object("KV")
    done = []
    _open_loop(sim, 4000, 0, 5000, lambda: plat.invoke(o, "hot", client_dc="edge", cb=done.append))
    sim.run(until=6000)
    assert len(done) == 20000
    assert all(i.error is None and i.reserved and i.wait == 0 for i in done)


def test_best_effort_overflow_is_no_capacity():
    sim, net, plat = world(("edge",), capacity=4, scaler=ScalerConfig(initial=2, queue_factor=2))
    deploy(plat, kv(), ["edge"])
    o = plat.create_object("KV")
    out = [plat.invoke(o, "echo", client_dc="edge") for _ in range(10)]
    sim.run(until=100)
    errs = [type(i.error) for i in out]
    assert errs.count(NoCapacity) == 4 and errs.count(type(None)) == 6


def test_reactive_scaler_grows_after_delay():
    cfg = ScalerConfig(initial=1)
    sim, net, plat = world(("edge",), capacity=64, scaler=cfg)
    deploy(plat, kv(), ["edge"])
    o = plat.create_object("KV")
    _open_loop(sim, 1000, 0, 4000, lambda: plat.invoke(o, "echo", client_dc="edge"))
    sim.run(until=4000)
    log = plat.workers["edge"].size_log
    # first sample at 1 s, applied at 2 s; 1000 rps x 5 ms x 1.2 -> 6 slots
    assert log[0] == (0, 1)
    assert log[1] == (2000, 6)


def test_session_calls_run_beside_the_pinned_replica():
    sim, net, plat = world(("edge", "cloud", "edge2"))
    deploy(plat, kv(ReadYourWrite()), ["cloud", "edge"])
    obj = plat.create_object("KV")
    sim.run(until=sim.now + 500)
    tok = plat.open_session("KV", "edge2")
    assert tok.pinned == "edge"
    for i in range(6):
        inv = plat.invoke_sync(obj, "put", str(i).encode(), client_dc="edge2", session=tok)
        assert inv.error is None and inv.exec_dc == "edge"
    spread = {plat.invoke_sync(obj, "echo", client_dc="edge2").exec_dc for _ in range(6)}
    assert spread == {"edge", "cloud"}
