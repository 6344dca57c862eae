import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from slagrid.control import ControlPlane, Metric, Placer, estimate_failure_prob, replication_factor
from slagrid.control.placement import PlacementPlan, reserved_slots, split_reservation
from slagrid.errors import DeployFailed, InsufficientSites, InvalidTarget, NoSamples
from slagrid.model import (
    AttributeDef,
    ClassDefinition,
    DatacenterProfile,
    FunctionDef,
    ReadYourWrite,
    SlaOverride,
    SlaSpec,
    Strong,
    Tier,
    validate_class,
)
from slagrid.runtime import HandlerRegistry, Platform
from slagrid.simnet import Network, PartitionEvent, Simulator

REG = HandlerRegistry()


def brute_k(target, probs):
    probs = sorted(probs)
    for k in range(1, len(probs) + 1):
        if 1 - math.prod(Fraction(repr(p)) for p in probs[:k]) >= Fraction(repr(target)):
            return k
    return None


# -- failure estimation --------------------------------------------------------


def test_all_up_clamps_to_floor():
    assert estimate_failure_prob([True] * 50) == 1e-6


def test_alternating_converges_to_half():
    hist = [i % 2 == 1 for i in range(1000)]
    est = estimate_failure_prob(hist)
    # a period-2 square wave settles on the 2-cycle {4/9, 5/9} around 0.5
    assert abs(est - 0.5) < 0.06


def test_single_down_decays_within_21_samples():
    n = next(n for n in range(100) if 0.2 * 0.8**n < 0.01)
    assert n == 14
    assert estimate_failure_prob([False] + [True] * 21) < 0.01
    assert estimate_failure_prob([False] + [True] * (n - 1)) >= 0.01


def test_no_samples():
    with pytest.raises(NoSamples):
        estimate_failure_prob([])


# -- replication factor ------------------------------------------------------------


def test_four_nines_at_one_percent_is_two():
    c = replication_factor(0.9999, {f"d{i}": 0.01 for i in range(5)})
    assert c.k == 2 and c.sites == ("d0", "d1")


def test_nine_nines_at_five_percent_is_seven():
    assert replication_factor(0.999999999, [(f"d{i}", 0.05) for i in range(12)]).k == 7


def test_easy_target_is_one():
    assert replication_factor(0.95, {"a": 0.05, "b": 0.2}).k == 1


def test_insufficient_and_invalid():
    with pytest.raises(InsufficientSites):
        replication_factor(0.9999999, {"a": 0.1, "b": 0.1})
    with pytest.raises(InvalidTarget):
        replication_factor(1.0, {"a": 0.1})


probs_st = st.lists(st.floats(1e-4, 0.5), min_size=1, max_size=10)
target_st = st.floats(0.5, 0.9999999)


@settings(max_examples=300, deadline=None)
@given(target_st, probs_st)
def test_matches_brute_force_and_is_minimal(target, probs):
    want = brute_k(target, probs)
    cands = {f"d{i}": p for i, p in enumerate(probs)}
    if want is None:
        with pytest.raises(InsufficientSites):
            replication_factor(target, cands)
        return
    got = replication_factor(target, cands)
    assert got.k == want
    # every (k-1)-subset fails the inequality
    for sub in itertools.combinations(probs, got.k - 1):
        assert 1 - math.prod(Fraction(repr(p)) for p in sub) < Fraction(repr(target))


@settings(max_examples=200, deadline=None)
@given(target_st, target_st, probs_st)
def test_monotone_in_target(t1, t2, probs):
    lo, hi = sorted((t1, t2))
    cands = {f"d{i}": p for i, p in enumerate(probs)}
    try:
        k_hi = replication_factor(hi, cands).k
    except InsufficientSites:
        return
    assert replication_factor(lo, cands).k <= k_hi


# -- placement ----------------------------------------------------------------------


def profiles(n=3, cap=64, prob=0.01):
    return [DatacenterProfile(f"dc{i + 1}", Tier.EDGE, cap, prob) for i in range(n)]


def cls(name, avail=0.9, locality=None, throughput=None, consistency=Strong(), attrs=("v",)):
    return validate_class(
        ClassDefinition(
            name,
            SlaSpec(consistency, avail, throughput, locality),
            attributes=tuple(AttributeDef(a) for a in attrs),
            functions=(FunctionDef("f", "echo"),),
        ),
        REG,
    )


def test_round_robin_across_classes():
    p = Placer(profiles())
    assert p.place(cls("A")).sites == ["dc1"]
    assert p.place(cls("B")).sites == ["dc2"]
    assert p.place(cls("C")).sites == ["dc3"]


def test_locality_first_then_rotation():
    p = Placer(profiles())
    plan = p.place(cls("A", avail=0.9999, locality=("dc2",)))
    assert plan.sites == ["dc2", "dc1"] and plan.k == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6))
def test_round_robin_fairness(n, m):
    p = Placer(profiles(m))
    counts = dict.fromkeys(p.order, 0)
    for i in range(n):
        for dc in p.place(cls(f"C{i}")).sites:
            counts[dc] += 1
    assert max(counts.values()) - min(counts.values()) <= 1


def test_reservation_split_three_to_one():
    assert split_reservation(4000, 1, {"a": 48, "b": 16}) == {"a": 3, "b": 1}
    assert reserved_slots(4000, 1) == 4


def test_plan_reserves_throughput_functions():
    profs = [DatacenterProfile("a", Tier.EDGE, 48, 0.01), DatacenterProfile("b", Tier.CLOUD, 16, 0.01)]
    plan = Placer(profs).place(cls("T", avail=0.9999, throughput=4000))
    assert plan.reserved == {"a": {"f": 3}, "b": {"f": 1}}


# -- deployment -------------------------------------------------------------------------


def world(n=3, *, cap=64, keep_log=False, seed=0):
    sim = Simulator(seed)
    dcs = [f"dc{i + 1}" for i in range(n)]
    lat = {(a, b): 10 for a, b in itertools.combinations(dcs, 2)}
    net = Network(sim, dcs, lat, keep_log=keep_log)
    plat = Platform(net, profiles(n, cap))
    return sim, net, plat, ControlPlane(plat, home="dc1")


def test_strong_class_gets_one_raft_group_with_one_leader():
    sim, net, plat, ctl = world(3)
    flat = cls("S", avail=0.999999, attrs=("v",))
    plan = ctl.deploy_sync(flat)
    assert plan.k == 3
    sim.run(until=sim.now + 2000)
    raft = plat.deployments["S"].storage.raft
    assert sorted(raft.nodes) == ["dc1", "dc2", "dc3"]
    assert raft.leader() is not None
    assert sum(n.role.value == "leader" for n in raft.nodes.values()) == 1


def test_ryw_only_class_has_no_raft_traffic():
    sim, net, plat, ctl = world(3, keep_log=True)
    ctl.deploy_sync(cls("R", avail=0.9999, consistency=ReadYourWrite()))
    o = plat.create_object("R")
    sim.run(until=sim.now + 5000)
    plat.invoke_sync(o, "f", client_dc="dc1")
    assert plat.deployments["R"].storage.raft is None
    assert not any(t.startswith("raft/") for _, _, _, t, _ in net.log)


def test_deploy_rolls_back_when_a_site_dies_mid_deploy():
    sim, net, plat, ctl = world(3)
    flat = cls("T", avail=0.999999, throughput=2000)
    out = []
    ctl.deploy(flat, lambda e, p: out.append(e))
    sim.run(until=sim.now + 12)  # prepares delivered, commits not yet
    net.crash("dc3")
    sim.run(until=sim.now + 3000)
    assert isinstance(out[0], DeployFailed) and out[0].dc == "dc3"
    assert "T" not in plat.deployments and "T" not in plat._staged
    assert all(wk.reserved_total == 0 for wk in plat.workers.values())


def test_deploy_reserves_and_confirms():
    sim, net, plat, ctl = world(2)
    plan = ctl.deploy_sync(cls("T", avail=0.9999, throughput=2000))
    assert plan.sites == ["dc1", "dc2"]
    assert [plat.workers[dc].reserved_total for dc in ("dc1", "dc2")] == [1, 1]
    assert set(plat.deployments["T"].runtimes) == {"dc1", "dc2"}


# -- monitoring and correction ----------------------------------------------------------------


def test_healthy_stream_takes_no_action():
    sim, net, plat, ctl = world(3)
    ctl.deploy_sync(cls("A", avail=0.9999))
    ctl.start_monitor()
    sim.run(until=sim.now + 10_000)
    assert ctl.corrections == []


def test_killed_replica_is_replaced_within_bound():
    sim, net, plat, ctl = world(4)
    ctl.deploy_sync(cls("A", avail=0.999999, consistency=ReadYourWrite()))
    sites = list(plat.deployments["A"].plan.sites)
    assert len(sites) == 3
    ctl.start_monitor()
    sim.run(until=sim.now + 2000)
    victim = sites[-1]
    t_kill = sim.now
    net.crash(victim)
    sim.run(until=t_kill + 3 * 1000 + 1000 + 500)
    new_sites = plat.deployments["A"].plan.sites
    assert victim not in new_sites and len(new_sites) == 3
    assert [c.action for c in ctl.corrections] == ["replace"] and ctl.corrections[0].ok
    sim.run(until=sim.now + 2000)
    last = [s for s in ctl.samples if s.metric is Metric.AVAILABILITY_WINDOW][-1]
    assert last.value == 1.0


def test_no_correction_during_partition():
    sim, net, plat, ctl = world(3)
    ctl.deploy_sync(cls("A", avail=0.999999, consistency=ReadYourWrite()))
    ctl.start_monitor()
    t = sim.now + 500
    net.inject_partition(PartitionEvent(frozenset({"dc1"}), frozenset({"dc2", "dc3"}), t, 10_000))
    sim.run(until=t + 10_000)
    assert ctl.corrections == []


def test_throughput_breach_grows_reservation():
    sim, net, plat, ctl = world(1, cap=64)
    flat = validate_class(
        ClassDefinition(
            "T",
            SlaSpec(ReadYourWrite(), 0.9),
            functions=(FunctionDef("f", "echo", service_ms=10, sla=SlaOverride(throughput=500)),),
        ),
        REG,
    )
    ctl.deploy_sync(flat, plan=PlacementPlan("T", ["dc1"], 1, {"dc1": {"f": 1}}))
    plat.workers["dc1"].capacity = 2  # starve the elastic pool so only reservations serve
    plat.workers["dc1"]._set_size(1)
    o = plat.create_object("T")
    ctl.start_monitor()

    def fire():
        plat.invoke(o, "f", client_dc="dc1")
        if sim.now < 6000:
            sim.call_later(2, fire)

    sim.schedule(sim.now, fire)
    sim.run(until=6000)
    grows = [c for c in ctl.corrections if c.action == "grow_reservation"]
    assert grows and grows[0].detail.startswith("dc1:1->2")
