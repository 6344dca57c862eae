import random

import pytest

from slagrid.consensus import Command, RaftGroup, RaftNode, Role
from slagrid.consensus.checks import check_all, election_safety, log_matching
from slagrid.consensus.node import AppendEntries, AppendReply, LogEntry, RequestVote, VoteReply
from slagrid.errors import LeadershipLost, NoReplicaAvailable, NotLeader
from slagrid.simnet import Network, PartitionEvent, Simulator

DCS = ["a", "b", "c"]


def cluster(seed=1, dcs=DCS, latency=10, jitter=0, **kw):
    sim = Simulator(seed=seed)
    lat = {(x, y): latency for i, x in enumerate(dcs) for y in dcs[i + 1 :]}
    net = Network(sim, dcs, lat, jitter_ms=jitter)
    g = RaftGroup(net, "K", dcs, trace=True, **kw)
    return sim, net, g


def settle(sim, g, limit=5000):
    assert sim.run_until(lambda: g.leader() is not None, limit=limit)
    return g.leader()


def drain(node):
    out, node.outbox = node.outbox, []
    return out


def deliver(nodes, src, now):
    for dst, msg in drain(nodes[src]):
        nodes[dst].handle(src, msg, now)


# -- pure node -------------------------------------------------------------------


def test_single_node_commits_on_append():
    n = RaftNode("a", ["a"], now=0)
    n.tick(n.election_deadline)
    assert n.role is Role.LEADER
    n.notes.clear()
    t = n.propose(Command("k", "set", b"1"), 400)
    assert ("write", t, None, 2) in n.notes
    assert n.state == {"k": b"1"}
    r = n.read_index(400)
    assert ("read", r, None, 2) in n.notes


def test_follower_rejects_proposals_with_hint():
    n = RaftNode("b", ["a", "b", "c"])
    n.handle("a", AppendEntries(1, "a", 0, 0, (), 0, 1), 5)
    with pytest.raises(NotLeader) as exc:
        n.propose(Command("k"), 6)
    assert exc.value.hint == "a"
    with pytest.raises(NotLeader):
        n.read_index(6)


def test_prev_mismatch_rejected_then_repaired():
    nodes = {x: RaftNode(x, DCS, rng=random.Random(i)) for i, x in enumerate(DCS)}
    a, b, c = nodes["a"], nodes["b"], nodes["c"]
    x, y, z = (Command(k, "set", b"1") for k in "xyz")
    a.log = [LogEntry(1, 1, x), LogEntry(3, 2, y)]
    b.log = [LogEntry(1, 1, x), LogEntry(2, 2, z)]
    c.log = [LogEntry(1, 1, x)]
    for n in nodes.values():
        n.term = 3
    a._start_election(1000)
    for dst, msg in drain(a):
        if dst == "c":
            a.handle("c", _vote(c, "a", msg, 1000), 1000)
    assert a.role is Role.LEADER
    rejects = []
    for step in range(4):
        for dst, m in drain(a):
            if dst != "b":
                continue
            b.handle("a", m, 1001 + step)
            for _, reply in drain(b):
                if not reply.success:
                    rejects.append(reply)
                a.handle("b", reply, 1001 + step)
    assert rejects and rejects[0].index == 1
    assert b.log == a.log
    assert a.match_index["b"] == 3


def _vote(node, src, msg, now):
    node.handle(src, msg, now)
    (_, reply), = drain(node)
    return reply


def test_vote_denied_to_shorter_log():
    n = RaftNode("b", DCS)
    n.term = 2
    n.log = [LogEntry(1, 1, None), LogEntry(2, 2, None)]
    n.handle("a", RequestVote(3, "a", 1, 1), 10)
    (_, reply), = drain(n)
    assert reply == VoteReply(3, False)
    assert n.term == 3 and n.voted_for is None


def test_higher_term_forces_step_down():
    n = RaftNode("a", ["a"])
    n.tick(n.election_deadline)
    assert n.role is Role.LEADER
    n.peers = ["b"]
    n.handle("b", AppendReply(7, False, 0, 0), 500)
    assert n.role is Role.FOLLOWER and n.term == 7


def test_stale_term_answered_not_dropped():
    n = RaftNode("b", DCS)
    n.term = 5
    n.handle("a", AppendEntries(3, "a", 0, 0, (), 0, 1), 1)
    (dst, reply), = drain(n)
    assert dst == "a" and reply.term == 5 and not reply.success


def test_split_vote_resolves_in_later_term():
    four = ["a", "b", "c", "d"]
    nodes = {x: RaftNode(x, four, rng=random.Random(i)) for i, x in enumerate(four)}
    a, b, c, d = (nodes[x] for x in four)
    a._start_election(100)
    b._start_election(100)
    ra = dict(drain(a))
    rb = dict(drain(b))
    # c hears a first, d hears b first
    for voter, first, second in ((c, ("a", ra["c"]), ("b", rb["c"])), (d, ("b", rb["d"]), ("a", ra["d"]))):
        for src, m in (first, second):
            voter.handle(src, m, 101)
            for dst, reply in drain(voter):
                nodes[dst].handle(voter.id, reply, 102)
    for src, dst in (("a", "b"), ("b", "a")):
        nodes[dst].handle(src, (ra if src == "a" else rb)[dst], 101)
        for to, reply in drain(nodes[dst]):
            nodes[to].handle(dst, reply, 102)
    assert a.role is Role.CANDIDATE and b.role is Role.CANDIDATE and a.term == b.term == 1
    a._start_election(400)
    assert a.term == 2
    for dst, m in drain(a):
        nodes[dst].handle("a", m, 401)
        for to, reply in drain(nodes[dst]):
            nodes[to].handle(dst, reply, 402)
    assert a.role is Role.LEADER and a.term == 2


# -- driven over simnet ---------------------------------------------------------------


def test_three_node_commit_takes_one_round_trip():
    sim, net, g = cluster()
    leader = settle(sim, g)
    sim.run(until=sim.now + 100)
    start = sim.now
    done = []
    g.write(leader, Command("k", "set", b"1"), lambda e, v, i: done.append((e, sim.now)))
    sim.run(until=start + 200)
    assert done == [(None, start + 20)]


def test_read_after_write():
    sim, net, g = cluster()
    leader = settle(sim, g)
    out = []
    g.write("a", Command("k", "set", b"1"), lambda e, v, i: g.read("b", "k", lambda e2, v2, i2: out.append((e2, v2))))
    sim.run(until=sim.now + 500)
    assert out == [(None, b"1")]


def test_isolated_leader_never_commits_and_majority_elects():
    sim, net, g = cluster()
    old = settle(sim, g)
    sim.run(until=sim.now + 100)
    rest = frozenset(set(DCS) - {old})
    t0 = sim.now + 1
    net.inject_partition(PartitionEvent(frozenset({old}), rest, t0, 5000))
    sim.run(until=t0)
    got = []
    g.write(old, Command("k", "set", b"x"), lambda e, v, i: got.append(e))
    sim.run(until=t0 + 3000)
    assert got and got[0] is not None
    assert g.nodes[old].role is not Role.LEADER
    new = [dc for dc in rest if g.nodes[dc].role is Role.LEADER]
    assert len(new) == 1
    assert all(e.command is None or e.command.value != b"x" for e in g.nodes[new[0]].log)


def test_read_on_deposed_leader_fails_without_value():
    sim, net, g = cluster()
    old = settle(sim, g)
    sim.run(until=sim.now + 100)
    t0 = sim.now + 1
    net.inject_partition(PartitionEvent(frozenset({old}), frozenset(set(DCS) - {old}), t0, 5000))
    sim.run(until=t0)
    node = g.nodes[old]
    ticket = node.read_index(sim.now)
    notes = []
    for t in range(t0, t0 + 1000, 10):
        node.tick(t)
        notes += node.notes
        node.notes.clear()
        node.outbox.clear()
    reads = [n for n in notes if n[0] == "read" and n[1] == ticket]
    assert len(reads) == 1 and isinstance(reads[0][2], LeadershipLost)


def test_client_fails_fast_without_reachable_quorum():
    sim, net, g = cluster(reachable=lambda a, b: a == b)
    settle(sim, g)
    got = []
    g.write("a", Command("k"), lambda e, v, i: got.append((e, sim.now)))
    assert isinstance(got[0][0], NoReplicaAvailable) and got[0][1] == sim.now


def test_followers_never_time_out_with_heartbeats():
    sim, net, g = cluster()
    settle(sim, g)
    terms = {dc: n.term for dc, n in g.nodes.items()}
    sim.run(until=sim.now + 10_000)
    assert {dc: n.term for dc, n in g.nodes.items()} == terms


def test_election_within_bound_in_nearly_all_seeds():
    ok = 0
    for seed in range(300):
        sim, net, g = cluster(seed=seed)
        sim.run(until=3000)
        ok += g.leader() is not None
    assert ok >= 0.99 * 300


def test_redirects_reach_leader_from_any_member():
    sim, net, g = cluster()
    leader = settle(sim, g)
    follower = next(dc for dc in DCS if dc != leader)
    g._hint.clear()
    out = []
    g.write(follower, Command("k", "incr", 2), lambda e, v, i: out.append(e))
    g.write(follower, Command("k", "incr", 3), lambda e, v, i: out.append(e))
    sim.run(until=sim.now + 500)
    assert out == [None, None]
    assert g.nodes[leader].state["k"] == 5


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("size", [3, 5])
def test_safety_under_random_partitions(seed, size):
    dcs = [f"n{i}" for i in range(size)]
    sim, net, g = cluster(seed=seed, dcs=dcs, jitter=20)
    rng = random.Random(seed)
    t = 300
    for _ in range(4):
        k = rng.randint(1, size - 1)
        side = frozenset(rng.sample(dcs, k))
        dur = rng.randint(200, 1500)
        net.inject_partition(PartitionEvent(side, frozenset(dcs) - side, t, dur))
        t += dur + rng.randint(0, 400)
    for i in range(60):
        sim.schedule(rng.randint(0, t), g.write, rng.choice(dcs), Command(f"k{i % 5}", "set", bytes([i])), lambda e, v, i: None)
    sim.run(until=t)
    healed = sim.now
    done = []

    def attempt():
        g.write(dcs[0], Command("final", "set", b"1"), lambda e, v, i: done.append(sim.now) if e is None else attempt())

    attempt()
    sim.run(until=healed + 3000)
    assert done and done[0] - healed <= 3000
    assert check_all(g.trace, g.logs()) == []


def test_checkers_flag_violations():
    from slagrid.consensus import RaftTrace

    tr = RaftTrace(leaders=[(1, "a", 0, (1,)), (1, "b", 5, (1,))])
    assert election_safety(tr)
    bad = {"a": [LogEntry(1, 1, None), LogEntry(2, 2, None)], "b": [LogEntry(1, 1, Command("x")), LogEntry(2, 2, None)]}
    assert log_matching(bad)
