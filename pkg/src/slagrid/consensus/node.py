"""A Raft node as a pure state machine.

The node never touches the clock or the network.  Every entry point takes
the current time, mutates local state, and leaves outbound messages in
:attr:`RaftNode.outbox` and client-visible outcomes in
:attr:`RaftNode.notes`.  A driver (see :mod:`slagrid.consensus.group`) moves
messages across the simulated network and calls :meth:`RaftNode.tick` at
:meth:`RaftNode.next_deadline`.

Beyond textbook Raft the node implements:

* read-index reads: a read is served once a heartbeat sent after the request
  was acknowledged by a quorum and an entry of the current term committed;
* check-quorum: a leader that hears from no quorum for one maximum election
  timeout steps down, failing its pending reads and writes.
"""

from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import dataclass
from typing import Any

from ..errors import LeadershipLost, NotLeader

ELECTION_MS = (150, 300)
HEARTBEAT_MS = 50
MAX_BATCH = 512


class Role(enum.Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


@dataclass(frozen=True)
class Command:
    """A state-machine operation on ``key``.

    ``op`` is ``set`` (``value`` bytes, ``None`` deletes), ``incr`` (``value``
    int) or ``put`` (``value`` a field -> bytes mapping, ``None`` removes).
    """

    key: str
    op: str = "set"
    value: Any = None


@dataclass(frozen=True)
class LogEntry:
    term: int
    index: int
    command: Command | None  # None is the leader's no-op


@dataclass(frozen=True)
class RequestVote:
    term: int
    candidate: str
    last_index: int
    last_term: int


@dataclass(frozen=True)
class VoteReply:
    term: int
    granted: bool


@dataclass(frozen=True)
class AppendEntries:
    term: int
    leader: str
    prev_index: int
    prev_term: int
    entries: tuple[LogEntry, ...]
    commit: int
    seq: int


@dataclass(frozen=True)
class AppendReply:
    term: int
    success: bool
    index: int  # match index on success, retry hint on failure
    seq: int


def apply_command(state: dict[str, Any], cmd: Command) -> None:
    if cmd.op == "set":
        if cmd.value is None:
            state.pop(cmd.key, None)
        else:
            state[cmd.key] = cmd.value
    elif cmd.op == "incr":
        state[cmd.key] = state.get(cmd.key, 0) + cmd.value
    elif cmd.op == "put":
        cur = dict(state.get(cmd.key) or {})
        for f, v in cmd.value.items():
            if v is None:
                cur.pop(f, None)
            else:
                cur[f] = v
        state[cmd.key] = cur
    else:
        raise ValueError(f"unknown command op {cmd.op!r}")


class RaftNode:
    def __init__(
        self,
        node_id: str,
        peers: list[str],
        *,
        rng: random.Random | None = None,
        now: int = 0,
        election_ms: tuple[int, int] = ELECTION_MS,
        heartbeat_ms: int = HEARTBEAT_MS,
        check_quorum: bool = True,
    ):
        self.id = node_id
        self.peers = [p for p in peers if p != node_id]
        self.rng = rng or random.Random(0)
        self.election_ms = election_ms
        self.heartbeat_ms = heartbeat_ms
        self.check_quorum = check_quorum

        self.role = Role.FOLLOWER
        self.term = 0
        self.voted_for: str | None = None
        self.log: list[LogEntry] = []
        self.commit_index = 0
        self.last_applied = 0
        self.state: dict[str, Any] = {}
        self.versions: dict[str, int] = {}  # key -> index of the entry that last wrote it
        self.leader_id: str | None = None

        self.next_index: dict[str, int] = {}
        self.match_index: dict[str, int] = {}
        self.votes: set[str] = set()
        self._term_start = 0
        self._seq = 0
        self._acked_seq: dict[str, int] = {}
        self._repair_seq: dict[str, int] = {}
        self._last_ack: dict[str, int] = {}
        self._quorum_check_at = 0
        self._heartbeat_at = 0
        self._dirty = False
        self._next_ticket = 0
        self._writes: dict[int, tuple[int, int]] = {}  # log index -> (ticket, term)
        self._reads: deque[tuple[int, int]] = deque()  # (ticket, seq needed), seq nondecreasing

        self.outbox: list[tuple[str, Any]] = []
        self.notes: list[tuple] = []
        self.election_deadline = now + self._timeout()

    # -- helpers --------------------------------------------------------------

    @property
    def cluster_size(self) -> int:
        return len(self.peers) + 1

    @property
    def quorum(self) -> int:
        return self.cluster_size // 2 + 1

    @property
    def last_index(self) -> int:
        return len(self.log)

    @property
    def last_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def term_at(self, index: int) -> int:
        return self.log[index - 1].term if 0 < index <= len(self.log) else 0

    def _timeout(self) -> int:
        return self.rng.randint(*self.election_ms)

    def _send(self, dst: str, msg: Any) -> None:
        self.outbox.append((dst, msg))

    def next_deadline(self) -> int:
        if self.role is Role.LEADER:
            due = self._heartbeat_at
            if self.check_quorum:
                due = min(due, self._quorum_check_at)
            return due
        return self.election_deadline

    # -- time -------------------------------------------------------------------

    def tick(self, now: int) -> None:
        if self.role is Role.LEADER:
            if self.check_quorum and now >= self._quorum_check_at:
                window = self.election_ms[1]
                live = 1 + sum(1 for p in self.peers if self._last_ack.get(p, -(10**12)) >= now - window)
                if live < self.quorum:
                    self._step_down(self.term, now, None)
                    return
                self._quorum_check_at = now + window
            if now >= self._heartbeat_at:
                self._broadcast(now)
        elif now >= self.election_deadline:
            self._start_election(now)

    def _start_election(self, now: int) -> None:
        self.role = Role.CANDIDATE
        self.term += 1
        self.voted_for = self.id
        self.votes = {self.id}
        self.leader_id = None
        self.election_deadline = now + self._timeout()
        self.notes.append(("term", self.term))
        if len(self.votes) >= self.quorum:
            self._become_leader(now)
            return
        for p in self.peers:
            self._send(p, RequestVote(self.term, self.id, self.last_index, self.last_term))

    def _become_leader(self, now: int) -> None:
        self.role = Role.LEADER
        self.leader_id = self.id
        self.next_index = {p: self.last_index + 1 for p in self.peers}
        self.match_index = {p: 0 for p in self.peers}
        self._acked_seq = {p: 0 for p in self.peers}
        self._repair_seq = {}
        self._last_ack = {p: now for p in self.peers}
        self._quorum_check_at = now + self.election_ms[1]
        self.log.append(LogEntry(self.term, self.last_index + 1, None))
        self._term_start = self.last_index
        self.notes.append(("leader", self.term, tuple(e.term for e in self.log)))
        self._advance_commit()
        self._broadcast(now)

    def _step_down(self, term: int, now: int, leader: str | None) -> None:
        was_leader = self.role is Role.LEADER
        if term > self.term:
            self.term = term
            self.voted_for = None
        self.role = Role.FOLLOWER
        self.leader_id = leader
        self.votes = set()
        self.election_deadline = now + self._timeout()
        if was_leader:
            for ticket, _ in self._writes.values():
                self.notes.append(("write", ticket, LeadershipLost("leader stepped down before commit"), None))
            for ticket, _ in self._reads:
                self.notes.append(("read", ticket, LeadershipLost("leader lost its quorum during a read"), None))
            self._writes.clear()
            self._reads.clear()

    # -- client entry points ------------------------------------------------------

    def _not_leader(self) -> NotLeader:
        return NotLeader(self.leader_id if self.leader_id != self.id else None)

    def propose(self, cmd: Command, now: int) -> int:
        """Append ``cmd``; returns a ticket resolved by a ``("write", ticket, err, index)`` note."""
        if self.role is not Role.LEADER:
            raise self._not_leader()
        self._next_ticket += 1
        entry = LogEntry(self.term, self.last_index + 1, cmd)
        self.log.append(entry)
        self._writes[entry.index] = (self._next_ticket, self.term)
        self._dirty = True
        self._advance_commit()
        return self._next_ticket

    def read_index(self, now: int) -> int:
        """Request a linearizable read; resolved by a ``("read", ticket, err, read_index)`` note."""
        if self.role is not Role.LEADER:
            raise self._not_leader()
        self._next_ticket += 1
        self._reads.append((self._next_ticket, self._seq + 1))
        self._dirty = True
        self._serve_reads()
        return self._next_ticket

    @property
    def dirty(self) -> bool:
        return self._dirty

    def flush(self, now: int) -> None:
        """Send what :meth:`propose`/:meth:`read_index` queued since the last flush."""
        if self._dirty and self.role is Role.LEADER:
            self._broadcast(now)
        self._dirty = False

    # -- replication ----------------------------------------------------------------

    def _broadcast(self, now: int) -> None:
        self._dirty = False
        self._seq += 1
        self._heartbeat_at = now + self.heartbeat_ms
        for p in self.peers:
            self._replicate(p)
        self._serve_reads()

    def _replicate(self, p: str) -> None:
        nxt = self.next_index[p]
        prev = nxt - 1
        entries = tuple(self.log[prev : prev + MAX_BATCH])
        self._send(p, AppendEntries(self.term, self.id, prev, self.term_at(prev), entries, self.commit_index, self._seq))
        self.next_index[p] = prev + len(entries) + 1

    def _advance_commit(self) -> None:
        marks = sorted([self.last_index, *self.match_index.values()], reverse=True)
        n = marks[self.quorum - 1]
        if n > self.commit_index and self.term_at(n) == self.term:
            self.commit_index = n
            self._apply()
            self._serve_reads()

    def _apply(self) -> None:
        while self.last_applied < self.commit_index:
            self.last_applied += 1
            e = self.log[self.last_applied - 1]
            if e.command is not None:
                apply_command(self.state, e.command)
                self.versions[e.command.key] = e.index
            self.notes.append(("apply", e))
            w = self._writes.pop(e.index, None)
            if w is not None:
                ticket, term = w
                self.notes.append(("write", ticket, None if term == e.term else LeadershipLost("entry overwritten"), e.index))

    def _serve_reads(self) -> None:
        if not self._reads or self.role is not Role.LEADER or self.commit_index < self._term_start:
            return
        acked = sorted([self._seq, *self._acked_seq.values()], reverse=True)  # self confirms every seq
        confirmed = acked[self.quorum - 1] if self.quorum > 1 else self._seq + 1
        reads = self._reads
        while reads and reads[0][1] <= confirmed:
            self.notes.append(("read", reads.popleft()[0], None, self.commit_index))

    # -- messages -------------------------------------------------------------------

    def handle(self, src: str, msg: Any, now: int) -> None:
        if msg.term > self.term:
            leader = src if isinstance(msg, AppendEntries) else None
            self._step_down(msg.term, now, leader)
        if isinstance(msg, RequestVote):
            self._on_vote_request(src, msg, now)
        elif isinstance(msg, VoteReply):
            if self.role is Role.CANDIDATE and msg.term == self.term and msg.granted:
                self.votes.add(src)
                if len(self.votes) >= self.quorum:
                    self._become_leader(now)
        elif isinstance(msg, AppendEntries):
            self._on_append(src, msg, now)
        elif isinstance(msg, AppendReply):
            self._on_append_reply(src, msg, now)
        else:
            raise TypeError(f"unexpected raft message {msg!r}")

    def _on_vote_request(self, src: str, msg: RequestVote, now: int) -> None:
        up_to_date = (msg.last_term, msg.last_index) >= (self.last_term, self.last_index)
        grant = msg.term == self.term and self.voted_for in (None, msg.candidate) and up_to_date
        if grant:
            self.voted_for = msg.candidate
            self.election_deadline = now + self._timeout()
        self._send(src, VoteReply(self.term, grant))

    def _on_append(self, src: str, msg: AppendEntries, now: int) -> None:
        if msg.term < self.term:
            self._send(src, AppendReply(self.term, False, self.last_index, msg.seq))
            return
        if self.role is not Role.FOLLOWER:
            self._step_down(msg.term, now, src)
        self.leader_id = src
        self.election_deadline = now + self._timeout()
        if msg.prev_index > self.last_index:
            self._send(src, AppendReply(self.term, False, self.last_index, msg.seq))
            return
        if self.term_at(msg.prev_index) != msg.prev_term:
            self._send(src, AppendReply(self.term, False, msg.prev_index - 1, msg.seq))
            return
        for e in msg.entries:
            if e.index <= self.last_index:
                if self.log[e.index - 1].term == e.term:
                    continue
                del self.log[e.index - 1 :]
            self.log.append(e)
        match = msg.prev_index + len(msg.entries)
        if msg.commit > self.commit_index:
            self.commit_index = max(self.commit_index, min(msg.commit, match))
            self._apply()
        self._send(src, AppendReply(self.term, True, match, msg.seq))

    def _on_append_reply(self, src: str, msg: AppendReply, now: int) -> None:
        if self.role is not Role.LEADER or msg.term != self.term:
            return
        self._last_ack[src] = now
        if msg.seq > self._acked_seq.get(src, 0):
            self._acked_seq[src] = msg.seq
        if msg.success:
            if msg.index > self.match_index[src]:
                self.match_index[src] = msg.index
                self._advance_commit()
            self.next_index[src] = max(self.next_index[src], msg.index + 1)
        elif msg.seq >= self._repair_seq.get(src, 0):
            # stale rejects from optimistic sends in flight before the repair are ignored
            hint = max(self.match_index[src] + 1, min(msg.index + 1, self.last_index + 1))
            if hint < self.next_index[src]:
                self.next_index[src] = hint
                self._seq += 1
                self._repair_seq[src] = self._seq
                self._replicate(src)
        self._serve_reads()
