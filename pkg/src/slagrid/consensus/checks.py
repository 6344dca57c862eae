"""Trace checkers for the Raft safety properties.

Each checker returns a list of human-readable violations; an empty list
means the property held on the given trace.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence

from .group import RaftTrace
from .node import LogEntry


def election_safety(trace: RaftTrace) -> list[str]:
    """At most one leader per term."""
    seen: dict[int, str] = {}
    out = []
    for term, node, t, _ in trace.leaders:
        other = seen.setdefault(term, node)
        if other != node:
            out.append(f"term {term}: {other} and {node} both leader (t={t})")
    return out


def log_matching(logs: Mapping[str, Sequence[LogEntry]]) -> list[str]:
    """Equal (index, term) at some position implies identical prefixes."""
    out = []
    names = sorted(logs)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            la, lb = logs[a], logs[b]
            n = min(len(la), len(lb))
            # the last common (index, term) position decides the whole prefix
            last = 0
            for k in range(n, 0, -1):
                if la[k - 1].term == lb[k - 1].term:
                    last = k
                    break
            for k in range(last):
                if la[k] != lb[k]:
                    out.append(f"{a}/{b}: logs agree at index {last} but differ at {k + 1}")
                    break
    return out


def leader_completeness(trace: RaftTrace) -> list[str]:
    """Every entry committed before an election is in the new leader's log."""
    out = []
    commits = sorted((t, idx, term) for (idx, term), t in trace.commits.items())
    for term, node, t, log_terms in trace.leaders:
        for ct, idx, cterm in commits:
            if ct >= t:
                break
            if cterm < term and (idx > len(log_terms) or log_terms[idx - 1] != cterm):
                out.append(f"leader {node} of term {term} lacks committed entry ({idx}, {cterm})")
    return out


def state_machine_safety(applies: Iterable[tuple[int, str, LogEntry]]) -> list[str]:
    """No two nodes apply different entries at the same index."""
    first: dict[int, tuple[str, LogEntry]] = {}
    out = []
    for _, node, e in applies:
        prev = first.setdefault(e.index, (node, e))
        if prev[1] != e:
            out.append(f"index {e.index}: {prev[0]} applied {prev[1]} but {node} applied {e}")
    return out


def check_all(trace: RaftTrace, logs: Mapping[str, Sequence[LogEntry]]) -> list[str]:
    return (
        election_safety(trace)
        + log_matching(logs)
        + leader_completeness(trace)
        + state_machine_safety(trace.applies)
    )
