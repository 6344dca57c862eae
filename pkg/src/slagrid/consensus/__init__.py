"""Raft replication for strongly consistent attributes."""

from .group import RaftGroup, RaftTrace
from .node import Command, LogEntry, RaftNode, Role

__all__ = ["Command", "LogEntry", "RaftGroup", "RaftNode", "RaftTrace", "Role"]
