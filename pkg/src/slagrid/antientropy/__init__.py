"""CRDT values, Merkle search trees and periodic pairwise replica sync."""

from .crdt import GCounter, LwwMap, LwwRegister, Stamp, crdt_merge
from .mst import MerkleSearchTree, MstDiff, mst_diff
from .replica import Gate, Replica, ReplicaSyncState, default_sync_period, staleness_gate, sync_pair
from .service import AntiEntropyGroup, SyncStats

__all__ = [
    "AntiEntropyGroup",
    "GCounter",
    "Gate",
    "LwwMap",
    "LwwRegister",
    "MerkleSearchTree",
    "MstDiff",
    "Replica",
    "ReplicaSyncState",
    "Stamp",
    "SyncStats",
    "crdt_merge",
    "default_sync_period",
    "mst_diff",
    "staleness_gate",
    "sync_pair",
]
