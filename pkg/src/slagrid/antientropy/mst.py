"""Merkle Search Tree: a history-independent hashed search tree.

Every key is assigned a layer equal to the number of leading zero hex digits
of ``sha256(key)``.  A node holds the keys of the highest layer present in its
key range, in order, and one child subtree per gap between them.  The shape
therefore depends only on the key set, so two replicas holding the same
key/value-hash pairs always agree on the root hash.

:func:`mst_diff` walks two trees top-down and only descends where hashes
differ; remote nodes are pulled through a ``fetch`` callable one batch per
tree level, so the number of fetched nodes grows with the depth of the
divergence rather than the size of the store.
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Generator, Iterable, Mapping
from dataclasses import dataclass, field
from functools import lru_cache

from ..errors import FetchFailed
from ..wire import encode_record

EMPTY_ROOT = hashlib.sha256(b"mst:empty").digest()


@lru_cache(maxsize=1 << 18)
def key_layer(key: bytes) -> int:
    h = hashlib.sha256(key).hexdigest()
    return len(h) - len(h.lstrip("0"))


@dataclass(frozen=True)
class MstNode:
    level: int
    keys: tuple[bytes, ...]
    vhashes: tuple[bytes, ...]
    children: tuple[bytes | None, ...]

    def digest(self) -> bytes:
        parts: list = [b"N", self.level]
        for k, v in zip(self.keys, self.vhashes):
            parts += [k, v]
        parts += list(self.children)
        return hashlib.sha256(encode_record(*parts)).digest()


@dataclass(frozen=True)
class MerkleSearchTree:
    root: bytes
    nodes: Mapping[bytes, MstNode] = field(default_factory=dict, compare=False, repr=False)
    size: int = 0

    @classmethod
    def build(cls, entries: Mapping[bytes, bytes] | Iterable[tuple[bytes, bytes]]) -> MerkleSearchTree:
        """Build the canonical tree for a key -> value-hash set."""
        pairs = sorted(entries.items() if isinstance(entries, Mapping) else entries)
        for i in range(1, len(pairs)):
            if pairs[i][0] == pairs[i - 1][0]:
                raise ValueError(f"duplicate key {pairs[i][0]!r}")
        keys = [k for k, _ in pairs]
        vals = [v for _, v in pairs]
        layers = [key_layer(k) for k in keys]
        nodes: dict[bytes, MstNode] = {}

        def build(lo: int, hi: int) -> bytes | None:
            if lo == hi:
                return None
            top = max(layers[lo:hi])
            cut = [i for i in range(lo, hi) if layers[i] == top]
            children = []
            start = lo
            for i in cut:
                children.append(build(start, i))
                start = i + 1
            children.append(build(start, hi))
            node = MstNode(top, tuple(keys[i] for i in cut), tuple(vals[i] for i in cut), tuple(children))
            h = node.digest()
            nodes[h] = node
            return h

        root = build(0, len(pairs))
        return cls(root if root is not None else EMPTY_ROOT, nodes, len(pairs))

    def node(self, h: bytes) -> MstNode:
        return self.nodes[h]

    def items(self, h: bytes | None = None) -> Iterable[tuple[bytes, bytes]]:
        """In-order (key, value-hash) pairs of the subtree at ``h`` (default: root)."""
        if h is None:
            h = None if self.root == EMPTY_ROOT else self.root
            if h is None:
                return
        stack: list = [h]
        out = []
        # iterative in-order walk, deep trees would blow the recursion limit otherwise
        while stack:
            top = stack.pop()
            if top is None:
                continue
            if isinstance(top, tuple):
                out.append(top)
                continue
            n = self.nodes[top]
            seq: list = []
            for i, k in enumerate(n.keys):
                seq.append(n.children[i])
                seq.append((k, n.vhashes[i]))
            seq.append(n.children[-1])
            stack.extend(reversed(seq))
        yield from out

    def depth(self) -> int:
        def d(h):
            if h is None:
                return 0
            return 1 + max((d(c) for c in self.nodes[h].children), default=0)

        return 0 if self.root == EMPTY_ROOT else d(self.root)


@dataclass
class MstDiff:
    keys: list[bytes]
    fetches: int
    rounds: int


class _Region:
    __slots__ = ("local", "remote")

    def __init__(self, local: dict[bytes, bytes]):
        self.local = local
        self.remote: dict[bytes, bytes] = {}


DiffSteps = Generator[list[bytes], Mapping[bytes, MstNode], set[bytes]]


def diff_steps(local: MerkleSearchTree, remote_root: bytes) -> DiffSteps:
    """Level-synchronous diff driver.

    Yields the list of remote node hashes needed for the next level and
    expects the corresponding nodes to be sent back; returns the divergent
    key set.  Pairs with equal hashes are never fetched.
    """
    lroot = None if local.root == EMPTY_ROOT else local.root
    rroot = None if remote_root == EMPTY_ROOT else remote_root
    out: set[bytes] = set()
    regions: list[_Region] = []
    cmp: list[tuple[bytes | None, bytes | None]] = [(lroot, rroot)]
    enum: list[tuple[_Region, bytes]] = []

    def local_items(hashes: Iterable[bytes | None]) -> dict[bytes, bytes]:
        d: dict[bytes, bytes] = {}
        for h in hashes:
            if h is not None:
                d.update(local.items(h))
        return d

    while cmp or enum:
        need = [rh for lh, rh in cmp if rh is not None and lh != rh]
        need += [rh for _, rh in enum]
        got: Mapping[bytes, MstNode] = {}
        if need:
            got = yield list(dict.fromkeys(need))
        next_cmp: list[tuple[bytes | None, bytes | None]] = []
        next_enum: list[tuple[_Region, bytes]] = []

        def absorb(region: _Region, rn: MstNode) -> None:
            region.remote.update(zip(rn.keys, rn.vhashes))
            next_enum.extend((region, c) for c in rn.children if c is not None)

        for lh, rh in cmp:
            if lh == rh:
                continue
            if rh is None:
                out.update(k for k, _ in local.items(lh))
                continue
            rn = got[rh]
            if lh is None:
                region = _Region({})
                regions.append(region)
                absorb(region, rn)
                continue
            ln = local.nodes[lh]
            if ln.level != rn.level:
                region = _Region(dict(local.items(lh)))
                regions.append(region)
                absorb(region, rn)
                continue
            lmap = dict(zip(ln.keys, ln.vhashes))
            rmap = dict(zip(rn.keys, rn.vhashes))
            for k in lmap.keys() | rmap.keys():
                if lmap.get(k) != rmap.get(k):
                    out.add(k)
            lspans = _spans(ln)
            rspans = _spans(rn)
            odd_local: list[bytes | None] = []
            odd_remote: list[bytes] = []
            for span, lc in lspans.items():
                if span in rspans:
                    next_cmp.append((lc, rspans[span]))
                else:
                    odd_local.append(lc)
            for span, rc in rspans.items():
                if span not in lspans and rc is not None:
                    odd_remote.append(rc)
            if odd_local or odd_remote:
                region = _Region(local_items(odd_local))
                regions.append(region)
                next_enum.extend((region, rc) for rc in odd_remote)
        for region, rh in enum:
            absorb(region, got[rh])
        cmp, enum = next_cmp, next_enum

    for region in regions:
        for k in region.local.keys() | region.remote.keys():
            if region.local.get(k) != region.remote.get(k):
                out.add(k)
    return out


def _spans(n: MstNode) -> dict[tuple[bytes | None, bytes | None], bytes | None]:
    bounds = (None, *n.keys, None)
    return {(bounds[i], bounds[i + 1]): n.children[i] for i in range(len(n.children))}


def mst_diff(
    local: MerkleSearchTree,
    remote: MerkleSearchTree | bytes,
    fetch: Callable[[bytes], MstNode] | None = None,
) -> MstDiff:
    """Keys whose value hashes differ between ``local`` and ``remote``.

    ``remote`` is either a tree or just its root hash; in the latter case
    ``fetch`` must resolve remote node hashes.  ``fetch`` may raise
    :class:`FetchFailed`, which aborts the diff.
    """
    if isinstance(remote, MerkleSearchTree):
        root = remote.root
        fetch = fetch or remote.node
    else:
        root = remote
        if fetch is None:
            raise ValueError("a fetch accessor is required for a bare root hash")
    steps = diff_steps(local, root)
    fetches = rounds = 0
    try:
        need = next(steps)
        while True:
            rounds += 1
            got = {}
            for h in need:
                try:
                    got[h] = fetch(h)
                except KeyError as exc:
                    raise FetchFailed(f"remote node {h.hex()[:12]} unavailable") from exc
                fetches += 1
            need = steps.send(got)
    except StopIteration as stop:
        keys = stop.value
    return MstDiff(sorted(keys), fetches, rounds)
