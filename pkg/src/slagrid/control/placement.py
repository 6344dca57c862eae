"""Placement: failure estimates, replica counts, and replica-set selection.

Availability follows the independent-failure model: a replica set ``S`` is
unavailable only when every site in it is down, so its availability is
``1 - prod(p_i for i in S)``.  Probabilities and targets are compared as
exact decimals (``Fraction(repr(x))``), so ``0.01 * 0.01`` meets four nines
exactly instead of missing it by a rounding error.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

from ..errors import InsufficientCapacity, InsufficientSites, InvalidTarget, NoSamples
from ..model import DatacenterProfile, FlattenedClass

ALPHA = 0.2
P_MIN = 1e-6
P_MAX = 1 - 1e-6


def estimate_failure_prob(samples: Iterable[bool], *, alpha: float = ALPHA, prior: float = 0.0) -> float:
    """EWMA of the down fraction over up/down observations (``True`` = up).

    The estimate starts at ``prior`` and is clamped to ``[1e-6, 1 - 1e-6]``.
    """
    est = prior
    seen = False
    for up in samples:
        seen = True
        est = (1 - alpha) * est + alpha * (0.0 if up else 1.0)
    if not seen:
        raise NoSamples("at least one up/down observation is needed")
    return min(P_MAX, max(P_MIN, est))


def _exact(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def set_availability(probs: Iterable[float]) -> float:
    return float(1 - math.prod((_exact(p) for p in probs), start=Fraction(1)))


def meets(target: float, probs: Iterable[float]) -> bool:
    return 1 - math.prod((_exact(p) for p in probs), start=Fraction(1)) >= _exact(target)


@dataclass(frozen=True)
class ReplicaChoice:
    k: int
    sites: tuple[str, ...]


def replication_factor(target: float, candidates: Mapping[str, float] | Sequence[tuple[str, float]]) -> ReplicaChoice:
    """Smallest ``k`` whose ``k`` most reliable sites jointly meet ``target``."""
    if not 0 < target < 1:
        raise InvalidTarget(f"availability target must lie in (0, 1), got {target}")
    items = list(candidates.items()) if isinstance(candidates, Mapping) else list(candidates)
    if not items:
        raise InsufficientSites("no candidate sites")
    order = sorted(range(len(items)), key=lambda i: (items[i][1], i))
    need = 1 - _exact(target)
    prod = Fraction(1)
    for k, i in enumerate(order, start=1):
        prod *= _exact(items[i][1])
        if prod <= need:
            return ReplicaChoice(k, tuple(items[j][0] for j in order[:k]))
    raise InsufficientSites(f"all {len(items)} sites together reach only {float(1 - prod):.12g} < {target}")


def reserved_slots(rps: float, service_ms: float) -> int:
    """Slots needed to start ``rps`` invocations per second without queueing."""
    if rps <= 0:
        return 0
    return max(1, math.ceil(round(rps * service_ms / 1000, 9)))


def split_reservation(rps: float, service_ms: float, capacities: Mapping[str, int]) -> dict[str, int]:
    """Share ``rps`` across sites in proportion to capacity, rounding each share up."""
    total = sum(capacities.values())
    if rps <= 0 or total <= 0:
        return {}
    out = {}
    for dc, cap in capacities.items():
        share = rps * cap / total
        if share > 0:
            out[dc] = reserved_slots(share, service_ms)
    return out


@dataclass
class PlacementPlan:
    class_name: str
    sites: list[str]
    k: int
    reserved: dict[str, dict[str, int]] = field(default_factory=dict)  # dc -> function -> slots
    rationale: dict = field(default_factory=dict)

    def reserved_at(self, dc: str) -> int:
        return sum(self.reserved.get(dc, {}).values())

    def as_record(self) -> dict:
        return {
            "class": self.class_name,
            "sites": list(self.sites),
            "k": self.k,
            "reserved": {dc: dict(sorted(f.items())) for dc, f in sorted(self.reserved.items())},
            "rationale": self.rationale,
        }


def class_target(flat: FlattenedClass) -> float:
    """The strictest availability asked for by the class or any member."""
    return max([flat.class_sla.availability, *(s.availability for s in flat.member_sla.values())])


def class_locality(flat: FlattenedClass) -> list[str]:
    seen: dict[str, None] = {}
    for sla in (flat.class_sla, *(flat.member_sla[m.name] for m in (*flat.attributes, *flat.functions))):
        for dc in sla.locality or ():
            seen.setdefault(dc)
    return list(seen)


class Placer:
    """Stateful placement: keeps the round-robin pointer across classes."""

    def __init__(self, profiles: Sequence[DatacenterProfile]):
        self.profiles = {p.id: p for p in profiles}
        self.order = [p.id for p in profiles]
        self._next = 0

    def _rotation(self, exclude: Iterable[str]) -> list[str]:
        skip = set(exclude)
        n = len(self.order)
        return [self.order[(self._next + i) % n] for i in range(n) if self.order[(self._next + i) % n] not in skip]

    def _advance(self, dc: str) -> None:
        self._next = (self.order.index(dc) + 1) % len(self.order)

    def next_site(self, exclude: Iterable[str], allowed: Iterable[str] | None = None) -> str | None:
        ok = None if allowed is None else set(allowed)
        for dc in self._rotation(exclude):
            if ok is None or dc in ok:
                self._advance(dc)
                return dc
        return None

    def place(
        self,
        flat: FlattenedClass,
        *,
        load: Mapping[str, int] | None = None,
        failure_probs: Mapping[str, float] | None = None,
        exclude: Iterable[str] = (),
    ) -> PlacementPlan:
        load = load or {}
        skip = set(exclude)
        probs = {dc: (failure_probs or {}).get(dc, self.profiles[dc].failure_prob) for dc in self.order if dc not in skip}
        target = class_target(flat)
        choice = replication_factor(target, probs) if target > 0 else ReplicaChoice(1, ())
        k = choice.k
        free = {dc: self.profiles[dc].capacity - load.get(dc, 0) for dc in probs}

        sites: list[str] = []
        for dc in class_locality(flat):
            if dc in probs and len(sites) < k and free[dc] > 0:
                sites.append(dc)
        while len(sites) < k:
            dc = self.next_site(exclude=[*sites, *skip])
            if dc is None:
                raise InsufficientSites(f"{flat.name}: need {k} sites, only {len(sites)} available")
            sites.append(dc)
        # locality or rotation may pick less reliable sites than the k best
        while target > 0 and not meets(target, [probs[dc] for dc in sites]):
            dc = self.next_site(exclude=[*sites, *skip])
            if dc is None:
                raise InsufficientSites(f"{flat.name}: no site set meets availability {target}")
            sites.append(dc)

        reserved = self._reserve(flat, sites, free)
        return PlacementPlan(
            flat.name,
            sites,
            len(sites),
            reserved,
            {
                "availability_target": target,
                "failure_probs": {dc: probs[dc] for dc in sites},
                "achieved": set_availability(probs[dc] for dc in sites),
                "minimal_k": k,
            },
        )

    def _reserve(self, flat: FlattenedClass, sites: list[str], free: Mapping[str, int]) -> dict[str, dict[str, int]]:
        reserved: dict[str, dict[str, int]] = {}
        for fn in flat.functions:
            sla = flat.member_sla[fn.name]
            if not sla.throughput:
                continue
            hosts = [dc for dc in sites if dc in (sla.locality or ())] or list(sites)
            caps = {dc: self.profiles[dc].capacity for dc in hosts}
            for dc, n in split_reservation(sla.throughput, fn.service_ms, caps).items():
                reserved.setdefault(dc, {})[fn.name] = n
        for dc, fns in reserved.items():
            if sum(fns.values()) > free.get(dc, 0):
                raise InsufficientCapacity(f"{flat.name}: {dc} cannot hold {sum(fns.values())} reserved slots")
        return reserved
