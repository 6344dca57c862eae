"""Heartbeat failure detector shared by routing and storage clients.

Every live datacenter sends a heartbeat to every other one each
``period_ms`` on ``fd/<dst>``.  An observer suspects a peer once it has not
heard from it for ``timeout_ms``.  A datacenter always trusts itself while up.
"""

from __future__ import annotations

from ..simnet import Envelope, Network


class FailureDetector:
    def __init__(self, net: Network, *, period_ms: int = 100, timeout_ms: int = 300):
        self.net = net
        self.sim = net.sim
        self.period_ms = period_ms
        self.timeout_ms = timeout_ms
        self._heard: dict[tuple[str, str], int] = {}
        self._started: set[str] = set()
        for dc in net.datacenters:
            self.add(dc)

    def add(self, dc: str) -> None:
        if dc in self._started:
            return
        self._started.add(dc)
        now = self.sim.now
        for other in self._started:
            self._heard[(dc, other)] = now
            self._heard[(other, dc)] = now
        self.net.subscribe(dc, f"fd/{dc}", self._on_beat)
        self.sim.call_later(0, self._beat, dc)

    def _beat(self, dc: str) -> None:
        if self.net.is_up(dc):
            for other in self.net.datacenters:
                if other != dc and other in self._started:
                    self.net.post(dc, other, f"fd/{other}", dc)
        self.sim.call_later(self.period_ms, self._beat, dc)

    def _on_beat(self, env: Envelope) -> None:
        self._heard[(env.dst, env.payload)] = self.sim.now

    def reachable(self, observer: str, peer: str) -> bool:
        if observer == peer:
            return self.net.is_up(peer)
        last = self._heard.get((observer, peer))
        return last is not None and self.sim.now - last <= self.timeout_ms

    def suspects(self, observer: str) -> list[str]:
        return [dc for dc in self.net.datacenters if dc != observer and not self.reachable(observer, dc)]
