"""Worker slots of one datacenter: exclusive reservations plus an elastic pool.

Reserved slots are pre-warmed and owned by one function; an invocation of
that function starts on a free reserved slot at once.  A reserved slot is
booked for the invocation's known hold time, so a slot whose work ends at
the same millisecond a new arrival lands is already free for it.  Everything else
(best-effort traffic and reserved overflow) shares the elastic pool, which
starts warm at ``initial`` slots and is resized by a reactive scaler:

* every ``sample_ms`` it measures the arrival rate and mean slot hold time
  and sizes the pool to ``rate * hold * headroom``;
* the new size takes effect ``reaction_ms`` later;
* a new slot pays ``cold_start_ms`` on first use.

When the pool is full, arrivals queue up to ``queue_factor`` times the pool
size and are refused with :class:`NoCapacity` beyond that.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass

from ..errors import InsufficientCapacity, NoCapacity
from ..simnet import Simulator

# start(slot, queue_wait_ms, cold_start_ms)
StartFn = Callable[["Slot", int, int], None]


@dataclass(frozen=True)
class ScalerConfig:
    initial: int = 8
    minimum: int = 1
    sample_ms: int = 1000
    reaction_ms: int = 1000
    headroom: float = 1.2
    cold_start_ms: int = 200
    queue_factor: int = 10


class Slot:
    __slots__ = ("owner", "acquired", "reserved")

    def __init__(self, owner: str | None, reserved: bool):
        self.owner = owner
        self.reserved = reserved
        self.acquired = 0


class _Reservation:
    __slots__ = ("n", "free_at", "starts")

    def __init__(self, n: int):
        self.n = n
        self.free_at = [0] * n  # min-heap of the times each slot frees up
        self.starts = 0

    def resize(self, n: int) -> None:
        if n > self.n:
            self.free_at.extend([0] * (n - self.n))
        else:
            self.free_at = sorted(self.free_at)[:n]
        heapq.heapify(self.free_at)
        self.n = n


class DcWorkers:
    def __init__(self, sim: Simulator, dc: str, capacity: int, cfg: ScalerConfig | None = None):
        self.sim = sim
        self.dc = dc
        self.capacity = capacity
        self.cfg = cfg or ScalerConfig()
        self.reservations: dict[str, _Reservation] = {}
        self.size = 0
        self.busy = 0
        self.warm_idle = 0
        self.queue: deque[tuple[int, StartFn]] = deque()
        self._set_size(min(self.cfg.initial, self.elastic_max), warm=True)
        # scaler window
        self._arrivals = 0
        self._hold_sum = 0
        self._hold_n = 0
        self._last_hold = 0.0
        self.rejected = 0
        self.size_log: list[tuple[int, int]] = [(sim.now, self.size)]
        self._scaler = sim.call_later(self.cfg.sample_ms, self._sample)

    # -- reservations ---------------------------------------------------------

    @property
    def reserved_total(self) -> int:
        return sum(r.n for r in self.reservations.values())

    @property
    def elastic_max(self) -> int:
        return max(0, self.capacity - self.reserved_total)

    def reserve(self, key: str, slots: int) -> None:
        """Hold ``slots`` exclusively for ``key`` (replacing any earlier hold)."""
        cur = self.reservations.get(key)
        other = self.reserved_total - (cur.n if cur else 0)
        if slots < 0 or other + slots > self.capacity:
            raise InsufficientCapacity(f"{self.dc}: {slots} reserved slots for {key} exceed capacity {self.capacity}")
        if slots == 0:
            self.reservations.pop(key, None)
        elif cur is None:
            self.reservations[key] = _Reservation(slots)
        else:
            cur.resize(slots)
        if self.size > self.elastic_max:
            self._set_size(self.elastic_max)

    def release_reservation(self, key: str) -> None:
        self.reservations.pop(key, None)

    def free_slots(self) -> int:
        return self.capacity - self.reserved_total

    # -- admission ------------------------------------------------------------

    def admit(self, key: str, hold_ms: int, start: StartFn) -> None:
        """Start ``start`` on a slot now, or queue it.  Raises NoCapacity when full.

        ``hold_ms`` is how long the work occupies the slot once started.
        """
        res = self.reservations.get(key)
        now = self.sim.now
        if res is not None and res.free_at[0] <= now:
            heapq.heapreplace(res.free_at, now + hold_ms)
            res.starts += 1
            slot = Slot(key, True)
            slot.acquired = now
            start(slot, 0, 0)
            return
        self._arrivals += 1
        if self.busy < self.size:
            self._start_elastic(now, start, now)
            return
        if len(self.queue) >= self.cfg.queue_factor * max(self.size, 1):
            self.rejected += 1
            raise NoCapacity(f"{self.dc}: elastic pool of {self.size} full and queue at its bound")
        self.queue.append((now, start))

    def _start_elastic(self, now: int, start: StartFn, arrived: int) -> None:
        self.busy += 1
        cold = 0
        if self.warm_idle > 0:
            self.warm_idle -= 1
        else:
            cold = self.cfg.cold_start_ms
        slot = Slot(None, False)
        slot.acquired = now + cold
        start(slot, now - arrived, cold)

    def release(self, slot: Slot) -> None:
        now = self.sim.now
        if slot.reserved:
            return
        self.busy -= 1
        self._hold_sum += now - slot.acquired
        self._hold_n += 1
        if self.busy + self.warm_idle < self.size:
            self.warm_idle += 1
        if self.busy + self.warm_idle > self.size:
            self.warm_idle = max(0, self.size - self.busy)
        while self.queue and self.busy < self.size:
            arrived, start = self.queue.popleft()
            self._start_elastic(now, start, arrived)

    # -- scaling -----------------------------------------------------------------

    def _set_size(self, n: int, *, warm: bool = False) -> None:
        n = max(0, min(n, self.elastic_max))
        if warm and n > self.size:
            self.warm_idle += n - self.size
        self.size = n
        # idle slots beyond the new size are dropped, busy ones on release
        self.warm_idle = min(self.warm_idle, max(0, n - self.busy))
        now = self.sim.now
        while self.queue and self.busy < self.size:
            arrived, start = self.queue.popleft()
            self._start_elastic(now, start, arrived)

    def _sample(self) -> None:
        cfg = self.cfg
        rate = self._arrivals * 1000 / cfg.sample_ms
        if self._hold_n:
            self._last_hold = self._hold_sum / self._hold_n
        want = math.ceil(round(rate * self._last_hold / 1000 * cfg.headroom, 9))
        want = max(cfg.minimum, min(want, self.elastic_max))
        self._arrivals = self._hold_sum = self._hold_n = 0
        if want != self.size:
            self.sim.call_later(cfg.reaction_ms, self._apply, want)
        self._scaler = self.sim.call_later(cfg.sample_ms, self._sample)

    def _apply(self, n: int) -> None:
        self._set_size(n)
        self.size_log.append((self.sim.now, self.size))
