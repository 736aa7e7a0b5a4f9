"""Deterministic link shaping: capacity cap with a drop-tail FIFO, added
latency, and step schedules mirroring ``tc`` scripts.

A link models one UE bearer. Both directions share the serialization queue,
so feedback competes with media for capacity. Propagation latency applies in
both directions; shaped (added) latency applies to one direction only, the
egress of the UE where ``tc`` runs (``latency_direction``).
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Iterator, List, Optional, Tuple

from .media import Packet

INFINITE_CAPACITY = math.inf
DEFAULT_QUEUE_LIMIT_BYTES = 2_000_000
STEP_DURATION_S = 20


class Direction(enum.IntEnum):
    FORWARD = 0
    REVERSE = 1


class ShapingKind(enum.Enum):
    BANDWIDTH = "bandwidth"
    LATENCY = "latency"


@dataclass(slots=True)
class InFlight:
    """A packet accepted by a link; times are final once ``depart_ms`` has passed."""

    packet: Packet
    direction: Direction
    release_ms: float
    start_ms: float
    depart_ms: float
    deliver_ms: float
    ticket: int = 0
    context: object = None


@dataclass
class ShapedLink:
    name: str = "link"
    capacity_kbps: float = INFINITE_CAPACITY
    added_latency_ms: float = 0.0
    base_latency_ms: float = 0.0
    queue_limit_bytes: int = DEFAULT_QUEUE_LIMIT_BYTES
    latency_direction: Direction = Direction.FORWARD
    drop_count: int = 0
    sent_count: int = 0
    delivered_count: int = 0
    _pending: Deque[InFlight] = field(default_factory=deque, repr=False)
    _pending_bytes: int = 0
    _busy_until: float = -math.inf
    _last_delivery: List[float] = field(default_factory=lambda: [-math.inf, -math.inf], repr=False)
    _departed_last: List[float] = field(default_factory=lambda: [-math.inf, -math.inf], repr=False)
    _tickets: int = 0

    def __post_init__(self) -> None:
        if not self.capacity_kbps > 0:
            raise ValueError("capacity_kbps must be positive")
        if self.added_latency_ms < 0 or self.base_latency_ms < 0:
            raise ValueError("latencies must be >= 0")
        if self.queue_limit_bytes < 1:
            raise ValueError("queue_limit_bytes must be positive")

    def latency(self, direction: Direction) -> float:
        if direction == self.latency_direction:
            return self.base_latency_ms + self.added_latency_ms
        return self.base_latency_ms

    def serialization_ms(self, payload_bytes: int) -> float:
        # kbps is bits per millisecond.
        return payload_bytes * 8 / self.capacity_kbps

    def queue_bytes(self, now_ms: float) -> int:
        self._retire(now_ms)
        return self._pending_bytes

    def _retire(self, now_ms: float) -> None:
        pending = self._pending
        while pending and pending[0].depart_ms <= now_ms:
            entry = pending.popleft()
            self._pending_bytes -= entry.packet.payload_bytes
            if entry.deliver_ms > self._departed_last[entry.direction]:
                self._departed_last[entry.direction] = entry.deliver_ms

    def enqueue(
        self,
        pkt: Packet,
        now_ms: float,
        direction: Direction = Direction.FORWARD,
        release_ms: Optional[float] = None,
        context: object = None,
    ) -> Optional[InFlight]:
        """Accept ``pkt`` or drop it on overflow.

        ``release_ms`` lets a pacer hand over a packet that may not start
        serializing before that instant. Returns the in-flight record with its
        delivery time, or ``None`` for a drop.
        """
        self._retire(now_ms)
        self.sent_count += 1
        if self._pending_bytes + pkt.payload_bytes > self.queue_limit_bytes:
            self.drop_count += 1
            return None
        release = now_ms if release_ms is None else max(now_ms, release_ms)
        start = max(release, self._busy_until)
        depart = start + self.serialization_ms(pkt.payload_bytes)
        deliver = max(depart + self.latency(direction), self._last_delivery[direction])
        self._tickets += 1
        entry = InFlight(pkt, direction, release, start, depart, deliver, self._tickets, context)
        self._busy_until = depart
        self._last_delivery[direction] = deliver
        self._pending.append(entry)
        self._pending_bytes += pkt.payload_bytes
        return entry

    def set_shaping(
        self,
        at_ms: float,
        capacity_kbps: Optional[float] = None,
        added_latency_ms: Optional[float] = None,
    ) -> List[InFlight]:
        """Apply new parameters from ``at_ms`` on.

        Packets still queued (including the one being serialized) are
        re-timed under the new capacity; packets that departed before
        ``at_ms`` keep their delivery times. Returns the re-timed records,
        each with a fresh ticket so stale delivery events can be discarded.
        """
        self._retire(at_ms)
        old_capacity = self.capacity_kbps
        if capacity_kbps is not None:
            if not capacity_kbps > 0:
                raise ValueError("capacity_kbps must be positive")
            self.capacity_kbps = capacity_kbps
        if added_latency_ms is not None:
            if added_latency_ms < 0:
                raise ValueError("added_latency_ms must be >= 0")
            self.added_latency_ms = added_latency_ms
        if not self._pending:
            return []

        # Delivery floors come from packets that already left the queue.
        floors = list(self._departed_last)
        retimed = []
        busy = -math.inf
        for i, entry in enumerate(self._pending):
            bits = entry.packet.payload_bytes * 8
            if i == 0 and entry.start_ms < at_ms:
                done = (at_ms - entry.start_ms) * old_capacity if math.isfinite(old_capacity) else bits
                remaining = max(0.0, bits - done)
                start = entry.start_ms
                depart = at_ms + remaining / self.capacity_kbps
            else:
                start = max(entry.release_ms, busy, at_ms)
                depart = start + bits / self.capacity_kbps
            deliver = max(depart + self.latency(entry.direction), floors[entry.direction])
            floors[entry.direction] = deliver
            busy = depart
            self._tickets += 1
            entry.start_ms, entry.depart_ms, entry.deliver_ms = start, depart, deliver
            entry.ticket = self._tickets
            retimed.append(entry)
        self._busy_until = busy
        self._last_delivery = floors
        return retimed


@dataclass(frozen=True)
class ShapingStep:
    start_s: float
    value: float


@dataclass(frozen=True)
class ShapingSchedule:
    """Piecewise-constant steps covering [0, cycle_s), repeated cyclically."""

    kind: ShapingKind
    steps: Tuple[ShapingStep, ...]
    cycle_s: float

    def __post_init__(self) -> None:
        if not self.steps or self.steps[0].start_s != 0:
            raise ValueError("schedule must start at 0 s")
        starts = [s.start_s for s in self.steps]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("schedule steps must be strictly increasing")
        if self.cycle_s <= starts[-1]:
            raise ValueError("cycle must extend past the last step start")

    def value_at(self, t_s: float) -> float:
        t = t_s % self.cycle_s
        current = self.steps[0].value
        for step in self.steps:
            if step.start_s <= t:
                current = step.value
            else:
                break
        return current

    def boundaries(self, duration_s: float) -> Iterator[Tuple[float, float]]:
        """Yield (t_s, value) for every step boundary in (0, duration_s)."""
        cycle = 0
        while True:
            if cycle and math.isinf(self.cycle_s):
                return
            base = cycle * self.cycle_s if cycle else 0.0
            for step in self.steps:
                t = base + step.start_s
                if t >= duration_s:
                    return
                if t > 0:
                    yield t, step.value
            cycle += 1

    @classmethod
    def constant(cls, kind: ShapingKind, value: float, cycle_s: float = math.inf) -> "ShapingSchedule":
        return cls(kind, (ShapingStep(0.0, value),), cycle_s)

    @classmethod
    def from_pairs(cls, kind: ShapingKind, pairs, cycle_s: Optional[float] = None) -> "ShapingSchedule":
        steps = tuple(ShapingStep(float(a), float(b)) for a, b in pairs)
        if cycle_s is None:
            cycle_s = steps[-1].start_s + STEP_DURATION_S
        return cls(kind, steps, float(cycle_s))


def schedule_from_table(kind: ShapingKind) -> ShapingSchedule:
    if kind is ShapingKind.BANDWIDTH:
        values = (1000.0, 10000.0, 100000.0, 10000.0, 1000.0)  # kbps
    else:
        values = (600.0, 100.0, 10.0, 100.0, 600.0)  # ms
    steps = tuple(ShapingStep(float(i * STEP_DURATION_S), v) for i, v in enumerate(values))
    return ShapingSchedule(kind, steps, float(len(values) * STEP_DURATION_S))

