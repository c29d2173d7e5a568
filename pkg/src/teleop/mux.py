"""Class multiplexer: merge modality streams onto one serialized link.

The mux holds one FIFO queue per stream class and picks the next packet to
serialize under a selectable scheme. Service is non-preemptive: the owner
(the link serializer) calls ``dequeue_next`` only when the line is free, so
an in-flight packet is never interrupted.

Schemes:
  fifo             global arrival order, ties by class code ascending
  strict_priority  lowest class code first (Control > Haptic > Video > Metrics)
  drr              deficit round robin, per-class byte quanta, classes visited
                   in code order; a queue's deficit resets when it empties
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .stats import summarize
from .wire import MuxPacket, StreamClass, Timestamp

DEFAULT_CAPACITY_PER_CLASS = 4096
DEFAULT_QUANTUM = {
    StreamClass.CONTROL: 256,
    StreamClass.HAPTIC: 300,
    StreamClass.VIDEO: 1500,
    StreamClass.METRICS: 512,
}

_ROTATION = (StreamClass.CONTROL, StreamClass.HAPTIC, StreamClass.VIDEO, StreamClass.METRICS)


class MuxSchemeKind(str, Enum):
    FIFO = "fifo"
    STRICT_PRIORITY = "strict_priority"
    DRR = "drr"


@dataclass(frozen=True)
class MuxScheme:
    kind: MuxSchemeKind = MuxSchemeKind.STRICT_PRIORITY
    quantum: dict[StreamClass, int] = field(default_factory=lambda: dict(DEFAULT_QUANTUM))

    def __post_init__(self):
        if self.kind is MuxSchemeKind.DRR and any(q <= 0 for q in self.quantum.values()):
            raise ValueError("DRR quanta must be positive")


@dataclass(frozen=True)
class MuxEvent:
    packet: MuxPacket
    enqueue_ts: Timestamp
    dequeue_ts: Timestamp

    @property
    def delay(self) -> int:
        return self.dequeue_ts - self.enqueue_ts


class Mux:
    def __init__(
        self,
        scheme: MuxScheme | None = None,
        capacity_per_class: int = DEFAULT_CAPACITY_PER_CLASS,
        record_events: bool = True,
    ):
        self.scheme = scheme or MuxScheme()
        self.capacity = capacity_per_class
        self.record_events = record_events
        self._queues: dict[StreamClass, deque] = {c: deque() for c in _ROTATION}
        self._arrival = 0
        self.events: list[MuxEvent] = []
        self.enqueued = {c: 0 for c in _ROTATION}
        self.dequeued = {c: 0 for c in _ROTATION}
        self.dropped = {c: 0 for c in _ROTATION}
        # DRR cursor state
        self._deficit = {c: 0 for c in _ROTATION}
        self._ptr = 0
        self._fresh = True

    def __len__(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def queued(self, cls: StreamClass) -> int:
        return len(self._queues[cls])

    def enqueue(self, p: MuxPacket, ts: Timestamp) -> None:
        q = self._queues[p.stream_class]
        if len(q) >= self.capacity:
            q.popleft()  # drop-oldest: freshest data wins
            self.dropped[p.stream_class] += 1
        q.append((self._arrival, ts, p))
        self._arrival += 1
        self.enqueued[p.stream_class] += 1

    def dequeue_next(self, ts: Timestamp) -> MuxPacket | None:
        if len(self) == 0:
            return None
        kind = self.scheme.kind
        if kind is MuxSchemeKind.FIFO:
            cls = min(
                (c for c in _ROTATION if self._queues[c]),
                key=lambda c: (self._queues[c][0][1], int(c)),
            )
            return self._pop(cls, ts)
        if kind is MuxSchemeKind.STRICT_PRIORITY:
            cls = next(c for c in _ROTATION if self._queues[c])
            return self._pop(cls, ts)
        return self._drr_next(ts)

    def _pop(self, cls: StreamClass, ts: Timestamp) -> MuxPacket:
        _arrival, enq_ts, p = self._queues[cls].popleft()
        self.dequeued[cls] += 1
        if self.record_events:
            self.events.append(MuxEvent(p, enq_ts, ts))
        return p

    def _drr_next(self, ts: Timestamp) -> MuxPacket:
        while True:
            cls = _ROTATION[self._ptr]
            q = self._queues[cls]
            if not q:
                self._deficit[cls] = 0
                self._advance()
                continue
            if self._fresh:
                self._deficit[cls] += self.scheme.quantum.get(cls, 1)
                self._fresh = False
            head = q[0][2]
            if head.wire_size <= self._deficit[cls]:
                self._deficit[cls] -= head.wire_size
                p = self._pop(cls, ts)
                if not q:
                    self._deficit[cls] = 0
                    self._advance()
                return p
            self._advance()  # head does not fit; keep the residual deficit

    def _advance(self) -> None:
        self._ptr = (self._ptr + 1) % len(_ROTATION)
        self._fresh = True

    def conservation_ok(self) -> bool:
        return all(
            self.enqueued[c] == self.dequeued[c] + self.dropped[c] + len(self._queues[c])
            for c in _ROTATION
        )


def mux_delay_stats(events: list[MuxEvent]) -> dict[str, dict]:
    """Per-class {count, min, max, mean, p50, p99} of queueing delay."""
    per_class: dict[StreamClass, list[int]] = {}
    for e in events:
        per_class.setdefault(e.packet.stream_class, []).append(e.delay)
    return {cls.name.lower(): summarize(delays) for cls, delays in sorted(per_class.items())}
