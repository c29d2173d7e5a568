"""Link emulation: slotted radio PHY plus seeded network impairments.

One direction of the link is: mux -> serializer (link_rate bytes/us) ->
slotted PHY (whole slots, FIFO) -> propagation + jitter + i.i.d. loss.
All arithmetic is integer microseconds, so a seeded virtual-time run is
bit-reproducible.

Draw order per packet (fixed; golden vectors depend on it): one loss draw
always; one jitter draw only when the packet survived and jitter_us_max > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .mux import Mux
from .rng import Rng
from .wire import MuxPacket, Timestamp

MAX_SLOTS_PER_PACKET = 64


class ChannelError(Exception):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    prop_delay_us: int = 2000
    jitter_us_max: int = 0
    loss_prob: float = 0.0
    slot_us: int = 1000
    slot_capacity_bytes: int = 1250
    link_rate_bytes_per_us: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.slot_us <= 0:
            raise ChannelError("slot_us must be positive")
        if self.slot_capacity_bytes <= 0:
            raise ChannelError("slot_capacity_bytes must be positive")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ChannelError(f"loss_prob {self.loss_prob} outside [0, 1]")
        if self.link_rate_bytes_per_us <= 0:
            raise ChannelError("link_rate_bytes_per_us must be positive")
        if self.prop_delay_us < 0 or self.jitter_us_max < 0:
            raise ChannelError("delays cannot be negative")


@dataclass
class Delivery:
    packet: MuxPacket
    tx_ts: Timestamp  # ready at the PHY (serialization complete)
    phy_start_ts: Timestamp
    tx_complete_ts: Timestamp
    rx_ts: Timestamp | None
    dropped: bool
    jitter_us: int = 0


class SlottedPhy:
    """FIFO slotted transmitter; one packet occupies whole exclusive slots."""

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg
        self._next_free: Timestamp = 0

    def transmit(self, size_bytes: int, ready_ts: Timestamp) -> tuple[Timestamp, Timestamp]:
        """Returns (start_ts, tx_complete_ts) for a packet ready at ready_ts."""
        cfg = self.cfg
        n_slots = math.ceil(size_bytes / cfg.slot_capacity_bytes)
        if n_slots > MAX_SLOTS_PER_PACKET:
            raise ChannelError(
                f"packet of {size_bytes} B needs {n_slots} slots (> {MAX_SLOTS_PER_PACKET})"
            )
        boundary = math.ceil(ready_ts / cfg.slot_us) * cfg.slot_us
        start = max(boundary, self._next_free)
        complete = start + n_slots * cfg.slot_us
        self._next_free = complete
        return start, complete


def phy_transmit(p: MuxPacket, ready_ts: Timestamp, cfg: ChannelConfig) -> Timestamp:
    """Single-shot slot arithmetic on an otherwise idle link."""
    _, complete = SlottedPhy(cfg).transmit(p.wire_size, ready_ts)
    return complete


def network_traverse(
    p: MuxPacket, tx_complete_ts: Timestamp, cfg: ChannelConfig, rng: Rng
) -> Delivery:
    """Apply loss and jitter; reordering may result and is not corrected."""
    dropped = rng.chance(cfg.loss_prob)
    if dropped:
        return Delivery(p, tx_complete_ts, tx_complete_ts, tx_complete_ts, None, True)
    jitter = rng.uniform_int(0, cfg.jitter_us_max) if cfg.jitter_us_max > 0 else 0
    rx = tx_complete_ts + cfg.prop_delay_us + jitter
    return Delivery(p, tx_complete_ts, tx_complete_ts, tx_complete_ts, rx, False, jitter)


class VirtualLink:
    """One direction of the emulated link, driven by an event scheduler.

    ``schedule(ts, fn)`` posts a callback into the owner's event loop;
    ``deliver(packet, rx_ts)`` fires on arrival at the far end. The mux owns
    ordering, the serializer is non-preemptive, the PHY is slot-quantized.
    """

    def __init__(
        self,
        cfg: ChannelConfig,
        rng: Rng,
        mux: Mux,
        schedule: Callable[[Timestamp, Callable[[], None]], None],
        deliver: Callable[[MuxPacket, Timestamp], None],
        on_serialized: Callable[[MuxPacket, Timestamp], None] | None = None,
        record_deliveries: bool = True,
    ):
        self.cfg = cfg
        self.rng = rng
        self.mux = mux
        self.schedule = schedule
        self.deliver = deliver
        self.on_serialized = on_serialized
        self.phy = SlottedPhy(cfg)
        self.deliveries: list[Delivery] = []
        self.drop_log: list[MuxPacket] = []
        self.record_deliveries = record_deliveries
        self._line_free_at: Timestamp = 0
        self._line_busy = False

    def submit(self, p: MuxPacket, ts: Timestamp) -> None:
        self.mux.enqueue(p, ts)
        self._kick(ts)

    def _kick(self, ts: Timestamp) -> None:
        if self._line_busy:
            return
        p = self.mux.dequeue_next(ts)
        if p is None:
            return
        self._line_busy = True
        ser_us = math.ceil(p.wire_size / self.cfg.link_rate_bytes_per_us)
        ready = ts + ser_us
        if self.on_serialized is not None:
            self.on_serialized(p, ready)
        start, tx_complete = self.phy.transmit(p.wire_size, ready)
        d = network_traverse(p, tx_complete, self.cfg, self.rng)
        d.phy_start_ts = start
        d.tx_ts = ready
        if d.dropped:
            self.drop_log.append(p)
        else:
            self.schedule(d.rx_ts, lambda pkt=p, rx=d.rx_ts: self.deliver(pkt, rx))
        if self.record_deliveries:
            self.deliveries.append(d)
        self.schedule(ready, lambda t=ready: self._line_freed(t))

    def _line_freed(self, ts: Timestamp) -> None:
        self._line_busy = False
        self._kick(ts)
