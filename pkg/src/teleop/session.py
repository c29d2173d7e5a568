"""Session orchestration: the bidirectional loop under a virtual clock.

One event loop drives both roles:

  operator:     master source -> deadband -> mux -> link  (commands)
                link -> feedback state / tile decoder -> display
  teleoperator: link -> newest command -> slave step -> collision force
                camera -> tiles -> ROI budgets -> encode -> mux -> link

Everything is integer microseconds; ties resolve by insertion order, so a
(seed, config) pair replays to the same report byte for byte.
"""

from __future__ import annotations

import heapq
import math
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .channel import VirtualLink
from .config import SessionConfig, validate_config
from .haptic import (
    DeadbandState,
    HapticSample,
    collision_force,
    deadband_encode,
)
from .metrics import (
    LatencyCollector,
    SessionData,
    MuxTraceEvent,
    video_unit_id,
)
from .mux import Mux, MuxScheme, MuxSchemeKind
from .rng import Rng, derive_seed
from .video import (
    EncodedTile,
    EncodeMode,
    allocate_budgets,
    classify_roi,
    decode_tile_pixels,
    encode_frame,
    project_tip,
    tile_frame,
)
from .wire import (
    Box,
    MuxPacket,
    StreamClass,
    Timestamp,
    Vec3,
    decode_haptic_payload,
    decode_video_payload,
    encode_haptic_payload,
    encode_video_payload,
    VideoTileHeader,
)
from .world import (
    ArmState,
    MasterMode,
    MasterSource,
    Workspace,
    render_camera,
    step_slave,
)


class SessionError(Exception):
    pass


_ZERO_FORCE = Vec3()


class EventLoop:
    """Deterministic event queue; ties break by insertion order."""

    def __init__(self):
        self._heap: list[tuple[Timestamp, int, Callable[[], None]]] = []
        self._seq = 0
        self.now: Timestamp = 0

    def schedule(self, ts: Timestamp, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (ts, self._seq, fn))
        self._seq += 1

    def run_until(self, end_ts: Timestamp, pace: "Pacer | None" = None) -> None:
        heap = self._heap
        pop = heapq.heappop
        while heap and heap[0][0] < end_ts:
            ts, _, fn = pop(heap)
            if pace is not None:
                pace.wait_until(ts)
            self.now = ts
            fn()


class Pacer:
    """Aligns virtual timestamps with the wall clock for live sessions."""

    def __init__(self):
        self._epoch = _time.monotonic()

    def wait_until(self, virtual_ts: Timestamp) -> None:
        deadline = self._epoch + virtual_ts / 1e6
        delta = deadline - _time.monotonic()
        if delta > 0:
            _time.sleep(delta)


@dataclass
class _FrameAsm:
    """Receiver-side assembly state for one video frame."""

    expected: int
    capture_ts: Timestamp
    arrived: int = 0
    roi_pending: int = 0  # arrived ROI tiles not yet decoded
    held: list = field(default_factory=list)  # non-ROI tiles awaiting the gate
    superseded: bool = False

    def gate_open(self) -> bool:
        return self.roi_pending == 0 and (self.arrived >= self.expected or self.superseded)


class TileDecoder:
    """Arrival-driven decoder pool: ROI tiles immediately, others gated.

    A frame's non-ROI tiles wait until its arrived ROI tiles are decoded and
    the frame is either fully arrived or superseded by a newer frame (which
    declares stragglers lost). Display happens at decode completion.
    """

    def __init__(
        self,
        n_decoders: int,
        schedule: Callable[[Timestamp, Callable[[], None]], None],
        on_display: Callable[[EncodedTile, Timestamp], None],
        reconstruct: bool = False,
    ):
        self.n_decoders = n_decoders
        self.schedule = schedule
        self.on_display = on_display
        self.reconstruct = reconstruct
        self.free_at = [0] * n_decoders
        self.ready: list[tuple[tuple, int, EncodedTile]] = []
        self._push_seq = 0
        self.frames: dict[int, _FrameAsm] = {}
        self.newest_frame = -1
        self.canvas: np.ndarray | None = None

    def register_frame(self, frame_id: int, expected: int, capture_ts: Timestamp) -> None:
        self.frames.setdefault(frame_id, _FrameAsm(expected=expected, capture_ts=capture_ts))

    def submit(self, tile: EncodedTile, rx_ts: Timestamp) -> None:
        fa = self.frames.get(tile.frame_id)
        if fa is None:
            raise SessionError("frame must be registered before tiles are submitted")
        fa.arrived += 1
        if tile.frame_id > self.newest_frame:
            self.newest_frame = tile.frame_id
            for fid, other in self.frames.items():
                if fid < tile.frame_id and not other.superseded:
                    other.superseded = True
                    self._release_if_open(fid)
        if tile.is_roi:
            fa.roi_pending += 1
            self._push(tile)
        else:
            fa.held.append(tile)
            self._release_if_open(tile.frame_id)
        self._dispatch(rx_ts)

    def _push(self, tile: EncodedTile) -> None:
        key = (not tile.is_roi, tile.frame_id, tile.tile_index)
        heapq.heappush(self.ready, (key, self._push_seq, tile))
        self._push_seq += 1

    def _release_if_open(self, frame_id: int) -> None:
        fa = self.frames.get(frame_id)
        if fa is not None and fa.held and fa.gate_open():
            for tile in fa.held:
                self._push(tile)
            fa.held.clear()

    def _dispatch(self, now: Timestamp) -> None:
        while self.ready:
            d = min(range(self.n_decoders), key=lambda k: (self.free_at[k], k))
            if self.free_at[d] > now:
                break
            _, _, tile = heapq.heappop(self.ready)
            start = max(self.free_at[d], now)
            done = start + tile.decode_cost
            self.free_at[d] = done
            self.schedule(done, lambda t=tile, ts=done: self._complete(t, ts))

    def _complete(self, tile: EncodedTile, ts: Timestamp) -> None:
        fa = self.frames[tile.frame_id]
        if tile.is_roi:
            fa.roi_pending -= 1
            self._release_if_open(tile.frame_id)
        if self.reconstruct and self.canvas is not None:
            x, y, w, h = tile.rect
            self.canvas[y : y + h, x : x + w] = decode_tile_pixels(tile.data, w, h, tile.mode)
        self.on_display(tile, ts)
        self._dispatch(ts)


class VirtualSession:
    """Both-in-one deterministic session."""

    def __init__(self, cfg: SessionConfig):
        errors = validate_config(cfg)
        if errors:
            raise SessionError("invalid config: " + "; ".join(errors))
        self.cfg = cfg
        self.loop = EventLoop()
        self.collector = LatencyCollector()
        self.counters: dict[str, int] = {
            "haptic_generated": 0,
            "haptic_emitted": 0,
            "feedback_generated": 0,
            "feedback_emitted": 0,
            "video_frames": 0,
            "video_tiles_sent": 0,
        }
        self.positions: list[tuple[Timestamp, Vec3, Vec3]] = []

        ws_cfg = cfg.workspace
        self.workspace = Workspace(
            bounds=Box(ws_cfg.bounds_lo, ws_cfg.bounds_hi),
            obstacles=ws_cfg.obstacles,
            v_max=ws_cfg.v_max,
            tick_us=cfg.haptic.tick_us,
        )
        center = self.workspace.bounds.center
        self.arm = ArmState(tip=center, last_command=center)
        self.master = MasterSource(
            MasterMode(cfg.master),
            trajectory=cfg.trajectory,
            workspace=self.workspace,
        )
        self.cmd_deadband = DeadbandState(weber_k=cfg.haptic.weber_k, floor=cfg.haptic.floor_m)
        self.fb_deadband = DeadbandState(weber_k=cfg.haptic.weber_k, floor=cfg.haptic.floor_m)
        self.last_sent_force = Vec3()
        self.newest_command: Vec3 | None = None

        scheme_kind = MuxSchemeKind(cfg.mux.scheme)
        quanta = {
            StreamClass.CONTROL: cfg.mux.quantum_control,
            StreamClass.HAPTIC: cfg.mux.quantum_haptic,
            StreamClass.VIDEO: cfg.mux.quantum_video,
            StreamClass.METRICS: cfg.mux.quantum_metrics,
        }
        mk_mux = lambda: Mux(MuxScheme(scheme_kind, quanta), cfg.mux.capacity_per_class)
        self.op_link = VirtualLink(
            cfg.channel,
            Rng(derive_seed(cfg.seed, 1)),
            mk_mux(),
            schedule=self.loop.schedule,
            deliver=self._teleoperator_receive,
            on_serialized=lambda p, ts: self._stamp_mux_out("op", p, ts),
        )
        self.tel_link = VirtualLink(
            cfg.channel,
            Rng(derive_seed(cfg.seed, 2)),
            mk_mux(),
            schedule=self.loop.schedule,
            deliver=self._operator_receive,
            on_serialized=lambda p, ts: self._stamp_mux_out("tel", p, ts),
        )
        self._seq = {("op", StreamClass.HAPTIC): 0, ("tel", StreamClass.HAPTIC): 0,
                     ("tel", StreamClass.VIDEO): 0}
        self._video_uid_by_seq: dict[int, str] = {}
        self._cmd_applied_seq = -1
        self._fb_applied_seq = -1
        self.received_seqs: dict[tuple[str, StreamClass], list[int]] = {}

        self.decoder = TileDecoder(
            cfg.video.n_decode_workers,
            schedule=self.loop.schedule,
            on_display=self._tile_displayed,
        )
        self.decoder.canvas = np.full(
            (cfg.video.frame_height, cfg.video.frame_width), 0, dtype=np.uint8
        )
        self._frame_id = 0
        self._encode_cache: dict = {}

        # operator-side live view of the far end (for the gateway/console)
        self.op_view = {"slave_tip": center, "force": Vec3(), "contact": False}
        self.gateway = None  # attached by gateway_serve

        self._tick_us = cfg.haptic.tick_us
        self._frame_period = cfg.video.frame_period_us
        self._obstacle_list = list(self.workspace.obstacles)
        self._k_s = cfg.haptic.spring_n_per_m
        self._f_max = cfg.haptic.f_max_n
        self._force_floor = cfg.haptic.force_floor_n

    # --- sending helpers ---------------------------------------------------

    def _next_seq(self, link: str, cls: StreamClass) -> int:
        key = (link, cls)
        seq = self._seq[key]
        self._seq[key] = seq + 1
        return seq

    def _stamp_mux_out(self, link: str, p: MuxPacket, ts: Timestamp) -> None:
        uid = self._uid_for(link, p)
        if uid is not None:
            self.collector.record(uid, "mux_out", ts)

    def _uid_for(self, link: str, p: MuxPacket) -> str | None:
        if p.stream_class is StreamClass.HAPTIC:
            return f"hap_cmd:{p.seq}" if link == "op" else f"hap_fb:{p.seq}"
        if p.stream_class is StreamClass.VIDEO:
            return self._video_uid_by_seq.get(p.seq)
        return None

    # --- operator side -------------------------------------------------------

    def _tick(self, ts: Timestamp) -> None:
        cfg = self.cfg
        if self.gateway is not None:
            self.gateway.drain_commands(self.master)
        sample = self.master.sample(ts)
        self.counters["haptic_generated"] += 1
        out, self.cmd_deadband = deadband_encode(sample, self.cmd_deadband)
        if out is not None:
            seq = self._next_seq("op", StreamClass.HAPTIC)
            uid = f"hap_cmd:{seq}"
            self.collector.record(uid, "capture", ts)
            self.collector.record(uid, "encode_done", ts)
            self.counters["haptic_emitted"] += 1
            pkt = MuxPacket(
                StreamClass.HAPTIC, seq, ts, encode_haptic_payload(out.position)
            )
            self.op_link.submit(pkt, ts)

        self._teleoperator_tick(ts, sample.position)
        next_ts = ts + self._tick_us
        if next_ts < cfg.duration_us:
            self.loop.schedule(next_ts, lambda: self._tick(next_ts))

    # --- teleoperator side ---------------------------------------------------

    def _teleoperator_tick(self, ts: Timestamp, master_pos: Vec3) -> None:
        commanded = self.newest_command if self.newest_command is not None else self.arm.tip
        self.arm = step_slave(self.arm, commanded, self.workspace, self._tick_us)
        if self._obstacle_list:
            force = collision_force(commanded, self._obstacle_list, self._k_s, self._f_max)
        else:
            force = _ZERO_FORCE
        self.counters["feedback_generated"] += 1
        fb = HapticSample(ts=ts, position=self.arm.tip, force=force)
        out, self.fb_deadband = deadband_encode(fb, self.fb_deadband)
        if (
            out is None
            and force is not self.last_sent_force
            and (force - self.last_sent_force).norm() > self._force_floor
        ):
            out = fb
            self.fb_deadband = replace(self.fb_deadband, last_sent=fb.position)
        if out is not None:
            self.last_sent_force = force
            seq = self._next_seq("tel", StreamClass.HAPTIC)
            uid = f"hap_fb:{seq}"
            self.collector.record(uid, "capture", ts)
            self.collector.record(uid, "encode_done", ts)
            self.counters["feedback_emitted"] += 1
            pkt = MuxPacket(
                StreamClass.HAPTIC, seq, ts, encode_haptic_payload(out.position, out.force)
            )
            self.tel_link.submit(pkt, ts)
        self.positions.append((ts, master_pos, self.arm.tip))

    def _frame(self, ts: Timestamp) -> None:
        cfg = self.cfg
        frame_id = self._frame_id
        self._frame_id += 1
        self.counters["video_frames"] += 1
        frame = render_camera(self.workspace, self.arm, cfg.video.frame_width, cfg.video.frame_height)
        frame.frame_id = frame_id
        frame.capture_ts = ts
        tiles = tile_frame(frame, cfg.video.grid_cols, cfg.video.grid_rows)
        tip_px = project_tip(
            self.arm.tip,
            self.workspace.bounds.lo,
            self.workspace.bounds.hi,
            cfg.video.frame_width,
            cfg.video.frame_height,
        )
        tiles = classify_roi(
            tiles, tip_px, cfg.video.grid_cols, cfg.video.grid_rows,
            cfg.video.roi_radius, cfg.video.roi_weight,
        )
        plan = allocate_budgets(
            tiles, cfg.video.n_encode_workers, cfg.video.encode_budget_units,
            cfg.video.frame_budget_bytes,
        )
        encoded = encode_frame(tiles, plan, ts, self._encode_cache)
        for enc in encoded:
            uid = video_unit_id(frame_id, enc.tile_index, enc.is_roi)
            self.collector.record(uid, "capture", ts)
            self.collector.record(uid, "encode_done", enc.encode_done_ts)
            seq = self._next_seq("tel", StreamClass.VIDEO)
            self._video_uid_by_seq[seq] = uid
            self.counters["video_tiles_sent"] += 1
            head = VideoTileHeader(
                frame_id=frame_id,
                tile_index=enc.tile_index,
                grid_cols=cfg.video.grid_cols,
                grid_rows=cfg.video.grid_rows,
                quant_shift=enc.mode.quant_shift,
                downsample=enc.mode.downsample,
                is_roi=enc.is_roi,
                tile_w=enc.rect[2],
                tile_h=enc.rect[3],
            )
            pkt = MuxPacket(StreamClass.VIDEO, seq, ts, encode_video_payload(head, enc.data))
            self.loop.schedule(
                enc.encode_done_ts, lambda p=pkt, t=enc.encode_done_ts: self.tel_link.submit(p, t)
            )
        next_ts = ts + self._frame_period
        if next_ts < cfg.duration_us:
            self.loop.schedule(next_ts, lambda: self._frame(next_ts))

    # --- receive paths ---------------------------------------------------------

    def _teleoperator_receive(self, p: MuxPacket, rx_ts: Timestamp) -> None:
        self.received_seqs.setdefault(("op", p.stream_class), []).append(p.seq)
        if p.stream_class is not StreamClass.HAPTIC:
            return
        uid = f"hap_cmd:{p.seq}"
        self.collector.record(uid, "phy_rx", rx_ts)
        if p.seq <= self._cmd_applied_seq:
            return  # stale: newest command wins
        self._cmd_applied_seq = p.seq
        position, _ = decode_haptic_payload(p.payload)
        self.newest_command = position
        self.collector.record(uid, "decode_done", rx_ts)

    def _operator_receive(self, p: MuxPacket, rx_ts: Timestamp) -> None:
        self.received_seqs.setdefault(("tel", p.stream_class), []).append(p.seq)
        if p.stream_class is StreamClass.HAPTIC:
            uid = f"hap_fb:{p.seq}"
            self.collector.record(uid, "phy_rx", rx_ts)
            if p.seq <= self._fb_applied_seq:
                return
            self._fb_applied_seq = p.seq
            position, force = decode_haptic_payload(p.payload)
            self.op_view["slave_tip"] = position
            self.op_view["force"] = force if force is not None else Vec3()
            self.op_view["contact"] = force is not None and force.norm() > 0
            self.collector.record(uid, "decode_done", rx_ts)
            return
        if p.stream_class is StreamClass.VIDEO:
            head, data = decode_video_payload(p.payload)
            uid = self._video_uid_by_seq.get(p.seq)
            if uid is None:
                uid = video_unit_id(head.frame_id, head.tile_index, head.is_roi)
            self.collector.record(uid, "phy_rx", rx_ts)
            col = head.tile_index % head.grid_cols
            row = head.tile_index // head.grid_cols
            tile = EncodedTile(
                frame_id=head.frame_id,
                tile_index=head.tile_index,
                rect=(col * head.tile_w, row * head.tile_h, head.tile_w, head.tile_h),
                mode=EncodeMode(head.quant_shift, head.downsample),
                data=data,
                size_bytes=len(data),
                mse=0.0,
                is_roi=head.is_roi,
            )
            self.decoder.register_frame(head.frame_id, head.grid_cols * head.grid_rows, p.send_ts)
            self.decoder.submit(tile, rx_ts)

    def _tile_displayed(self, tile: EncodedTile, ts: Timestamp) -> None:
        uid = video_unit_id(tile.frame_id, tile.tile_index, tile.is_roi)
        self.collector.record(uid, "decode_done", ts)
        self.collector.record(uid, "display", ts)
        if self.gateway is not None:
            self.gateway.tile_displayed(tile, ts)

    # --- run -------------------------------------------------------------------

    def run(self, pace: Pacer | None = None) -> SessionData:
        cfg = self.cfg
        if cfg.duration_us > 0:
            self.loop.schedule(0, lambda: self._tick(0))
            self.loop.schedule(0, lambda: self._frame(0))
        if self.gateway is not None:
            self.gateway.start_session_events(self)
        self.loop.run_until(cfg.duration_us, pace)
        return self.session_data()

    def session_data(self) -> SessionData:
        cfg = self.cfg
        counters = dict(self.counters)
        for link_name, link in (("op", self.op_link), ("tel", self.tel_link)):
            for cls, n in link.mux.dropped.items():
                if n:
                    counters[f"mux_dropped:{link_name}:{cls.name.lower()}"] = n
            sent: dict[StreamClass, int] = {}
            dropped: dict[StreamClass, int] = {}
            for d in link.deliveries:
                sent[d.packet.stream_class] = sent.get(d.packet.stream_class, 0) + 1
                if d.dropped:
                    dropped[d.packet.stream_class] = dropped.get(d.packet.stream_class, 0) + 1
            for cls, n in sent.items():
                counters[f"channel_sent:{link_name}:{cls.name.lower()}"] = n
            for cls, n in dropped.items():
                counters[f"channel_dropped:{link_name}:{cls.name.lower()}"] = n

        mux_events = []
        for link_name, link in (("op", self.op_link), ("tel", self.tel_link)):
            for ev in link.mux.events:
                mux_events.append(
                    MuxTraceEvent(
                        link_name,
                        ev.packet.stream_class.name.lower(),
                        ev.enqueue_ts,
                        ev.dequeue_ts,
                    )
                )
        meta = {
            "clock_sync": "shared-virtual",
            "duration_us": cfg.duration_us,
            "mode": cfg.mode,
            "roles": cfg.roles,
            "seed": cfg.seed,
            "tick_us": self._tick_us,
            "tracking_warmup_ticks": cfg.tracking_warmup_ticks,
        }
        return SessionData(
            meta=meta,
            records=self.collector.records,
            positions=self.positions,
            mux_events=mux_events,
            counters=counters,
        )


def run_session(cfg: SessionConfig) -> SessionData:
    """Execute a full virtual-time session and return its data bundle."""
    return VirtualSession(cfg).run()
