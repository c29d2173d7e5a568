"""Wall-time deployment: operator and teleoperator roles over UDP sockets.

Each role runs its pipelines on threads against the wall clock (microseconds
since the unix epoch, so two processes on the same host share timebase; a
cross-host run reports one-way latencies under a stated clock-sync
assumption, flagged in the report meta).

The sender thread emulates the shared-link serializer: it dequeues from the
mux only when the line is free and holds the line for wire_size/link_rate.
Loss and jitter impairments are applied sender-side from the seeded rng;
the slotted PHY model is a virtual-time refinement and is not paced here.
"""

from __future__ import annotations

import math
import socket
import threading
import time
from dataclasses import replace
from enum import Enum

from .config import SessionConfig, validate_config
from .gateway import GatewayServer
from .haptic import DeadbandState, HapticSample, collision_force, deadband_encode
from .metrics import LatencyCollector, SessionData, MuxTraceEvent, video_unit_id
from .mux import Mux, MuxScheme, MuxSchemeKind
from .rng import Rng, derive_seed
from .session import SessionError
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
    Vec3,
    VideoTileHeader,
    decode_haptic_payload,
    decode_packet,
    decode_video_payload,
    encode_haptic_payload,
    encode_packet,
    encode_video_payload,
)
from .world import ArmState, MasterMode, MasterSource, Workspace, render_camera, step_slave

HELLO = b"HELLO"
ACK = b"ACK"


def now_us() -> int:
    return time.time_ns() // 1000


class HandleState(str, Enum):
    INIT = "init"
    RUNNING = "running"
    ENDED = "ended"


class _StageLog:
    """Thread-safe append-only (uid, stage, ts) log."""

    def __init__(self):
        self.rows: list[tuple[str, str, int]] = []
        self._lock = threading.Lock()

    def record(self, uid: str, stage: str, ts: int) -> None:
        with self._lock:
            self.rows.append((uid, stage, ts))


class _WallSender:
    """Mux + serializer emulation + impairments in front of one UDP socket."""

    def __init__(self, sock, peer, cfg: SessionConfig, rng: Rng, link_name: str,
                 stages: _StageLog, uid_of):
        self.sock = sock
        self.peer = peer
        self.cfg = cfg
        self.rng = rng
        self.link_name = link_name
        self.stages = stages
        self.uid_of = uid_of
        quanta = {
            StreamClass.CONTROL: cfg.mux.quantum_control,
            StreamClass.HAPTIC: cfg.mux.quantum_haptic,
            StreamClass.VIDEO: cfg.mux.quantum_video,
            StreamClass.METRICS: cfg.mux.quantum_metrics,
        }
        self.mux = Mux(MuxScheme(MuxSchemeKind(cfg.mux.scheme), quanta),
                       cfg.mux.capacity_per_class)
        self._cv = threading.Condition()
        self._stop = False
        self._thread = threading.Thread(target=self._loop, daemon=True)

    def start(self):
        self._thread.start()

    def stop(self):
        with self._cv:
            self._stop = True
            self._cv.notify_all()
        self._thread.join(timeout=2.0)

    def submit(self, p: MuxPacket) -> None:
        with self._cv:
            self.mux.enqueue(p, now_us())
            self._cv.notify_all()

    def _loop(self):
        cfg_ch = self.cfg.channel
        while True:
            with self._cv:
                while not self._stop and len(self.mux) == 0:
                    self._cv.wait(timeout=0.1)
                if self._stop:
                    return
                p = self.mux.dequeue_next(now_us())
            if p is None:
                continue
            ser_s = math.ceil(p.wire_size / cfg_ch.link_rate_bytes_per_us) / 1e6
            time.sleep(ser_s)  # the line is occupied while serializing
            uid = self.uid_of(p)
            if uid is not None:
                self.stages.record(uid, "mux_out", now_us())
            if cfg_ch.loss_prob > 0 and self.rng.chance(cfg_ch.loss_prob):
                continue  # lost on air
            data = encode_packet(p)
            if cfg_ch.jitter_us_max > 0:
                delay = self.rng.uniform_int(0, cfg_ch.jitter_us_max) / 1e6
                timer = threading.Timer(delay, self._send, args=(data,))
                timer.daemon = True
                timer.start()
            else:
                self._send(data)

    def _send(self, data: bytes) -> None:
        try:
            self.sock.sendto(data, self.peer)
        except OSError:
            pass


class _Receiver:
    """Socket read loop dispatching decoded packets to a handler."""

    def __init__(self, sock, handler):
        self.sock = sock
        self.handler = handler
        self._stop = False
        self._thread = threading.Thread(target=self._loop, daemon=True)

    def start(self):
        self._thread.start()

    def stop(self):
        self._stop = True
        try:
            self.sock.close()
        except OSError:
            pass
        self._thread.join(timeout=2.0)

    def _loop(self):
        self.sock.settimeout(0.2)
        while not self._stop:
            try:
                data, addr = self.sock.recvfrom(65536 + 64)
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                p = decode_packet(data)
            except Exception:
                continue  # ignore malformed datagrams
            self.handler(p, now_us(), addr)


class OperatorRuntime:
    """Master source, command sender, feedback/video receiver, display."""

    def __init__(self, cfg: SessionConfig, gateway: GatewayServer | None = None):
        self.cfg = cfg
        self.stages = _StageLog()
        self.counters = {"haptic_generated": 0, "haptic_emitted": 0}
        ws = cfg.workspace
        self.workspace = Workspace(Box(ws.bounds_lo, ws.bounds_hi), ws.obstacles,
                                   ws.v_max, cfg.haptic.tick_us)
        self.master = MasterSource(MasterMode(cfg.master), cfg.trajectory, self.workspace)
        self.deadband = DeadbandState(weber_k=cfg.haptic.weber_k, floor=cfg.haptic.floor_m)
        self.op_view = {"slave_tip": self.workspace.bounds.center, "force": Vec3(),
                        "contact": False}
        self.gateway = gateway
        self.collector = LatencyCollector()  # populated at stop() from the stage log
        self.cmd_deadband = self.deadband  # gateway reads the last sent master position

        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind((cfg.wall.operator_host, cfg.wall.operator_port))
        except OSError as e:
            raise SessionError(f"operator bind failed on "
                               f"{cfg.wall.operator_host}:{cfg.wall.operator_port}: {e}") from e
        self.peer = (cfg.wall.teleoperator_host, cfg.wall.teleoperator_port)
        self._seq = 0
        self._fb_applied = -1
        self._displayed_frames: dict[int, dict] = {}
        self.sender = _WallSender(self.sock, self.peer, cfg,
                                  Rng(derive_seed(cfg.seed, 11)), "op", self.stages,
                                  self._uid_of)
        self.receiver = _Receiver(self.sock, self._receive)
        self._stop = False
        self._tick_thread = threading.Thread(target=self._tick_loop, daemon=True)
        self.peer_ready = threading.Event()
        self.tile_log: list[tuple[int, int, bool, int]] = []  # frame, tile, roi, ts
        self.mode_log: dict[tuple[int, int], tuple[int, int, int]] = {}

    def _uid_of(self, p: MuxPacket):
        return f"hap_cmd:{p.seq}" if p.stream_class is StreamClass.HAPTIC else None

    def start(self):
        self.receiver.start()
        self.sender.start()
        self._handshake()
        self._tick_thread.start()

    def _handshake(self):
        deadline = time.monotonic() + self.cfg.wall.handshake_timeout_s
        hello = encode_packet(MuxPacket(StreamClass.CONTROL, 0, now_us(), HELLO))
        while not self.peer_ready.is_set():
            if time.monotonic() > deadline:
                raise SessionError(
                    f"teleoperator unreachable at {self.peer[0]}:{self.peer[1]} "
                    f"after {self.cfg.wall.handshake_timeout_s:.0f}s"
                )
            try:
                self.sock.sendto(hello, self.peer)
            except OSError:
                pass
            self.peer_ready.wait(timeout=0.1)

    def stop(self):
        self._stop = True
        self._tick_thread.join(timeout=2.0)
        self.sender.stop()
        self.receiver.stop()

    def _tick_loop(self):
        period = self.cfg.haptic.tick_us / 1e6
        next_t = time.monotonic()
        while not self._stop:
            if self.gateway is not None:
                self.gateway.drain_commands(self.master)
            ts = now_us()
            sample = self.master.sample(ts)
            self.counters["haptic_generated"] += 1
            out, self.deadband = deadband_encode(sample, self.deadband)
            self.cmd_deadband = self.deadband
            if out is not None:
                seq = self._seq
                self._seq += 1
                uid = f"hap_cmd:{seq}"
                self.stages.record(uid, "capture", ts)
                self.stages.record(uid, "encode_done", ts)
                self.counters["haptic_emitted"] += 1
                self.sender.submit(
                    MuxPacket(StreamClass.HAPTIC, seq, ts, encode_haptic_payload(out.position))
                )
            next_t += period
            delay = next_t - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                next_t = time.monotonic()  # overran; resync

    def _receive(self, p: MuxPacket, rx_ts: int, addr):
        if p.stream_class is StreamClass.CONTROL:
            if p.payload == ACK:
                self.peer_ready.set()
            return
        if p.stream_class is StreamClass.HAPTIC:
            uid = f"hap_fb:{p.seq}"
            self.stages.record(uid, "capture", p.send_ts)
            self.stages.record(uid, "phy_rx", rx_ts)
            if p.seq <= self._fb_applied:
                return
            self._fb_applied = p.seq
            position, force = decode_haptic_payload(p.payload)
            self.op_view["slave_tip"] = position
            self.op_view["force"] = force if force is not None else Vec3()
            self.op_view["contact"] = force is not None and force.norm() > 0
            self.stages.record(uid, "decode_done", now_us())
            return
        if p.stream_class is StreamClass.VIDEO:
            head, data = decode_video_payload(p.payload)
            uid = video_unit_id(head.frame_id, head.tile_index, head.is_roi)
            self.stages.record(uid, "capture", p.send_ts)
            self.stages.record(uid, "phy_rx", rx_ts)
            self.mode_log[(head.frame_id, head.tile_index)] = (
                head.quant_shift, head.downsample, len(data),
            )
            # wall decode is immediate; ROI-first ordering is a virtual-time
            # cost-model concern, while real decode here is microseconds
            ts_done = now_us()
            self.stages.record(uid, "decode_done", ts_done)
            self.stages.record(uid, "display", ts_done)
            self.tile_log.append((head.frame_id, head.tile_index, head.is_roi, ts_done))
            if self.gateway is not None:
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
                self.gateway.tile_displayed(tile, ts_done)


class TeleoperatorRuntime:
    """Command receiver, slave world, force feedback, camera pipeline."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg
        self.stages = _StageLog()
        self.counters = {"feedback_generated": 0, "feedback_emitted": 0,
                         "video_frames": 0, "video_tiles_sent": 0}
        ws = cfg.workspace
        self.workspace = Workspace(Box(ws.bounds_lo, ws.bounds_hi), ws.obstacles,
                                   ws.v_max, cfg.haptic.tick_us)
        center = self.workspace.bounds.center
        self.arm = ArmState(center, center)
        self._arm_lock = threading.Lock()
        self.newest_command: Vec3 | None = None
        self._cmd_applied = -1
        self.fb_deadband = DeadbandState(weber_k=cfg.haptic.weber_k, floor=cfg.haptic.floor_m)
        self.last_sent_force = Vec3()

        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind((cfg.wall.teleoperator_host, cfg.wall.teleoperator_port))
        except OSError as e:
            raise SessionError(f"teleoperator bind failed on "
                               f"{cfg.wall.teleoperator_host}:{cfg.wall.teleoperator_port}: {e}") from e
        self.peer = (cfg.wall.operator_host, cfg.wall.operator_port)
        self._hap_seq = 0
        self._vid_seq = 0
        self._frame_id = 0
        self._video_uids: dict[int, str] = {}
        self.sender = _WallSender(self.sock, self.peer, cfg,
                                  Rng(derive_seed(cfg.seed, 12)), "tel", self.stages,
                                  self._uid_of)
        self.receiver = _Receiver(self.sock, self._receive)
        self._stop = False
        self._tick_thread = threading.Thread(target=self._tick_loop, daemon=True)
        self._camera_thread = threading.Thread(target=self._camera_loop, daemon=True)

    def _uid_of(self, p: MuxPacket):
        if p.stream_class is StreamClass.HAPTIC:
            return f"hap_fb:{p.seq}"
        if p.stream_class is StreamClass.VIDEO:
            return self._video_uids.get(p.seq)
        return None

    def start(self):
        self.receiver.start()
        self.sender.start()
        self._tick_thread.start()
        self._camera_thread.start()

    def stop(self):
        self._stop = True
        self._tick_thread.join(timeout=2.0)
        self._camera_thread.join(timeout=2.0)
        self.sender.stop()
        self.receiver.stop()

    def _receive(self, p: MuxPacket, rx_ts: int, addr):
        if p.stream_class is StreamClass.CONTROL:
            if p.payload == HELLO:
                try:
                    self.sock.sendto(
                        encode_packet(MuxPacket(StreamClass.CONTROL, 0, now_us(), ACK)), addr
                    )
                except OSError:
                    pass
            return
        if p.stream_class is not StreamClass.HAPTIC:
            return
        uid = f"hap_cmd:{p.seq}"
        self.stages.record(uid, "capture", p.send_ts)
        self.stages.record(uid, "phy_rx", rx_ts)
        if p.seq <= self._cmd_applied:
            return
        self._cmd_applied = p.seq
        position, _ = decode_haptic_payload(p.payload)
        self.newest_command = position
        self.stages.record(uid, "decode_done", now_us())

    def _tick_loop(self):
        cfg = self.cfg
        period = cfg.haptic.tick_us / 1e6
        next_t = time.monotonic()
        while not self._stop:
            ts = now_us()
            commanded = self.newest_command
            with self._arm_lock:
                if commanded is None:
                    commanded = self.arm.tip
                self.arm = step_slave(self.arm, commanded, self.workspace, cfg.haptic.tick_us)
                tip = self.arm.tip
            force = collision_force(commanded, list(self.workspace.obstacles),
                                    cfg.haptic.spring_n_per_m, cfg.haptic.f_max_n)
            self.counters["feedback_generated"] += 1
            fb = HapticSample(ts=ts, position=tip, force=force)
            out, self.fb_deadband = deadband_encode(fb, self.fb_deadband)
            if out is None and (force - self.last_sent_force).norm() > cfg.haptic.force_floor_n:
                out = fb
                self.fb_deadband = replace(self.fb_deadband, last_sent=fb.position)
            if out is not None:
                self.last_sent_force = force
                seq = self._hap_seq
                self._hap_seq += 1
                uid = f"hap_fb:{seq}"
                self.stages.record(uid, "capture", ts)
                self.stages.record(uid, "encode_done", ts)
                self.counters["feedback_emitted"] += 1
                self.sender.submit(
                    MuxPacket(StreamClass.HAPTIC, seq, ts,
                              encode_haptic_payload(out.position, out.force))
                )
            next_t += period
            delay = next_t - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                next_t = time.monotonic()

    def _camera_loop(self):
        cfg = self.cfg
        period = cfg.video.frame_period_us / 1e6
        next_t = time.monotonic()
        while not self._stop:
            ts = now_us()
            with self._arm_lock:
                arm = self.arm
            frame_id = self._frame_id
            self._frame_id += 1
            self.counters["video_frames"] += 1
            frame = render_camera(self.workspace, arm,
                                  cfg.video.frame_width, cfg.video.frame_height)
            frame.frame_id = frame_id
            tiles = tile_frame(frame, cfg.video.grid_cols, cfg.video.grid_rows)
            tip_px = project_tip(arm.tip, self.workspace.bounds.lo, self.workspace.bounds.hi,
                                 cfg.video.frame_width, cfg.video.frame_height)
            tiles = classify_roi(tiles, tip_px, cfg.video.grid_cols, cfg.video.grid_rows,
                                 cfg.video.roi_radius, cfg.video.roi_weight)
            plan = allocate_budgets(tiles, cfg.video.n_encode_workers,
                                    cfg.video.encode_budget_units, cfg.video.frame_budget_bytes)
            encoded = encode_frame(tiles, plan, ts)
            for enc in encoded:
                uid = video_unit_id(frame_id, enc.tile_index, enc.is_roi)
                self.stages.record(uid, "capture", ts)
                self.stages.record(uid, "encode_done", now_us())
                seq = self._vid_seq
                self._vid_seq += 1
                self._video_uids[seq] = uid
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
                self.sender.submit(
                    MuxPacket(StreamClass.VIDEO, seq, ts, encode_video_payload(head, enc.data))
                )
            next_t += period
            delay = next_t - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                next_t = time.monotonic()


class _GatewayView:
    """The minimal session surface the gateway reads from."""

    def __init__(self, op_view, collector, cmd_deadband):
        self.op_view = op_view
        self.collector = collector
        self.cmd_deadband = cmd_deadband


_STAGE_ORDER = {s: i for i, s in enumerate(
    ("capture", "encode_done", "mux_out", "phy_rx", "decode_done", "display"))}


def merge_stage_logs(*logs: _StageLog) -> dict[str, list[tuple[str, int]]]:
    """Union per-unit stages from both roles, pipeline-ordered.

    Wall timestamps from different threads can disagree by microseconds, so
    later stages are clamped to be monotone (measurement noise only).
    """
    per_unit: dict[str, dict[str, int]] = {}
    for log in logs:
        with log._lock:
            rows = list(log.rows)
        for uid, stage, ts in rows:
            per_unit.setdefault(uid, {}).setdefault(stage, ts)
    merged = {}
    for uid, stages in per_unit.items():
        ordered = sorted(stages.items(), key=lambda kv: _STAGE_ORDER[kv[0]])
        mono = []
        last = None
        for stage, ts in ordered:
            if last is not None and ts < last:
                ts = last
            mono.append((stage, ts))
            last = ts
        merged[uid] = mono
    return merged


class SessionHandle:
    """Init -> Running -> Ended wrapper over the wall-time runtimes."""

    def __init__(self, cfg: SessionConfig, gateway: GatewayServer | None = None):
        errors = validate_config(cfg)
        if errors:
            raise SessionError("invalid config: " + "; ".join(errors))
        if cfg.mode != "wall":
            raise SessionError("start_roles requires mode=wall")
        self.cfg = cfg
        self.state = HandleState.INIT
        self.gateway = gateway
        self.operator: OperatorRuntime | None = None
        self.teleoperator: TeleoperatorRuntime | None = None
        if cfg.roles in ("teleoperator", "both"):
            self.teleoperator = TeleoperatorRuntime(cfg)
        if cfg.roles in ("operator", "both"):
            self.operator = OperatorRuntime(cfg, gateway)

    def start(self) -> "SessionHandle":
        if self.state is not HandleState.INIT:
            raise SessionError(f"cannot start from state {self.state}")
        if self.teleoperator is not None:
            self.teleoperator.start()
        if self.operator is not None:
            self.operator.start()
        if self.gateway is not None and self.operator is not None:
            self._start_gateway_pump()
        self.state = HandleState.RUNNING
        return self

    def _start_gateway_pump(self):
        period = self.gateway.stats_period_ms / 1000
        op = self.operator
        gw = self.gateway

        def pump():
            if self.state is HandleState.ENDED:
                return
            collector = LatencyCollector()
            logs = [op.stages] + ([self.teleoperator.stages] if self.teleoperator else [])
            collector.records = merge_stage_logs(*logs)
            gw._session = _GatewayView(op.op_view, collector, op.deadband)
            try:
                gw._emit_periodic(now_us())
            except Exception:
                pass
            self._arm_pump(period, pump)

        self._arm_pump(period, pump)

    @staticmethod
    def _arm_pump(period: float, fn) -> None:
        timer = threading.Timer(period, fn)
        timer.daemon = True
        timer.start()

    def stop(self) -> SessionData:
        if self.state is HandleState.ENDED:
            raise SessionError("already ended")
        self.state = HandleState.ENDED
        if self.operator is not None:
            self.operator.stop()
        if self.teleoperator is not None:
            self.teleoperator.stop()
        return self.session_data()

    def session_data(self) -> SessionData:
        logs = []
        counters: dict[str, int] = {}
        mux_events: list[MuxTraceEvent] = []
        for name, rt in (("op", self.operator), ("tel", self.teleoperator)):
            if rt is None:
                continue
            logs.append(rt.stages)
            counters.update(rt.counters)
            for cls, n in rt.sender.mux.dropped.items():
                if n:
                    counters[f"mux_dropped:{name}:{cls.name.lower()}"] = n
            for ev in rt.sender.mux.events:
                mux_events.append(MuxTraceEvent(name, ev.packet.stream_class.name.lower(),
                                                ev.enqueue_ts, ev.dequeue_ts))
        records = merge_stage_logs(*logs)
        meta = {
            "clock_sync": "assumed-same-host-epoch",
            "duration_us": self.cfg.duration_us,
            "mode": "wall",
            "roles": self.cfg.roles,
            "seed": self.cfg.seed,
            "tick_us": self.cfg.haptic.tick_us,
            "tracking_warmup_ticks": self.cfg.tracking_warmup_ticks,
        }
        return SessionData(meta=meta, records=records, positions=[],
                           mux_events=mux_events, counters=counters)


def start_roles(cfg: SessionConfig, gateway: GatewayServer | None = None) -> SessionHandle:
    """Bind sockets, start the configured role pipelines, return the handle."""
    return SessionHandle(cfg, gateway).start()
