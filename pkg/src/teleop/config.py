"""Session configuration: JSON schema, defaults, and validation.

Validation returns a list of "field.path: problem" strings so the CLI can
name exactly what is wrong. Unknown keys are rejected to catch typos.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .channel import ChannelConfig
from .mux import MuxSchemeKind
from .wire import Box, Vec3
from .world import TrajectoryKind, TrajectorySpec


class ConfigError(Exception):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass
class HapticConfig:
    rate_hz: int = 1000
    weber_k: float = 0.1
    floor_m: float = 1e-4
    spring_n_per_m: float = 300.0
    f_max_n: float = 20.0
    force_floor_n: float = 0.05

    @property
    def tick_us(self) -> int:
        return 1_000_000 // self.rate_hz


@dataclass
class VideoConfig:
    fps: int = 30
    frame_width: int = 64
    frame_height: int = 64
    grid_cols: int = 4
    grid_rows: int = 4
    n_encode_workers: int = 2
    n_decode_workers: int = 2
    encode_budget_units: int = 8192  # per-worker cost units per frame
    frame_budget_bytes: int = 2500
    roi_radius: int = 0
    roi_weight: float = 4.0

    @property
    def frame_period_us(self) -> int:
        return round(1_000_000 / self.fps)


@dataclass
class MuxConfig:
    scheme: str = "strict_priority"
    quantum_control: int = 256
    quantum_haptic: int = 300
    quantum_video: int = 1500
    quantum_metrics: int = 512
    capacity_per_class: int = 4096


@dataclass
class WorkspaceConfig:
    bounds_lo: Vec3 = Vec3(-0.5, -0.5, -0.5)
    bounds_hi: Vec3 = Vec3(0.5, 0.5, 0.5)
    obstacles: tuple[Box, ...] = ()
    v_max: float = 1.0


@dataclass
class GatewayConfig:
    port: int = 0  # 0 = disabled
    host: str = "127.0.0.1"
    stats_period_ms: int = 50


@dataclass
class WallConfig:
    operator_host: str = "127.0.0.1"
    operator_port: int = 47201
    teleoperator_host: str = "127.0.0.1"
    teleoperator_port: int = 47202
    handshake_timeout_s: float = 5.0


@dataclass
class SessionConfig:
    seed: int = 1
    mode: str = "virtual"  # "virtual" | "wall"
    roles: str = "both"  # "both" | "operator" | "teleoperator"
    duration_us: int = 10_000_000
    master: str = "scripted"  # "scripted" | "live"
    tracking_warmup_ticks: int = 500
    haptic: HapticConfig = field(default_factory=HapticConfig)
    video: VideoConfig = field(default_factory=VideoConfig)
    mux: MuxConfig = field(default_factory=MuxConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    workspace: WorkspaceConfig = field(default_factory=WorkspaceConfig)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    wall: WallConfig = field(default_factory=WallConfig)


def validate_config(cfg: SessionConfig) -> list[str]:
    errors: list[str] = []

    def check(ok: bool, path: str, msg: str):
        if not ok:
            errors.append(f"{path}: {msg}")

    check(cfg.mode in ("virtual", "wall"), "mode", f"must be virtual or wall, got {cfg.mode!r}")
    check(
        cfg.roles in ("both", "operator", "teleoperator"),
        "roles",
        f"must be both, operator or teleoperator, got {cfg.roles!r}",
    )
    if cfg.mode == "virtual":
        check(cfg.roles == "both", "roles", "virtual mode requires roles=both")
    check(cfg.master in ("scripted", "live"), "master", f"unknown master mode {cfg.master!r}")
    check(cfg.duration_us >= 0, "duration_us", "must be non-negative")
    check(cfg.seed >= 0, "seed", "must be non-negative")

    check(cfg.haptic.rate_hz > 0, "haptic.rate_hz", "must be positive")
    if cfg.haptic.rate_hz > 0:
        check(
            1_000_000 % cfg.haptic.rate_hz == 0,
            "haptic.rate_hz",
            "must divide 1e6 us evenly",
        )
    check(cfg.haptic.weber_k >= 0, "haptic.weber_k", "must be >= 0")
    check(cfg.haptic.floor_m > 0, "haptic.floor_m", "must be > 0")
    check(cfg.haptic.f_max_n > 0, "haptic.f_max_n", "must be > 0")

    v = cfg.video
    check(v.fps > 0, "video.fps", "must be positive")
    check(v.grid_cols >= 1 and v.grid_rows >= 1, "video.grid", "grid must be at least 1x1")
    if v.grid_cols >= 1 and v.grid_rows >= 1:
        check(
            v.frame_width % v.grid_cols == 0 and v.frame_height % v.grid_rows == 0,
            "video.frame",
            f"{v.frame_width}x{v.frame_height} not divisible by grid {v.grid_cols}x{v.grid_rows}",
        )
    check(v.n_encode_workers >= 1, "video.n_encode_workers", "must be >= 1")
    check(v.n_decode_workers >= 1, "video.n_decode_workers", "must be >= 1")
    if v.grid_cols >= 1 and v.grid_rows >= 1 and v.frame_width > 0 and v.frame_height > 0:
        tile_px = (v.frame_width // v.grid_cols) * (v.frame_height // v.grid_rows)
        check(
            v.encode_budget_units >= tile_px,
            "video.encode_budget_units",
            f"below one trial of a {tile_px}-pixel tile",
        )
    check(v.frame_budget_bytes > 0, "video.frame_budget_bytes", "must be positive")
    check(v.roi_radius >= 0, "video.roi_radius", "must be >= 0")
    check(v.roi_weight >= 1, "video.roi_weight", "must be >= 1")

    try:
        MuxSchemeKind(cfg.mux.scheme)
    except ValueError:
        errors.append(f"mux.scheme: unknown scheme {cfg.mux.scheme!r}")
    for name in ("quantum_control", "quantum_haptic", "quantum_video", "quantum_metrics"):
        check(getattr(cfg.mux, name) > 0, f"mux.{name}", "must be positive")
    check(cfg.mux.capacity_per_class > 0, "mux.capacity_per_class", "must be positive")

    ch = cfg.channel
    check(0.0 <= ch.loss_prob <= 1.0, "channel.loss_prob", f"{ch.loss_prob} outside [0, 1]")
    check(ch.slot_us > 0, "channel.slot_us", "must be positive")
    check(ch.slot_capacity_bytes > 0, "channel.slot_capacity_bytes", "must be positive")
    check(ch.link_rate_bytes_per_us > 0, "channel.link_rate_bytes_per_us", "must be positive")
    check(ch.prop_delay_us >= 0, "channel.prop_delay_us", "must be >= 0")
    check(ch.jitter_us_max >= 0, "channel.jitter_us_max", "must be >= 0")

    ws = cfg.workspace
    lo, hi = ws.bounds_lo, ws.bounds_hi
    check(
        lo.x < hi.x and lo.y < hi.y and lo.z < hi.z,
        "workspace.bounds",
        "lo must be strictly below hi on every axis",
    )
    check(ws.v_max > 0, "workspace.v_max", "must be positive")
    for i, ob in enumerate(ws.obstacles):
        inside = (
            lo.x <= ob.lo.x and ob.hi.x <= hi.x
            and lo.y <= ob.lo.y and ob.hi.y <= hi.y
            and lo.z <= ob.lo.z and ob.hi.z <= hi.z
        )
        check(inside, f"workspace.obstacles[{i}]", "extends outside workspace bounds")

    check(0 <= cfg.gateway.port <= 65535, "gateway.port", "must be a valid port")
    check(cfg.gateway.stats_period_ms > 0, "gateway.stats_period_ms", "must be positive")
    return errors


# --- JSON loading ------------------------------------------------------------


def _vec3(value, path: str, errors: list[str]) -> Vec3:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 3
        or not all(isinstance(c, (int, float)) for c in value)
    ):
        errors.append(f"{path}: expected [x, y, z] numbers")
        return Vec3()
    return Vec3(*[float(c) for c in value])


def _fill(dc_obj, data: dict, path: str, errors: list[str], special: dict | None = None):
    special = special or {}
    known = {f.name for f in fields(dc_obj)}
    for key, value in data.items():
        full = f"{path}.{key}" if path else key
        if key in special:
            special[key](value, full)
            continue
        if key not in known:
            errors.append(f"{full}: unknown key")
            continue
        current = getattr(dc_obj, key)
        if isinstance(current, bool) and not isinstance(value, bool):
            errors.append(f"{full}: expected boolean")
        elif isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"{full}: expected number")
            else:
                setattr(dc_obj, key, int(value))
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"{full}: expected number")
            else:
                setattr(dc_obj, key, float(value))
        elif isinstance(current, str):
            if not isinstance(value, str):
                errors.append(f"{full}: expected string")
            else:
                setattr(dc_obj, key, value)
        else:
            errors.append(f"{full}: unsupported value")


def config_from_dict(data: dict) -> SessionConfig:
    errors: list[str] = []
    cfg = SessionConfig()

    def sub(name, obj, special=None):
        raw = data.get(name)
        if raw is None:
            return
        if not isinstance(raw, dict):
            errors.append(f"{name}: expected object")
            return
        _fill(obj, raw, name, errors, special)

    top_known = {
        "seed",
        "mode",
        "roles",
        "duration_us",
        "duration",
        "master",
        "tracking_warmup_ticks",
        "haptic",
        "video",
        "mux",
        "channel",
        "workspace",
        "trajectory",
        "gateway",
        "wall",
    }
    for key in data:
        if key not in top_known:
            errors.append(f"{key}: unknown key")

    for key in ("seed", "duration_us", "tracking_warmup_ticks"):
        if key in data:
            if isinstance(data[key], bool) or not isinstance(data[key], (int, float)):
                errors.append(f"{key}: expected number")
            else:
                setattr(cfg, key, int(data[key]))
    if "duration" in data:
        try:
            cfg.duration_us = parse_duration(data["duration"])
        except ValueError as e:
            errors.append(f"duration: {e}")
    for key in ("mode", "roles", "master"):
        if key in data:
            if not isinstance(data[key], str):
                errors.append(f"{key}: expected string")
            else:
                setattr(cfg, key, data[key])

    sub("haptic", cfg.haptic)
    sub("video", cfg.video)
    sub("mux", cfg.mux)
    sub("gateway", cfg.gateway)
    sub("wall", cfg.wall)

    ch_raw = data.get("channel")
    if ch_raw is not None:
        if not isinstance(ch_raw, dict):
            errors.append("channel: expected object")
        else:
            ch_fields = {f.name for f in fields(ChannelConfig)}
            kwargs = {}
            for key, value in ch_raw.items():
                if key not in ch_fields:
                    errors.append(f"channel.{key}: unknown key")
                elif isinstance(value, bool) or not isinstance(value, (int, float)):
                    errors.append(f"channel.{key}: expected number")
                else:
                    kwargs[key] = value
            base = ChannelConfig()
            merged = {f.name: getattr(base, f.name) for f in fields(ChannelConfig)}
            merged.update(kwargs)
            merged["loss_prob"] = float(merged["loss_prob"])
            merged["link_rate_bytes_per_us"] = float(merged["link_rate_bytes_per_us"])
            for int_key in ("prop_delay_us", "jitter_us_max", "slot_us",
                            "slot_capacity_bytes", "seed"):
                merged[int_key] = int(merged[int_key])
            # range checks here so errors carry exact field paths
            if not 0.0 <= merged["loss_prob"] <= 1.0:
                errors.append(f"channel.loss_prob: {merged['loss_prob']} outside [0, 1]")
            if merged["slot_us"] <= 0:
                errors.append("channel.slot_us: must be positive")
            if merged["slot_capacity_bytes"] <= 0:
                errors.append("channel.slot_capacity_bytes: must be positive")
            if merged["link_rate_bytes_per_us"] <= 0:
                errors.append("channel.link_rate_bytes_per_us: must be positive")
            if merged["prop_delay_us"] < 0 or merged["jitter_us_max"] < 0:
                errors.append("channel.prop_delay_us/jitter_us_max: must be >= 0")
            if not errors:
                cfg.channel = ChannelConfig(**merged)

    ws_raw = data.get("workspace")
    if ws_raw is not None:
        if not isinstance(ws_raw, dict):
            errors.append("workspace: expected object")
        else:
            ws = cfg.workspace
            for key, value in ws_raw.items():
                if key == "bounds_lo":
                    ws.bounds_lo = _vec3(value, "workspace.bounds_lo", errors)
                elif key == "bounds_hi":
                    ws.bounds_hi = _vec3(value, "workspace.bounds_hi", errors)
                elif key == "v_max":
                    if isinstance(value, bool) or not isinstance(value, (int, float)):
                        errors.append("workspace.v_max: expected number")
                    else:
                        ws.v_max = float(value)
                elif key == "obstacles":
                    if not isinstance(value, list):
                        errors.append("workspace.obstacles: expected array")
                        continue
                    boxes = []
                    for i, ob in enumerate(value):
                        if not isinstance(ob, dict) or "lo" not in ob or "hi" not in ob:
                            errors.append(
                                f"workspace.obstacles[{i}]: expected {{lo: [..], hi: [..]}}"
                            )
                            continue
                        lo = _vec3(ob["lo"], f"workspace.obstacles[{i}].lo", errors)
                        hi = _vec3(ob["hi"], f"workspace.obstacles[{i}].hi", errors)
                        try:
                            boxes.append(Box(lo, hi))
                        except ValueError as e:
                            errors.append(f"workspace.obstacles[{i}]: {e}")
                    ws.obstacles = tuple(boxes)
                else:
                    errors.append(f"workspace.{key}: unknown key")

    traj_raw = data.get("trajectory")
    if traj_raw is not None:
        if not isinstance(traj_raw, dict):
            errors.append("trajectory: expected object")
        else:
            kwargs = {}
            for key, value in traj_raw.items():
                if key == "kind":
                    try:
                        kwargs["kind"] = TrajectoryKind(value)
                    except ValueError:
                        errors.append(f"trajectory.kind: unknown kind {value!r}")
                elif key in ("center", "amplitude", "frequency", "phase", "step_from", "step_to"):
                    kwargs[key] = _vec3(value, f"trajectory.{key}", errors)
                elif key in ("duration_s", "step_at_s"):
                    if isinstance(value, bool) or not isinstance(value, (int, float)):
                        errors.append(f"trajectory.{key}: expected number")
                    else:
                        kwargs[key] = float(value)
                elif key == "waypoints":
                    try:
                        kwargs["waypoints"] = tuple(
                            (float(t), Vec3(*[float(c) for c in p])) for t, p in value
                        )
                    except Exception:
                        errors.append("trajectory.waypoints: expected [[t, [x,y,z]], ...]")
                else:
                    errors.append(f"trajectory.{key}: unknown key")
            try:
                cfg.trajectory = TrajectorySpec(**kwargs)
            except Exception as e:
                errors.append(f"trajectory: {e}")

    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: str | Path) -> SessionConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError([f"config: file not found: {path}"]) from None
    except json.JSONDecodeError as e:
        raise ConfigError([f"config: invalid JSON: {e}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["config: top level must be an object"])
    return config_from_dict(data)


_DURATION_RE = re.compile(r"^(\d+(?:\.\d+)?)(us|ms|s)?$")


def parse_duration(value) -> int:
    """'10s', '500ms', '250us', or a bare integer of microseconds."""
    if isinstance(value, bool):
        raise ValueError("expected duration")
    if isinstance(value, (int, float)):
        if value < 0:
            raise ValueError("duration must be non-negative")
        return int(value)
    m = _DURATION_RE.match(str(value).strip())
    if not m:
        raise ValueError(f"cannot parse duration {value!r}")
    num, unit = float(m.group(1)), m.group(2) or "us"
    scale = {"us": 1, "ms": 1_000, "s": 1_000_000}[unit]
    return int(num * scale)
