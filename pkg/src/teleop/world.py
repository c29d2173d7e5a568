"""Simulated teleoperator side: slave tip kinematics, obstacles, camera.

The slave is a rate-limited point that chases the newest commanded position
and stops on obstacle surfaces instead of passing through. The synthetic
camera renders a deterministic top-down view of the workspace so the ROI
pipeline has real pixels to chew on without any optics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .haptic import HapticSample
from .video import Frame, project_tip
from .wire import Box, Timestamp, Vec3

logger = logging.getLogger(__name__)

BACKGROUND_LEVEL = 32
OBSTACLE_LEVEL = 128
TIP_LEVEL = 255


class WorldError(Exception):
    pass


@dataclass(frozen=True)
class Workspace:
    bounds: Box = Box(Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5))
    obstacles: tuple[Box, ...] = ()
    v_max: float = 1.0  # m/s slave tip speed limit
    tick_us: int = 1000

    def __post_init__(self):
        if self.v_max <= 0:
            raise WorldError("v_max must be positive")
        if self.tick_us <= 0:
            raise WorldError("tick_us must be positive")
        for ob in self.obstacles:
            if not (self.bounds.contains(ob.lo) and self.bounds.contains(ob.hi)):
                raise WorldError(f"obstacle {ob} extends outside workspace bounds")


@dataclass(frozen=True)
class ArmState:
    tip: Vec3
    last_command: Vec3
    in_contact: bool = False
    command_clamped: bool = False


def _segment_box_entry(p0: Vec3, p1: Vec3, box: Box) -> tuple[float, int] | None:
    """Earliest t in [0,1] where the segment enters the strict interior.

    Returns (t, axis-of-entry-face) or None. Touching a face without crossing
    into the interior does not count as entry.
    """
    d = (p1.x - p0.x, p1.y - p0.y, p1.z - p0.z)
    lo = (box.lo.x, box.lo.y, box.lo.z)
    hi = (box.hi.x, box.hi.y, box.hi.z)
    start = (p0.x, p0.y, p0.z)
    t_min, t_max = -math.inf, math.inf
    axis_min = 0
    for a in range(3):
        if d[a] == 0.0:
            if not (lo[a] <= start[a] <= hi[a]):
                return None
            # strict interior along this axis is impossible if riding a face
            if start[a] == lo[a] or start[a] == hi[a]:
                return None
            continue
        t0 = (lo[a] - start[a]) / d[a]
        t1 = (hi[a] - start[a]) / d[a]
        if t0 > t1:
            t0, t1 = t1, t0
        if t0 > t_min:
            t_min = t0
            axis_min = a
        t_max = min(t_max, t1)
    entry = max(t_min, 0.0)
    exit_ = min(t_max, 1.0)
    if exit_ <= entry:
        return None
    return entry, axis_min


def _snap_to_face(p: Vec3, box: Box, axis: int, direction: float) -> Vec3:
    coords = [p.x, p.y, p.z]
    face = (box.lo, box.hi)[direction < 0]
    coords[axis] = (face.x, face.y, face.z)[axis]
    return Vec3(*coords)


def step_slave(state: ArmState, commanded: Vec3, ws: Workspace, dt_us: int) -> ArmState:
    """Advance one tick toward commanded, stopping on obstacle surfaces."""
    if dt_us <= 0:
        raise WorldError("dt_us must be positive")
    lo, hi = ws.bounds.lo, ws.bounds.hi
    cx = lo.x if commanded.x < lo.x else (hi.x if commanded.x > hi.x else commanded.x)
    cy = lo.y if commanded.y < lo.y else (hi.y if commanded.y > hi.y else commanded.y)
    cz = lo.z if commanded.z < lo.z else (hi.z if commanded.z > hi.z else commanded.z)
    was_clamped = cx != commanded.x or cy != commanded.y or cz != commanded.z
    clamped = Vec3(cx, cy, cz) if was_clamped else commanded
    tip = state.tip
    dx, dy, dz = clamped.x - tip.x, clamped.y - tip.y, clamped.z - tip.z
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dist == 0.0:
        in_contact = state.in_contact
        if in_contact and not any(ob.contains(clamped) for ob in ws.obstacles):
            in_contact = False
        return ArmState(tip, commanded, in_contact, was_clamped)
    max_move = ws.v_max * dt_us * 1e-6
    target = clamped if dist <= max_move else tip + Vec3(dx, dy, dz).scale(max_move / dist)

    if not ws.obstacles:
        return ArmState(target, commanded, False, was_clamped)
    hit = None  # (t, axis, box)
    for box in ws.obstacles:
        res = _segment_box_entry(tip, target, box)
        if res is not None and (hit is None or res[0] < hit[0]):
            hit = (res[0], res[1], box)
    if hit is None:
        return ArmState(target, commanded, False, was_clamped)

    t, axis, box = hit
    stop = tip + (target - tip).scale(t)
    step_dir = (target.x - tip.x, target.y - tip.y, target.z - tip.z)[axis]
    stop = _snap_to_face(stop, box, axis, step_dir)
    # overlapping obstacles: resolve residual interior containment exactly
    for _ in range(len(ws.obstacles)):
        inside = next((ob for ob in ws.obstacles if ob.contains_strict(stop)), None)
        if inside is None:
            break
        stop = _nearest_face_projection(stop, inside)
    return ArmState(stop, commanded, True, was_clamped)


def _nearest_face_projection(p: Vec3, box: Box) -> Vec3:
    candidates = [
        Vec3(box.lo.x, p.y, p.z),
        Vec3(box.hi.x, p.y, p.z),
        Vec3(p.x, box.lo.y, p.z),
        Vec3(p.x, box.hi.y, p.z),
        Vec3(p.x, p.y, box.lo.z),
        Vec3(p.x, p.y, box.hi.z),
    ]
    return min(candidates, key=lambda c: (c - p).norm())


# --- synthetic camera ------------------------------------------------------


def render_camera(ws: Workspace, arm: ArmState, width: int, height: int) -> Frame:
    """Deterministic top-down raster: background, obstacles, then the tip."""
    px = np.full((height, width), BACKGROUND_LEVEL, dtype=np.uint8)
    lo, hi = ws.bounds.lo, ws.bounds.hi
    for ob in ws.obstacles:
        u0, v0 = project_tip(Vec3(ob.lo.x, ob.lo.y, 0), lo, hi, width, height)
        u1, v1 = project_tip(Vec3(ob.hi.x, ob.hi.y, 0), lo, hi, width, height)
        px[v0 : v1 + 1, u0 : u1 + 1] = OBSTACLE_LEVEL
    u, v = project_tip(arm.tip, lo, hi, width, height)
    px[max(v - 1, 0) : v + 2, max(u - 1, 0) : u + 2] = TIP_LEVEL
    return Frame(frame_id=0, width=width, height=height, pixels=px)


# --- trajectories ----------------------------------------------------------


class TrajectoryKind(str, Enum):
    SINUSOID = "sinusoid"
    STEP = "step"
    LISSAJOUS = "lissajous"
    SCRIPTED = "scripted"


@dataclass(frozen=True)
class TrajectorySpec:
    kind: TrajectoryKind = TrajectoryKind.SINUSOID
    center: Vec3 = Vec3()
    amplitude: Vec3 = Vec3(0.2, 0.15, 0.0)
    frequency: Vec3 = Vec3(0.4, 0.25, 0.0)  # Hz per axis
    phase: Vec3 = Vec3()  # radians per axis
    duration_s: float = 10.0
    # step kind
    step_at_s: float = 1.0
    step_from: Vec3 = Vec3()
    step_to: Vec3 = Vec3(0.2, 0.0, 0.0)
    # scripted kind: (time_s, position) waypoints, time ascending
    waypoints: tuple[tuple[float, Vec3], ...] = ()


def gen_trajectory(spec: TrajectorySpec, t_s: float) -> Vec3:
    t = min(max(t_s, 0.0), spec.duration_s)
    if spec.kind in (TrajectoryKind.SINUSOID, TrajectoryKind.LISSAJOUS):
        two_pi = 2 * math.pi
        a, f, ph, c = spec.amplitude, spec.frequency, spec.phase, spec.center
        return Vec3(
            c.x + a.x * math.sin(two_pi * f.x * t + ph.x) if a.x else c.x,
            c.y + a.y * math.sin(two_pi * f.y * t + ph.y) if a.y else c.y,
            c.z + a.z * math.sin(two_pi * f.z * t + ph.z) if a.z else c.z,
        )
    if spec.kind is TrajectoryKind.STEP:
        return spec.step_from if t < spec.step_at_s else spec.step_to
    if spec.kind is TrajectoryKind.SCRIPTED:
        if not spec.waypoints:
            raise WorldError("scripted trajectory needs waypoints")
        pts = spec.waypoints
        if t <= pts[0][0]:
            return pts[0][1]
        for (t0, p0), (t1, p1) in zip(pts, pts[1:]):
            if t <= t1:
                if t1 == t0:
                    return p1
                alpha = (t - t0) / (t1 - t0)
                return p0 + (p1 - p0).scale(alpha)
        return pts[-1][1]
    raise WorldError(f"unknown trajectory kind {spec.kind}")


class MasterMode(str, Enum):
    SCRIPTED = "scripted"
    LIVE = "live"


class MasterSource:
    """Per-tick command source: scripted trajectory or live console input.

    Live samples hold the last console command (zero-order) between updates;
    before the first command the workspace center is held and a single
    warning is logged.
    """

    def __init__(
        self,
        mode: MasterMode,
        trajectory: TrajectorySpec | None = None,
        workspace: Workspace | None = None,
    ):
        self.mode = mode
        self.trajectory = trajectory
        self.default = (workspace.bounds.center if workspace else Vec3())
        self._live_value: Vec3 | None = None
        self._warned = False
        if mode is MasterMode.SCRIPTED and trajectory is None:
            raise WorldError("scripted master needs a trajectory")

    def set_live_command(self, v: Vec3) -> None:
        self._live_value = v

    def sample(self, ts_us: Timestamp) -> HapticSample:
        if self.mode is MasterMode.SCRIPTED:
            return HapticSample(ts=ts_us, position=gen_trajectory(self.trajectory, ts_us * 1e-6))
        if self._live_value is None:
            if not self._warned:
                logger.warning("live master has no console input yet; holding workspace center")
                self._warned = True
            return HapticSample(ts=ts_us, position=self.default)
        return HapticSample(ts=ts_us, position=self._live_value)
