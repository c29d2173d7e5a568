"""Haptic stream coding and force feedback.

The command stream is thinned with a Weber-fraction deadband: a sample is
transmitted only when the tip has moved perceptibly since the last
transmitted sample. The receiving side reconstructs with a zero-order hold
and newest-wins semantics (no retransmission). Contact force is a penalty
spring against the nearest face of the deepest-penetrated obstacle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .wire import Box, Timestamp, Vec3

DEFAULT_WEBER_K = 0.1
DEFAULT_FLOOR_M = 1e-4
DEFAULT_SPRING_N_PER_M = 300.0
DEFAULT_F_MAX_N = 20.0


class HapticError(Exception):
    pass


class NonFiniteSampleError(HapticError):
    pass


class NoDataError(HapticError):
    """Reconstruction queried before any sample arrived."""


@dataclass(frozen=True)
class HapticSample:
    ts: Timestamp
    position: Vec3
    force: Vec3 = Vec3()


@dataclass(frozen=True)
class DeadbandState:
    """Immutable encoder state; threading is (sample, state) -> (out, state)."""

    last_sent: Vec3 | None = None
    weber_k: float = DEFAULT_WEBER_K
    floor: float = DEFAULT_FLOOR_M

    def __post_init__(self):
        if self.weber_k < 0:
            raise ValueError("weber_k must be >= 0")
        if self.floor <= 0:
            raise ValueError("floor must be > 0")


def deadband_threshold(st: DeadbandState) -> float:
    """Current emission threshold in meters (undefined before first sample)."""
    if st.last_sent is None:
        return 0.0
    return max(st.weber_k * st.last_sent.norm(), st.floor)


def deadband_encode(
    s: HapticSample, st: DeadbandState
) -> tuple[HapticSample | None, DeadbandState]:
    """Emit iff first sample or movement since last emission exceeds threshold."""
    p = s.position
    f = s.force
    if not (
        math.isfinite(p.x) and math.isfinite(p.y) and math.isfinite(p.z)
        and math.isfinite(f.x) and math.isfinite(f.y) and math.isfinite(f.z)
    ):
        raise NonFiniteSampleError(f"non-finite sample at ts={s.ts}")
    last = st.last_sent
    if last is None:
        return s, replace(st, last_sent=p)
    dx, dy, dz = p.x - last.x, p.y - last.y, p.z - last.z
    delta = math.sqrt(dx * dx + dy * dy + dz * dz)
    threshold = st.weber_k * math.sqrt(last.x * last.x + last.y * last.y + last.z * last.z)
    if threshold < st.floor:
        threshold = st.floor
    if delta > threshold:
        return s, replace(st, last_sent=p)
    return None, st


@dataclass
class ZohReconstructor:
    """Zero-order-hold over received samples, stale arrivals ignored.

    ``add`` is called in arrival order with the per-class wire seq; a sample
    whose seq is below the newest already applied is dropped. ``query`` holds
    the latest accepted sample with arrival ts <= query ts.
    """

    _arrivals: list[tuple[Timestamp, int, HapticSample]] = field(default_factory=list)
    _newest_seq: int = -1

    def add(self, sample: HapticSample, arrival_ts: Timestamp, seq: int) -> bool:
        """Returns True when the sample was accepted (not stale)."""
        if seq <= self._newest_seq:
            return False
        self._newest_seq = seq
        self._arrivals.append((arrival_ts, seq, sample))
        return True

    def query(self, ts: Timestamp) -> Vec3:
        latest = None
        for arrival_ts, _seq, sample in self._arrivals:
            if arrival_ts <= ts:
                latest = sample
            else:
                break
        if latest is None:
            raise NoDataError(f"no sample at or before ts={ts}")
        return latest.position

    def latest(self) -> HapticSample | None:
        return self._arrivals[-1][2] if self._arrivals else None


# Face order fixes tie-breaking: x faces first, then y, then z.
_FACES = (
    ("x", "lo", Vec3(-1, 0, 0)),
    ("x", "hi", Vec3(1, 0, 0)),
    ("y", "lo", Vec3(0, -1, 0)),
    ("y", "hi", Vec3(0, 1, 0)),
    ("z", "lo", Vec3(0, 0, -1)),
    ("z", "hi", Vec3(0, 0, 1)),
)


def _nearest_face(box: Box, p: Vec3) -> tuple[float, Vec3]:
    """(distance, outward normal) of the box face nearest to interior point p."""
    best_d = None
    best_n = None
    for axis, side, normal in _FACES:
        c = getattr(p, axis)
        bound = getattr(box.lo if side == "lo" else box.hi, axis)
        d = c - bound if side == "lo" else bound - c
        if best_d is None or d < best_d:
            best_d = d
            best_n = normal
    return best_d, best_n


def collision_force(
    commanded: Vec3,
    obstacles: list[Box],
    k_s: float = DEFAULT_SPRING_N_PER_M,
    f_max: float = DEFAULT_F_MAX_N,
) -> Vec3:
    """Penalty force pushing the commanded point out of the deepest obstacle.

    Zero exactly on or outside every boundary. Magnitude min(k_s * d, f_max)
    along the outward normal of the nearest face, d = distance to that face;
    the deepest-penetrated obstacle wins, face ties break in x, y, z order.
    """
    best = None  # (depth, normal)
    for box in obstacles:
        if not box.contains_strict(commanded):
            continue
        d, normal = _nearest_face(box, commanded)
        if best is None or d > best[0]:
            best = (d, normal)
    if best is None:
        return Vec3()
    depth, normal = best
    return normal.scale(min(k_s * depth, f_max))
