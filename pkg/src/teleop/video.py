"""Tile video pipeline: split, classify, budget, encode, schedule decode.

Frames are 8-bit grayscale. The codec is a deterministic toy: quantize by a
right shift of q in {0..3} and optionally 2x downsample, giving 8 modes with
exactly computable size and distortion. That keeps the rate-distortion
search honest (more trial budget => more modes explored) without dragging in
a real codec.

Time is modeled in cost units, 1 cost unit = 1 microsecond. One encode trial
of a tile costs its pixel count; decoding costs the encoded pixel count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .wire import Timestamp, Vec3

MODE_ORDER: tuple[tuple[int, int], ...] = (
    (0, 1),
    (1, 1),
    (2, 1),
    (3, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
)
MAX_TRIALS = len(MODE_ORDER)


class VideoConfigError(Exception):
    pass


@dataclass(frozen=True)
class EncodeMode:
    quant_shift: int  # q in {0,1,2,3}
    downsample: int  # d in {1,2}

    def __post_init__(self):
        if self.quant_shift not in (0, 1, 2, 3) or self.downsample not in (1, 2):
            raise VideoConfigError(f"invalid mode {self}")

    @property
    def lossless(self) -> bool:
        return self.quant_shift == 0 and self.downsample == 1


@dataclass(eq=False)
class Frame:
    frame_id: int
    width: int
    height: int
    pixels: np.ndarray  # uint8, shape (height, width), row-major
    capture_ts: Timestamp = 0


@dataclass(eq=False)
class TileUnit:
    frame_id: int
    tile_index: int
    rect: tuple[int, int, int, int]  # x, y, w, h
    pixels: np.ndarray
    importance: float = 1.0
    is_roi: bool = False

    @property
    def trial_cost(self) -> int:
        _, _, w, h = self.rect
        return w * h


@dataclass(eq=False)
class EncodedTile:
    frame_id: int
    tile_index: int
    rect: tuple[int, int, int, int]
    mode: EncodeMode
    data: bytes
    size_bytes: int
    mse: float
    is_roi: bool
    encode_done_ts: Timestamp = 0

    @property
    def decode_cost(self) -> int:
        _, _, w, h = self.rect
        d = self.mode.downsample
        return math.ceil(w / d) * math.ceil(h / d)


@dataclass
class BudgetPlan:
    """Per-tile trial/byte budgets plus worker assignment and service order."""

    trial_budget_units: list[int]  # b_i, cost units, whole trials
    trials: list[int]  # b_i / trial_cost_i
    byte_budget: list[int]  # R_i
    worker: list[int]  # w_i
    worker_order: list[list[int]]  # tile indices in per-worker service order
    per_worker_budget: int


def mode_size_bytes(w: int, h: int, mode: EncodeMode) -> int:
    d, q = mode.downsample, mode.quant_shift
    n = math.ceil(w / d) * math.ceil(h / d)
    return math.ceil(n * (8 - q) / 8)


# --- frame tiling ----------------------------------------------------------


def tile_frame(frame: Frame, grid_cols: int, grid_rows: int) -> list[TileUnit]:
    if grid_cols < 1 or grid_rows < 1:
        raise VideoConfigError("grid must be at least 1x1")
    if frame.width % grid_cols or frame.height % grid_rows:
        raise VideoConfigError(
            f"frame {frame.width}x{frame.height} not divisible by grid {grid_cols}x{grid_rows}"
        )
    tw = frame.width // grid_cols
    th = frame.height // grid_rows
    tiles = []
    for row in range(grid_rows):
        for col in range(grid_cols):
            x, y = col * tw, row * th
            tiles.append(
                TileUnit(
                    frame_id=frame.frame_id,
                    tile_index=row * grid_cols + col,
                    rect=(x, y, tw, th),
                    pixels=frame.pixels[y : y + th, x : x + tw],
                )
            )
    return tiles


def reassemble(tiles: list[TileUnit], width: int, height: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=np.uint8)
    for t in tiles:
        x, y, w, h = t.rect
        out[y : y + h, x : x + w] = t.pixels
    return out


# --- ROI classification ----------------------------------------------------


def classify_roi(
    tiles: list[TileUnit],
    tip_pixel: tuple[int, int],
    grid_cols: int,
    grid_rows: int,
    roi_radius: int = 0,
    roi_weight: float = 4.0,
) -> list[TileUnit]:
    """Tiles within Chebyshev distance roi_radius of the tip tile become ROI."""
    if not tiles:
        return []
    _, _, tw, th = tiles[0].rect
    u, v = tip_pixel
    tip_col = min(max(u // tw, 0), grid_cols - 1)
    tip_row = min(max(v // th, 0), grid_rows - 1)
    out = []
    for t in tiles:
        col = t.tile_index % grid_cols
        row = t.tile_index // grid_cols
        cheb = max(abs(col - tip_col), abs(row - tip_row))
        if cheb <= roi_radius:
            out.append(replace(t, importance=roi_weight, is_roi=True))
        else:
            out.append(replace(t, importance=1.0, is_roi=False))
    return out


# --- budget allocation -----------------------------------------------------


def allocate_budgets(
    tiles: list[TileUnit], n_workers: int, per_worker_budget: int, total_bytes: int
) -> BudgetPlan:
    """Trial budgets proportional to importance, LPT worker assignment.

    b_i = floor(n_workers * T * imp_i / sum(imp)), capped at 8 trials, floored
    to whole trials, at least 1 trial. Raises when any tile cannot afford one
    trial or the LPT packing overflows a worker's budget.
    """
    if n_workers < 1:
        raise VideoConfigError("need at least one worker")
    if not tiles:
        return BudgetPlan([], [], [], [], [[] for _ in range(n_workers)], per_worker_budget)
    max_cost = max(t.trial_cost for t in tiles)
    if per_worker_budget < max_cost:
        raise VideoConfigError(
            f"per-worker budget {per_worker_budget} below one trial of the largest tile ({max_cost})"
        )
    total_importance = sum(t.importance for t in tiles)
    budgets: list[int] = []
    trials: list[int] = []
    byte_budget: list[int] = []
    for t in tiles:
        tc = t.trial_cost
        b = math.floor(n_workers * per_worker_budget * t.importance / total_importance)
        b = min(b, MAX_TRIALS * tc)
        k = max(b // tc, 1)
        budgets.append(k * tc)
        trials.append(k)
        byte_budget.append(math.floor(total_bytes * t.importance / total_importance))

    # longest-processing-time-first bin packing, ties by tile index / worker id
    order = sorted(range(len(tiles)), key=lambda i: (-budgets[i], tiles[i].tile_index))
    loads = [0] * n_workers
    worker = [0] * len(tiles)
    worker_order: list[list[int]] = [[] for _ in range(n_workers)]
    for i in order:
        w = min(range(n_workers), key=lambda k: (loads[k], k))
        worker[i] = w
        loads[w] += budgets[i]
        worker_order[w].append(i)
    if max(loads) > per_worker_budget:
        raise VideoConfigError(
            f"infeasible per-worker budget: makespan {max(loads)} > {per_worker_budget}"
        )
    return BudgetPlan(budgets, trials, byte_budget, worker, worker_order, per_worker_budget)


# --- codec -----------------------------------------------------------------

# stored (shifted) value -> reconstructed value, per quant shift
_DEQUANT_LUT = np.empty((4, 256), dtype=np.uint8)
for _q in range(4):
    _v = np.arange(256, dtype=np.int64)
    _s = (_v << _q) & 0xFF
    if _q > 0:
        _s = _s + (1 << (_q - 1))
    _DEQUANT_LUT[_q] = np.minimum(_s, 255).astype(np.uint8)


def _downsample2(pixels: np.ndarray) -> np.ndarray:
    """2x2 block floor-means; odd edges are replicated before averaging."""
    h, w = pixels.shape
    if h % 2 or w % 2:
        pixels = np.pad(pixels, ((0, h % 2), (0, w % 2)), mode="edge")
        h, w = pixels.shape
    p = pixels.astype(np.uint16)
    s = p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2]
    return (s >> 2).astype(np.uint8)


def _upsample2(small: np.ndarray, w: int, h: int) -> np.ndarray:
    return np.repeat(np.repeat(small, 2, axis=0), 2, axis=1)[:h, :w]


def _pack_values(values: np.ndarray, bits: int) -> bytes:
    """Pack uint8 values at `bits` bits each, MSB-first, zero-padded to bytes."""
    if bits == 8:
        return values.tobytes()
    unpacked = np.unpackbits(values.reshape(-1, 1), axis=1)[:, 8 - bits :]
    return np.packbits(unpacked.ravel()).tobytes()


def _unpack_values(data: bytes, bits: int, count: int) -> np.ndarray:
    if bits == 8:
        return np.frombuffer(data, dtype=np.uint8)[:count].copy()
    raw = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if raw.size < count * bits:
        raise VideoConfigError("pixel data shorter than header implies")
    raw = raw[: count * bits].reshape(count, bits)
    padded = np.concatenate([np.zeros((count, 8 - bits), dtype=np.uint8), raw], axis=1)
    return np.packbits(padded, axis=1).ravel()


def _mode_mse(pixels: np.ndarray, mode: EncodeMode) -> float:
    """Distortion of one mode against the original tile, no bitstream built."""
    if mode.lossless:
        return 0.0
    h, w = pixels.shape
    src = _downsample2(pixels) if mode.downsample == 2 else pixels
    recon = _DEQUANT_LUT[mode.quant_shift][src >> mode.quant_shift]
    if mode.downsample == 2:
        recon = _upsample2(recon, w, h)
    diff = (pixels.astype(np.int64) - recon).ravel()
    return int(np.dot(diff, diff)) / diff.size


def encode_tile_mode(pixels: np.ndarray, mode: EncodeMode) -> tuple[bytes, int, float]:
    """Encode with one mode; returns (data, size_bytes, mse vs original)."""
    src = _downsample2(pixels) if mode.downsample == 2 else pixels
    stored = src >> mode.quant_shift
    data = _pack_values(stored.ravel(), 8 - mode.quant_shift)
    return data, len(data), _mode_mse(pixels, mode)


def decode_tile_pixels(data: bytes, w: int, h: int, mode: EncodeMode) -> np.ndarray:
    """Inverse of encode_tile_mode's data path; output shape (h, w)."""
    d, q = mode.downsample, mode.quant_shift
    sw, sh = math.ceil(w / d), math.ceil(h / d)
    stored = _unpack_values(data, 8 - q, sw * sh).reshape(sh, sw)
    recon = _DEQUANT_LUT[q][stored]
    if d == 2:
        recon = _upsample2(recon, w, h)
    return recon


def encode_tile(tile: TileUnit, n_trials: int, byte_budget: int) -> EncodedTile:
    """Try modes in fixed order within the trial budget, pick best fit.

    Among tried modes with size <= byte_budget: minimum mse, ties to smaller
    size then earlier mode. If none fits, the smallest-size tried mode. Only
    the winning mode's bitstream is materialized.
    """
    if n_trials < 1:
        raise VideoConfigError("at least one trial required")
    n_trials = min(n_trials, MAX_TRIALS)
    _, _, w, h = tile.rect
    tried: list[tuple[int, EncodeMode, int, float]] = []
    for k in range(n_trials):
        mode = EncodeMode(*MODE_ORDER[k])
        tried.append((k, mode, mode_size_bytes(w, h, mode), _mode_mse(tile.pixels, mode)))

    fitting = [t for t in tried if t[2] <= byte_budget]
    if fitting:
        _, mode, size, mse = min(fitting, key=lambda t: (t[3], t[2], t[0]))
    else:
        _, mode, size, mse = min(tried, key=lambda t: (t[2], t[0]))
    src = _downsample2(tile.pixels) if mode.downsample == 2 else tile.pixels
    data = _pack_values((src >> mode.quant_shift).ravel(), 8 - mode.quant_shift)
    return EncodedTile(
        frame_id=tile.frame_id,
        tile_index=tile.tile_index,
        rect=tile.rect,
        mode=mode,
        data=data,
        size_bytes=size,
        mse=mse,
        is_roi=tile.is_roi,
    )


def encode_frame(
    tiles: list[TileUnit],
    plan: BudgetPlan,
    capture_ts: Timestamp,
    cache: dict | None = None,
) -> list[EncodedTile]:
    """Encode all tiles under the plan's worker timing model.

    Each worker serves its tiles in assignment order; a tile's completion
    timestamp is capture_ts plus the worker's accumulated trial cost. An
    optional cache memoizes (pixel content, trials, budget) across frames;
    results are identical because encode_tile is pure.
    """
    by_index: dict[int, EncodedTile] = {}
    for w, order in enumerate(plan.worker_order):
        t_done = capture_ts
        for i in order:
            tile = tiles[i]
            key = None
            enc = None
            if cache is not None:
                key = (tile.pixels.tobytes(), plan.trials[i], plan.byte_budget[i])
                hit = cache.get(key)
                if hit is not None:
                    mode, data, size, mse = hit
                    enc = EncodedTile(
                        frame_id=tile.frame_id,
                        tile_index=tile.tile_index,
                        rect=tile.rect,
                        mode=mode,
                        data=data,
                        size_bytes=size,
                        mse=mse,
                        is_roi=tile.is_roi,
                    )
            if enc is None:
                enc = encode_tile(tile, plan.trials[i], plan.byte_budget[i])
                if cache is not None:
                    if len(cache) > 4096:
                        cache.clear()
                    cache[key] = (enc.mode, enc.data, enc.size_bytes, enc.mse)
            t_done += plan.trial_budget_units[i]
            enc.encode_done_ts = t_done
            by_index[tile.tile_index] = enc
    return [by_index[t.tile_index] for t in tiles]


# --- decode scheduling -----------------------------------------------------


@dataclass(frozen=True)
class DecodeSlot:
    tile_index: int
    decoder: int
    start_ts: Timestamp
    done_ts: Timestamp


def decode_schedule(
    tiles: list[EncodedTile], n_decoders: int, start_ts: Timestamp = 0
) -> list[DecodeSlot]:
    """Batch plan: ROI first then index order, greedy earliest-free decoder."""
    if n_decoders < 1:
        raise VideoConfigError("need at least one decoder")
    order = sorted(tiles, key=lambda t: (not t.is_roi, t.tile_index))
    free_at = [start_ts] * n_decoders
    slots = []
    for t in order:
        d = min(range(n_decoders), key=lambda k: (free_at[k], k))
        start = free_at[d]
        done = start + t.decode_cost
        free_at[d] = done
        slots.append(DecodeSlot(t.tile_index, d, start, done))
    return slots


# --- tip projection --------------------------------------------------------


def project_tip(
    tip: Vec3, bounds_lo: Vec3, bounds_hi: Vec3, width: int, height: int
) -> tuple[int, int]:
    """Orthographic top-down map to pixel coordinates, round half up, clamped."""

    def axis(value: float, lo: float, hi: float, n: int) -> int:
        frac = (value - lo) / (hi - lo)
        px = math.floor(frac * (n - 1) + 0.5)
        return min(max(px, 0), n - 1)

    return (
        axis(tip.x, bounds_lo.x, bounds_hi.x, width),
        axis(tip.y, bounds_lo.y, bounds_hi.y, height),
    )


# --- PGM frame dumps -------------------------------------------------------


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(pixels.astype(np.uint8).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise VideoConfigError("not a P5 PGM file")
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise VideoConfigError("malformed PGM header")
    w, h = (int(tok) for tok in parts[1].split())
    if parts[2] != b"255":
        raise VideoConfigError("only maxval 255 supported")
    data = parts[3][: w * h]
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()
