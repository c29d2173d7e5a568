"""Shared domain types and the bit-exact wire codec.

Every datagram crossing the link is a ``MuxPacket`` serialized as:

    magic 0x54 0x4C (2B) | version 0x01 (1B) | class (1B) | flags (1B)
    | seq (4B) | send_ts_us (8B) | payload_len (2B) | payload

All integers big-endian; header is 19 bytes. ``send_ts_us`` carries the
origin (capture) timestamp of the unit so the receiving side can complete
its latency record without a side channel.

Payload layouts:

    haptic:  subtype (1B: 0=command, 1=state+force) | position x,y,z f64 (24B)
             | force x,y,z f64 (24B, subtype 1 only)
    video:   frame_id (4B) | tile_index (2B) | grid_cols (1B) | grid_rows (1B)
             | mode (1B: low nibble quant shift, bit 4 = downsample) | roi (1B)
             | tile_w (2B) | tile_h (2B) | packed pixel bits
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import IntEnum

Timestamp = int  # integer microseconds since session epoch

MAGIC = b"TL"
VERSION = 1
HEADER_LEN = 19
MAX_PAYLOAD = 65535

_HEADER = struct.Struct(">2sBBBIQH")


class StreamClass(IntEnum):
    """Wire-stable class codes; lower code = higher scheduling priority."""

    CONTROL = 0
    HAPTIC = 1
    VIDEO = 2
    METRICS = 3
    AUDIO_RESERVED = 4  # reserved code, never produced


class WireError(Exception):
    """Base for all codec errors."""


class EncodeError(WireError):
    pass


class DecodeError(WireError):
    """Base for parse failures."""


class BadMagicError(DecodeError):
    pass


class BadVersionError(DecodeError):
    pass


class TruncatedError(DecodeError):
    pass


class LengthMismatchError(DecodeError):
    pass


class FieldError(DecodeError):
    """A header or payload field holds an invalid value."""


@dataclass(frozen=True)
class Vec3:
    """3-D vector; meters for positions, newtons for forces."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __add__(self, o: "Vec3") -> "Vec3":
        return Vec3(self.x + o.x, self.y + o.y, self.z + o.z)

    def __sub__(self, o: "Vec3") -> "Vec3":
        return Vec3(self.x - o.x, self.y - o.y, self.z - o.z)

    def scale(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with positive extent on every axis."""

    lo: Vec3
    hi: Vec3

    def __post_init__(self):
        if not (self.lo.x < self.hi.x and self.lo.y < self.hi.y and self.lo.z < self.hi.z):
            raise ValueError("box must have positive extent on every axis")

    def contains_strict(self, p: Vec3) -> bool:
        return (
            self.lo.x < p.x < self.hi.x
            and self.lo.y < p.y < self.hi.y
            and self.lo.z < p.z < self.hi.z
        )

    def contains(self, p: Vec3) -> bool:
        return (
            self.lo.x <= p.x <= self.hi.x
            and self.lo.y <= p.y <= self.hi.y
            and self.lo.z <= p.z <= self.hi.z
        )

    def clamp(self, p: Vec3) -> Vec3:
        return Vec3(
            min(max(p.x, self.lo.x), self.hi.x),
            min(max(p.y, self.lo.y), self.hi.y),
            min(max(p.z, self.lo.z), self.hi.z),
        )

    @property
    def center(self) -> Vec3:
        return Vec3(
            (self.lo.x + self.hi.x) / 2,
            (self.lo.y + self.hi.y) / 2,
            (self.lo.z + self.hi.z) / 2,
        )


@dataclass(frozen=True)
class MuxPacket:
    """Class-tagged, per-class sequence-numbered unit crossing the link."""

    stream_class: StreamClass
    seq: int
    send_ts: Timestamp
    payload: bytes = b""

    @property
    def wire_size(self) -> int:
        return HEADER_LEN + len(self.payload)


def encode_packet(p: MuxPacket, flags: int = 0) -> bytes:
    if len(p.payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload {len(p.payload)} exceeds {MAX_PAYLOAD} bytes")
    if not 0 <= p.seq < 2**32:
        raise EncodeError(f"seq {p.seq} out of 32-bit range")
    if not 0 <= p.send_ts < 2**64:
        raise EncodeError(f"send_ts {p.send_ts} out of 64-bit range")
    header = _HEADER.pack(
        MAGIC, VERSION, int(p.stream_class), flags & 0xFF, p.seq, p.send_ts, len(p.payload)
    )
    return header + p.payload


def decode_packet(b: bytes) -> MuxPacket:
    if len(b) < HEADER_LEN:
        raise TruncatedError(f"buffer is {len(b)} bytes, header needs {HEADER_LEN}")
    magic, version, class_code, _flags, seq, send_ts, payload_len = _HEADER.unpack_from(b)
    if magic != MAGIC:
        raise BadMagicError(f"magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"version {version}")
    try:
        stream_class = StreamClass(class_code)
    except ValueError:
        raise FieldError(f"unknown stream class {class_code}") from None
    if len(b) < HEADER_LEN + payload_len:
        raise TruncatedError(
            f"payload truncated: header says {payload_len}, got {len(b) - HEADER_LEN}"
        )
    if len(b) != HEADER_LEN + payload_len:
        raise LengthMismatchError(
            f"trailing bytes: header says {payload_len}, buffer has {len(b) - HEADER_LEN}"
        )
    return MuxPacket(stream_class, seq, send_ts, bytes(b[HEADER_LEN:]))


# --- haptic payloads -------------------------------------------------------

HAPTIC_COMMAND = 0
HAPTIC_STATE = 1


def encode_haptic_payload(position: Vec3, force: Vec3 | None = None) -> bytes:
    """Command payload when force is None, state+force payload otherwise."""
    if force is None:
        return struct.pack(">Bddd", HAPTIC_COMMAND, position.x, position.y, position.z)
    return struct.pack(
        ">Bdddddd",
        HAPTIC_STATE,
        position.x,
        position.y,
        position.z,
        force.x,
        force.y,
        force.z,
    )


def decode_haptic_payload(payload: bytes) -> tuple[Vec3, Vec3 | None]:
    if len(payload) < 1:
        raise TruncatedError("empty haptic payload")
    subtype = payload[0]
    if subtype == HAPTIC_COMMAND:
        if len(payload) != 25:
            raise LengthMismatchError(f"command payload must be 25 bytes, got {len(payload)}")
        x, y, z = struct.unpack_from(">ddd", payload, 1)
        return Vec3(x, y, z), None
    if subtype == HAPTIC_STATE:
        if len(payload) != 49:
            raise LengthMismatchError(f"state payload must be 49 bytes, got {len(payload)}")
        x, y, z, fx, fy, fz = struct.unpack_from(">dddddd", payload, 1)
        return Vec3(x, y, z), Vec3(fx, fy, fz)
    raise FieldError(f"unknown haptic subtype {subtype}")


# --- video payloads --------------------------------------------------------

_VIDEO_HEAD = struct.Struct(">IHBBBBHH")
VIDEO_HEAD_LEN = _VIDEO_HEAD.size  # 14 bytes


@dataclass(frozen=True)
class VideoTileHeader:
    frame_id: int
    tile_index: int
    grid_cols: int
    grid_rows: int
    quant_shift: int
    downsample: int  # 1 or 2
    is_roi: bool
    tile_w: int
    tile_h: int


def encode_video_payload(head: VideoTileHeader, pixel_data: bytes) -> bytes:
    mode_byte = (head.quant_shift & 0x0F) | (0x10 if head.downsample == 2 else 0)
    return (
        _VIDEO_HEAD.pack(
            head.frame_id,
            head.tile_index,
            head.grid_cols,
            head.grid_rows,
            mode_byte,
            1 if head.is_roi else 0,
            head.tile_w,
            head.tile_h,
        )
        + pixel_data
    )


def decode_video_payload(payload: bytes) -> tuple[VideoTileHeader, bytes]:
    if len(payload) < VIDEO_HEAD_LEN:
        raise TruncatedError(f"video payload is {len(payload)} bytes, header needs {VIDEO_HEAD_LEN}")
    frame_id, tile_index, cols, rows, mode_byte, roi, tile_w, tile_h = _VIDEO_HEAD.unpack_from(
        payload
    )
    quant_shift = mode_byte & 0x0F
    if quant_shift > 3:
        raise FieldError(f"quant shift {quant_shift} out of range")
    head = VideoTileHeader(
        frame_id=frame_id,
        tile_index=tile_index,
        grid_cols=cols,
        grid_rows=rows,
        quant_shift=quant_shift,
        downsample=2 if mode_byte & 0x10 else 1,
        is_roi=bool(roi),
        tile_w=tile_w,
        tile_h=tile_h,
    )
    return head, bytes(payload[VIDEO_HEAD_LEN:])
