"""Latency decomposition, user-facing metrics, and the session report.

Every unit (haptic sample or video tile) accumulates per-stage timestamps in
pipeline order; end-to-end latency telescopes exactly over the stage deltas
because everything is integer microseconds on one virtual clock.

The report is a pure function of a ``SessionData`` bundle, and the bundle
can be dumped to / reloaded from a trace directory, so `replay` reproduces
the report byte-identically.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .stats import summarize
from .wire import Timestamp, Vec3

STAGES = ("capture", "encode_done", "mux_out", "phy_rx", "decode_done", "display")
_STAGE_INDEX = {s: i for i, s in enumerate(STAGES)}

# unit id prefixes; the id string is the whole unit identity in traces
UNIT_HAPTIC_CMD = "hap_cmd"
UNIT_HAPTIC_FB = "hap_fb"
UNIT_VIDEO = "vid"


class MetricsError(Exception):
    pass


class StageOrderError(MetricsError):
    """A stage was recorded out of pipeline order (fail fast in tests)."""


def video_unit_id(frame_id: int, tile_index: int, is_roi: bool) -> str:
    return f"{UNIT_VIDEO}:{frame_id}:{tile_index}:{'roi' if is_roi else 'std'}"


def unit_class(unit_id: str) -> str:
    return unit_id.split(":", 1)[0]


class LatencyCollector:
    """Funnel for stage records; one collector per session."""

    def __init__(self):
        self.records: dict[str, list[tuple[str, Timestamp]]] = {}

    def record(self, unit_id: str, stage: str, ts: Timestamp) -> None:
        if stage not in _STAGE_INDEX:
            raise MetricsError(f"unknown stage {stage!r}")
        stages = self.records.setdefault(unit_id, [])
        if stages:
            last_stage, last_ts = stages[-1]
            if _STAGE_INDEX[stage] <= _STAGE_INDEX[last_stage]:
                raise StageOrderError(
                    f"{unit_id}: stage {stage} after {last_stage} violates pipeline order"
                )
            if ts < last_ts:
                raise StageOrderError(
                    f"{unit_id}: timestamp regressed {last_ts} -> {ts} at {stage}"
                )
        stages.append((stage, ts))

    def last_stage(self, unit_id: str) -> str | None:
        stages = self.records.get(unit_id)
        return stages[-1][0] if stages else None


def stage_deltas(stages: list[tuple[str, Timestamp]]) -> dict[str, int]:
    """Named deltas between consecutive recorded stages."""
    out = {}
    for (s0, t0), (s1, t1) in zip(stages, stages[1:]):
        out[f"{s0}->{s1}"] = t1 - t0
    return out


def e2e_us(stages: list[tuple[str, Timestamp]]) -> int:
    return stages[-1][1] - stages[0][1]


def is_complete(unit_id: str, stages: list[tuple[str, Timestamp]]) -> bool:
    """A unit is complete when it reached its terminal stage."""
    terminal = "display" if unit_class(unit_id) == UNIT_VIDEO else "decode_done"
    return bool(stages) and stages[-1][0] == terminal


# --- user-centric metrics ---------------------------------------------------


def tracking_rmse(
    positions: list[tuple[Timestamp, Vec3, Vec3]], lag_ticks: int, warmup_ticks: int = 0
) -> float:
    """RMSE of slave(t) vs master(t - lag) on the common tick grid.

    ``positions`` rows are (tick_ts, master, slave), one per tick.
    """
    if lag_ticks < 0:
        raise MetricsError("lag must be non-negative")
    start = max(warmup_ticks, lag_ticks)
    if start >= len(positions):
        raise MetricsError("empty overlap window")
    acc = 0.0
    n = 0
    for i in range(start, len(positions)):
        _, _, slave = positions[i]
        _, master, _ = positions[i - lag_ticks]
        d = slave - master
        acc += d.x * d.x + d.y * d.y + d.z * d.z
        n += 1
    return math.sqrt(acc / n)


def motion_to_photon(records: dict[str, list[tuple[str, Timestamp]]]) -> list[int]:
    """display - capture for every displayed ROI tile, in record order."""
    out = []
    for unit_id, stages in records.items():
        if unit_class(unit_id) != UNIT_VIDEO or not unit_id.endswith(":roi"):
            continue
        by_stage = dict(stages)
        if "display" in by_stage and "capture" in by_stage:
            out.append(by_stage["display"] - by_stage["capture"])
    return out


def frame_complete_latency(records: dict[str, list[tuple[str, Timestamp]]]) -> dict[int, int]:
    """Per fully-displayed frame: max tile display ts minus capture ts."""
    frames: dict[int, list[tuple[bool, dict]]] = {}
    for unit_id, stages in records.items():
        if unit_class(unit_id) != UNIT_VIDEO:
            continue
        frame_id = int(unit_id.split(":")[1])
        frames.setdefault(frame_id, []).append((is_complete(unit_id, stages), dict(stages)))
    out = {}
    for frame_id, tiles in frames.items():
        if all(done for done, _ in tiles):
            out[frame_id] = max(t["display"] for _, t in tiles) - tiles[0][1]["capture"]
    return out


# --- the session data bundle ------------------------------------------------


@dataclass
class MuxTraceEvent:
    link: str  # "op" or "tel"
    stream_class: str
    enqueue_ts: Timestamp
    dequeue_ts: Timestamp


@dataclass
class SessionData:
    """Everything the report derives from; dumpable and reloadable."""

    meta: dict = field(default_factory=dict)
    records: dict[str, list[tuple[str, Timestamp]]] = field(default_factory=dict)
    positions: list[tuple[Timestamp, Vec3, Vec3]] = field(default_factory=list)
    mux_events: list[MuxTraceEvent] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)


# --- report ------------------------------------------------------------------


def _sig6(x: float) -> float:
    return float(f"{x:.6g}")


def _fmt_stats(block: dict) -> dict:
    return {k: (_sig6(v) if isinstance(v, float) else v) for k, v in block.items()}


def report_lag_ticks(data: SessionData) -> int:
    """Tracking lag: mean command end-to-end latency, rounded to whole ticks."""
    tick = data.meta.get("tick_us", 1000)
    e2es = [
        e2e_us(stages)
        for unit_id, stages in data.records.items()
        if unit_class(unit_id) == UNIT_HAPTIC_CMD and is_complete(unit_id, stages)
    ]
    if not e2es:
        return 0
    return math.floor((sum(e2es) / len(e2es)) / tick + 0.5)


def build_report(data: SessionData) -> dict:
    classes: dict[str, dict] = {}
    incomplete = 0
    for unit_id, stages in data.records.items():
        cls = unit_class(unit_id)
        bucket = classes.setdefault(cls, {"complete": 0, "incomplete": 0, "e2e": [], "deltas": {}})
        if is_complete(unit_id, stages):
            bucket["complete"] += 1
            bucket["e2e"].append(e2e_us(stages))
            for name, delta in stage_deltas(stages).items():
                bucket["deltas"].setdefault(name, []).append(delta)
        else:
            bucket["incomplete"] += 1
            incomplete += 1

    per_class = {}
    for cls, bucket in sorted(classes.items()):
        entry: dict = {"complete": bucket["complete"], "incomplete": bucket["incomplete"]}
        if bucket["e2e"]:
            entry["e2e_us"] = _fmt_stats(summarize(bucket["e2e"]))
            entry["stage_us"] = {
                name: _fmt_stats(summarize(vals)) for name, vals in sorted(bucket["deltas"].items())
            }
        per_class[cls] = entry

    mux_block: dict[str, dict] = {}
    per_link_cls: dict[str, dict[str, list[int]]] = {}
    for ev in data.mux_events:
        per_link_cls.setdefault(ev.link, {}).setdefault(ev.stream_class, []).append(
            ev.dequeue_ts - ev.enqueue_ts
        )
    for link, by_cls in sorted(per_link_cls.items()):
        mux_block[link] = {cls: _fmt_stats(summarize(v)) for cls, v in sorted(by_cls.items())}

    report: dict = {
        "meta": dict(sorted(data.meta.items())),
        "units": {"classes": per_class, "incomplete_total": incomplete},
        "mux_delay_us": mux_block,
        "counters": dict(sorted(data.counters.items())),
    }

    gen = data.counters.get("haptic_generated", 0)
    emitted = data.counters.get("haptic_emitted", 0)
    if gen:
        report["haptic_compression_ratio"] = _sig6(emitted / gen)

    mtp = motion_to_photon(data.records)
    if mtp:
        report["motion_to_photon_us"] = _fmt_stats(summarize(mtp))
    frame_lat = frame_complete_latency(data.records)
    if frame_lat:
        report["frame_complete_us"] = _fmt_stats(summarize(sorted(frame_lat.values())))

    if data.positions:
        lag = report_lag_ticks(data)
        warmup = data.meta.get("tracking_warmup_ticks", 500)
        try:
            rmse = tracking_rmse(data.positions, lag, warmup + lag)
            report["tracking"] = {"lag_ticks": lag, "rmse_m": _sig6(rmse)}
        except MetricsError:
            pass
    return report


def format_report(report: dict) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def emit_report(data: SessionData) -> str:
    return format_report(build_report(data))


# --- trace dump / reload -----------------------------------------------------


def dump_traces(data: SessionData, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "meta.json").write_text(json.dumps(data.meta, sort_keys=True, indent=2) + "\n")
    (d / "counters.json").write_text(json.dumps(data.counters, sort_keys=True, indent=2) + "\n")
    with open(d / "stages.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["unit", "stage", "ts_us"])
        for unit_id, stages in data.records.items():
            for stage, ts in stages:
                w.writerow([unit_id, stage, ts])
    with open(d / "positions.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["ts_us", "mx", "my", "mz", "sx", "sy", "sz"])
        for ts, m, s in data.positions:
            w.writerow([ts, repr(m.x), repr(m.y), repr(m.z), repr(s.x), repr(s.y), repr(s.z)])
    with open(d / "mux_events.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["link", "class", "enqueue_ts", "dequeue_ts"])
        for ev in data.mux_events:
            w.writerow([ev.link, ev.stream_class, ev.enqueue_ts, ev.dequeue_ts])


def load_traces(directory: str | Path) -> SessionData:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    counters = json.loads((d / "counters.json").read_text())
    records: dict[str, list[tuple[str, Timestamp]]] = {}
    with open(d / "stages.csv", newline="") as f:
        for row in list(csv.DictReader(f)):
            records.setdefault(row["unit"], []).append((row["stage"], int(row["ts_us"])))
    positions = []
    with open(d / "positions.csv", newline="") as f:
        for row in csv.DictReader(f):
            positions.append(
                (
                    int(row["ts_us"]),
                    Vec3(float(row["mx"]), float(row["my"]), float(row["mz"])),
                    Vec3(float(row["sx"]), float(row["sy"]), float(row["sz"])),
                )
            )
    mux_events = []
    with open(d / "mux_events.csv", newline="") as f:
        for row in csv.DictReader(f):
            mux_events.append(
                MuxTraceEvent(
                    row["link"], row["class"], int(row["enqueue_ts"]), int(row["dequeue_ts"])
                )
            )
    return SessionData(meta, records, positions, mux_events, counters)
