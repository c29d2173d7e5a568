"""Acceptance suite: one test per criterion, pass/fail printed per criterion.

Each test enforces its stated tolerance exactly; runtime-bounded criteria
measure wall time around the run loop they constrain.
"""

import itertools
import json
import math
import time
from pathlib import Path

import pytest

from teleop.channel import ChannelConfig, network_traverse
from teleop.config import HapticConfig, SessionConfig, VideoConfig
from teleop.metrics import (
    e2e_us,
    emit_report,
    dump_traces,
    is_complete,
    load_traces,
    motion_to_photon,
    stage_deltas,
    unit_class,
)
from teleop.mux import MuxEvent
from teleop.rng import Rng
from teleop.session import VirtualSession, run_session
from teleop.video import (
    MODE_ORDER,
    EncodeMode,
    TileUnit,
    allocate_budgets,
    classify_roi,
    encode_frame,
    encode_tile,
    encode_tile_mode,
    tile_frame,
)
from teleop.wire import (
    Box,
    MuxPacket,
    StreamClass,
    Vec3,
    decode_packet,
    encode_packet,
)
from teleop.world import TrajectoryKind, TrajectorySpec

GOLDEN = Path(__file__).parent / "golden"

# frozen from the documented rng: seed 7, loss 0.1, first 64 Bernoulli drops
GOLDEN_DROPS_SEED7 = "1000000000000000000000000000000001000000000100000000010000001000"


def report_pass(criterion: str, detail: str = ""):
    print(f"PASS {criterion}" + (f": {detail}" if detail else ""))


def small_video():
    # 8x8-pixel tiles keep the 10 s x 10 seed sweeps inside the runtime budget
    return VideoConfig(
        frame_width=32,
        frame_height=32,
        grid_cols=4,
        grid_rows=4,
        encode_budget_units=2048,
        frame_budget_bytes=700,
    )


def seeded_tile(seed, w=16, h=16, importance=1.0, is_roi=False, index=0):
    rng = Rng(seed)
    import numpy as np

    px = np.array([rng.uniform_int(0, 255) for _ in range(w * h)], dtype=np.uint8)
    return TileUnit(0, index, (0, 0, w, h), px.reshape(h, w), importance, is_roi)


def test_criterion_1_telescoping_latency():
    t0 = time.perf_counter()
    total_units = 0
    for seed in range(10):
        cfg = SessionConfig(seed=seed, duration_us=10_000_000)
        cfg.video = small_video()
        cfg.channel = ChannelConfig(jitter_us_max=400, loss_prob=0.02)
        data = run_session(cfg)
        for unit_id, stages in data.records.items():
            if not is_complete(unit_id, stages):
                continue
            deltas = stage_deltas(stages)
            assert sum(deltas.values()) == e2e_us(stages), unit_id
            assert all(isinstance(ts, int) for _, ts in stages)
            total_units += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0, f"runtime {elapsed:.2f}s exceeds 5s budget"
    assert total_units > 10_000
    report_pass("criterion 1 (telescoping latency)",
                f"{total_units} units exact over 10 seeds in {elapsed:.2f}s")


def test_criterion_2_strict_priority_mux_bound():
    t0 = time.perf_counter()
    for seed in range(10):
        cfg = SessionConfig(seed=seed, duration_us=2_000_000)  # 30 fps x 16 tiles, 1 kHz haptic
        cfg.channel = ChannelConfig(jitter_us_max=500)
        s = VirtualSession(cfg)
        s.run()
        events = s.tel_link.mux.events
        video_sizes = [e.packet.wire_size for e in events
                       if e.packet.stream_class is StreamClass.VIDEO]
        haptic_delays = [e.delay for e in events
                         if e.packet.stream_class is StreamClass.HAPTIC]
        assert video_sizes and haptic_delays
        bound = math.ceil(max(video_sizes) / cfg.channel.link_rate_bytes_per_us)
        assert max(haptic_delays) <= bound, (seed, max(haptic_delays), bound)
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0, f"runtime {elapsed:.2f}s exceeds 5s budget"
    report_pass("criterion 2 (strict-priority mux bound)",
                f"max haptic delay <= {bound}us across 10 seeds in {elapsed:.2f}s")


def test_criterion_3_deadband_bound():
    for seed in range(10):
        rng = Rng(seed + 1000)
        amp = Vec3(
            0.05 + rng.uniform_int(0, 100) / 1000.0,
            0.05 + rng.uniform_int(0, 80) / 1000.0,
            0.0,
        )
        freq = Vec3(
            0.2 + rng.uniform_int(0, 40) / 100.0,
            0.1 + rng.uniform_int(0, 30) / 100.0,
            0.0,
        )
        cfg = SessionConfig(seed=seed, duration_us=4_000_000)
        cfg.video = small_video()
        cfg.trajectory = TrajectorySpec(
            kind=TrajectoryKind.LISSAJOUS, amplitude=amp, frequency=freq, duration_s=4.0
        )
        cfg.channel = ChannelConfig(loss_prob=0.0, jitter_us_max=700)
        data = run_session(cfg)

        # sender-side oracle: re-run the deadband over the master trace
        k, floor = cfg.haptic.weber_k, cfg.haptic.floor_m
        last_sent = None
        emitted = 0
        for _, master, _ in data.positions:
            if last_sent is None:
                last_sent = master
                emitted += 1
                continue
            d = master - last_sent
            dist = math.sqrt(d.x**2 + d.y**2 + d.z**2)
            threshold = max(k * math.sqrt(last_sent.x**2 + last_sent.y**2 + last_sent.z**2),
                            floor)
            if dist > threshold:
                last_sent = master
                emitted += 1
                dist = 0.0
            assert dist <= threshold, f"seed {seed}: tick error {dist} > {threshold}"
        assert emitted == data.counters["haptic_emitted"]
        # zero loss: every emission was applied at the far side
        complete_cmds = sum(
            1 for uid, st in data.records.items()
            if unit_class(uid) == "hap_cmd" and is_complete(uid, st)
        )
        assert complete_cmds == emitted
    report_pass("criterion 3 (deadband bound)", "10 seeds, every tick within threshold")


def equal_cost_video():
    # one trial each and a generous per-tile byte share: every tile picks the
    # lossless full-resolution mode, so decode costs are identical
    return VideoConfig(
        frame_width=64,
        frame_height=64,
        grid_cols=4,
        grid_rows=4,
        n_encode_workers=2,
        n_decode_workers=2,
        encode_budget_units=2048,
        frame_budget_bytes=4200,
        roi_weight=1.0,
    )


def test_criterion_4_roi_precedence():
    checked_frames = 0
    for seed, loss in [(0, 0.0), (1, 0.0), (2, 0.0), (3, 0.1), (4, 0.1)]:
        cfg = SessionConfig(seed=seed, duration_us=2_000_000)
        cfg.video = equal_cost_video()
        cfg.channel = ChannelConfig(jitter_us_max=3000, loss_prob=loss)
        data = run_session(cfg)
        frames: dict[int, dict[str, list[int]]] = {}
        captures: dict[int, int] = {}
        expected = cfg.video.grid_cols * cfg.video.grid_rows
        for unit_id, stages in data.records.items():
            if unit_class(unit_id) != "vid" or not is_complete(unit_id, stages):
                continue
            _, fid, _, roi = unit_id.split(":")
            by_stage = dict(stages)
            fid = int(fid)
            frames.setdefault(fid, {"roi": [], "std": []})[roi].append(by_stage["display"])
            captures[fid] = by_stage["capture"]
        for fid, buckets in frames.items():
            if buckets["roi"] and buckets["std"]:
                assert max(buckets["roi"]) <= min(buckets["std"]), f"seed {seed} frame {fid}"
                checked_frames += 1
            if buckets["roi"] and len(buckets["roi"]) + len(buckets["std"]) == expected:
                mtp = max(buckets["roi"]) - captures[fid]
                frame_complete = max(buckets["roi"] + buckets["std"]) - captures[fid]
                assert mtp <= frame_complete
    assert checked_frames >= 100
    report_pass("criterion 4 (ROI precedence)", f"{checked_frames} frames ordered ROI-first")


def test_criterion_5_rd_properties():
    # (a) lossless mode on 100 seeded tiles
    for seed in range(100):
        tile = seeded_tile(seed)
        _, _, mse = encode_tile_mode(tile.pixels, EncodeMode(0, 1))
        assert mse == 0.0
    # (b) more trials never worsen mse at fixed byte budget, once feasible
    rng = Rng(500)
    for _ in range(20):
        tile = seeded_tile(rng.uniform_int(0, 10_000))
        for budget in (40, 48, 56, 64, 160, 192, 224, 256, 300, 512):
            prev = None
            for k in range(1, 9):
                enc = encode_tile(tile, k, budget)
                if prev is not None:
                    if prev.size_bytes <= budget:
                        assert enc.size_bytes <= budget
                        assert enc.mse <= prev.mse, (budget, k)
                    else:
                        assert enc.size_bytes <= prev.size_bytes
                if budget >= 256 and prev is not None:
                    assert enc.mse <= prev.mse
                prev = enc
    # (c) raising roi_weight never worsens the ROI tile
    import numpy as np

    for seed in range(10):
        frng = Rng(seed + 900)
        px = np.array([frng.uniform_int(0, 255) for _ in range(64 * 64)],
                      dtype=np.uint8).reshape(64, 64)
        from teleop.video import Frame

        frame = Frame(0, 64, 64, px)
        prev_trials, prev_mse = None, None
        for weight in (1.0, 2.0, 4.0, 8.0):
            tiles = classify_roi(tile_frame(frame, 4, 4), (33, 10), 4, 4, 0, weight)
            plan = allocate_budgets(tiles, 2, 8192, 3000)
            encoded = encode_frame(tiles, plan, 0)
            roi = next(e for e in encoded if e.is_roi)
            if prev_trials is not None:
                assert plan.trials[roi.tile_index] >= prev_trials
                assert roi.mse <= prev_mse
            prev_trials = plan.trials[roi.tile_index]
            prev_mse = roi.mse
    report_pass("criterion 5 (RD properties)", "lossless, trial, and weight monotonicity hold")


def oracle_encode_choice(pixels, n_trials, byte_budget):
    """Pure-python exhaustive re-derivation of the mode selection."""
    h = len(pixels)
    w = len(pixels[0])
    tried = []
    for order, (q, d) in enumerate(MODE_ORDER[:n_trials]):
        if d == 2:
            sh, sw = (h + 1) // 2, (w + 1) // 2
            small = [[0] * sw for _ in range(sh)]
            for bi in range(sh):
                for bj in range(sw):
                    acc = 0
                    for di in range(2):
                        for dj in range(2):
                            i = min(2 * bi + di, h - 1)
                            j = min(2 * bj + dj, w - 1)
                            acc += pixels[i][j]
                    small[bi][bj] = acc // 4
            recon_small = [[((v >> q) << q) + ((1 << (q - 1)) if q else 0) for v in row]
                           for row in small]
            recon = [[recon_small[i // 2][j // 2] for j in range(w)] for i in range(h)]
            count = sh * sw
        else:
            recon = [[((v >> q) << q) + ((1 << (q - 1)) if q else 0) for v in row]
                     for row in pixels]
            count = w * h
        sse = sum(
            (pixels[i][j] - recon[i][j]) ** 2 for i in range(h) for j in range(w)
        )
        size = math.ceil(count * (8 - q) / 8)
        tried.append((order, (q, d), size, sse))
    fitting = [t for t in tried if t[2] <= byte_budget]
    if fitting:
        chosen = min(fitting, key=lambda t: (t[3], t[2], t[0]))
    else:
        chosen = min(tried, key=lambda t: (t[2], t[0]))
    return chosen[1]


def test_criterion_6_scheduler_vs_oracle():
    t0 = time.perf_counter()
    rng = Rng(4242)
    instances = 0
    attempts = 0
    while instances < 500 and attempts < 2000:
        attempts += 1
        n = rng.uniform_int(1, 6)
        workers = rng.uniform_int(1, 2)
        side = (4, 8)[rng.uniform_int(0, 1)]
        tiles = []
        for i in range(n):
            t = seeded_tile(rng.uniform_int(0, 100_000), w=side, h=side, index=i)
            t.importance = float(rng.uniform_int(1, 8))
            tiles.append(t)
        tc = side * side
        total = sum(tc for _ in tiles)
        alpha = (4, 7, 10)[rng.uniform_int(0, 2)] / 10
        budget = max(8 * tc, math.ceil(alpha * 8 * total / workers))
        byte_total = rng.uniform_int(n * 10, n * 300)
        try:
            plan = allocate_budgets(tiles, workers, budget, byte_total)
        except Exception:
            continue
        instances += 1
        # feasibility
        loads = [0] * workers
        for i, w in enumerate(plan.worker):
            loads[w] += plan.trial_budget_units[i]
        assert max(loads) <= budget
        assert all(k >= 1 for k in plan.trials)
        # LPT within 4/3 of brute-force optimum
        best = min(
            max(sum(b for b, a in zip(plan.trial_budget_units, assign) if a == k)
                for k in range(workers))
            for assign in itertools.product(range(workers), repeat=n)
        )
        assert 3 * max(loads) <= 4 * best, (max(loads), best)
        # mode selection matches the exhaustive rule
        for i, tile in enumerate(tiles):
            enc = encode_tile(tile, plan.trials[i], plan.byte_budget[i])
            want = oracle_encode_choice(
                tile.pixels.tolist(), plan.trials[i], plan.byte_budget[i]
            )
            assert (enc.mode.quant_shift, enc.mode.downsample) == want
    elapsed = time.perf_counter() - t0
    assert instances >= 500
    assert elapsed < 30.0, f"runtime {elapsed:.2f}s exceeds 30s budget"
    report_pass("criterion 6 (scheduler vs oracle)",
                f"{instances} instances exact in {elapsed:.2f}s")


def test_criterion_7_channel_statistics():
    n = 100_000
    cfg = ChannelConfig(loss_prob=0.1, jitter_us_max=1000)
    rng = Rng(7)
    drops = 0
    jitters = []
    for i in range(n):
        d = network_traverse(MuxPacket(StreamClass.HAPTIC, i, 0, b""), 0, cfg, rng)
        if d.dropped:
            drops += 1
        else:
            jitters.append(d.jitter_us)
    sigma_loss = math.sqrt(n * 0.1 * 0.9)
    assert abs(drops - 0.1 * n) <= 3 * sigma_loss
    j = cfg.jitter_us_max
    var = ((j + 1) ** 2 - 1) / 12
    sigma_jitter = math.sqrt(var / len(jitters))
    mean_jitter = sum(jitters) / len(jitters)
    assert abs(mean_jitter - j / 2) <= 3 * sigma_jitter
    # frozen drop sequence, bit exact
    rng2 = Rng(7)
    seq = "".join(
        "1" if network_traverse(MuxPacket(StreamClass.HAPTIC, i, 0, b""), 0,
                                ChannelConfig(loss_prob=0.1), rng2).dropped else "0"
        for i in range(64)
    )
    assert seq == GOLDEN_DROPS_SEED7
    report_pass("criterion 7 (channel statistics)",
                f"loss {drops/n:.4f}, jitter mean {mean_jitter:.1f}, golden drops exact")


def test_criterion_8_tracking_and_safety():
    # zero impairments, single-axis sinusoid at half the slave speed limit
    v_max = 1.0
    amp = 0.2
    freq = 0.5 * v_max / (2 * math.pi * amp)
    cfg = SessionConfig(seed=0, duration_us=6_000_000)
    cfg.video = small_video()
    cfg.channel = ChannelConfig(loss_prob=0.0, jitter_us_max=0)
    cfg.trajectory = TrajectorySpec(
        kind=TrajectoryKind.SINUSOID,
        amplitude=Vec3(amp, 0, 0),
        frequency=Vec3(freq, 0, 0),
        duration_s=6.0,
    )
    data = run_session(cfg)
    report = json.loads(emit_report(data))
    rmse = report["tracking"]["rmse_m"]
    max_master = max(
        math.sqrt(m.x**2 + m.y**2 + m.z**2) for _, m, _ in data.positions
    )
    tick_s = cfg.haptic.tick_us / 1e6
    bound = max(cfg.haptic.weber_k * max_master, cfg.haptic.floor_m) + v_max * tick_s
    assert rmse <= bound, f"rmse {rmse} > bound {bound}"

    # collision scenario: command drives straight into an obstacle
    obstacle = Box(Vec3(0.15, -0.2, -0.2), Vec3(0.4, 0.2, 0.2))
    for seed in range(5):
        cfg2 = SessionConfig(seed=seed, duration_us=3_000_000)
        cfg2.video = small_video()
        cfg2.workspace.obstacles = (obstacle,)
        cfg2.trajectory = TrajectorySpec(
            kind=TrajectoryKind.SINUSOID,
            amplitude=Vec3(0.35, 0.1, 0.0),
            frequency=Vec3(0.3, 0.7, 0.0),
            duration_s=3.0,
        )
        cfg2.channel = ChannelConfig(jitter_us_max=500, loss_prob=0.05)
        data2 = run_session(cfg2)
        contacts = 0
        for _, _, slave in data2.positions:
            assert not obstacle.contains_strict(slave), "tip entered obstacle interior"
            if slave.x >= obstacle.lo.x - 1e-9:
                contacts += 1
        assert contacts > 0, "scenario never reached the obstacle face"
    report_pass("criterion 8 (tracking and safety)",
                f"rmse {rmse:.4f} <= {bound:.4f}; no interior penetration across 5 seeds")


def test_criterion_9_determinism_and_replay(tmp_path):
    def make_cfg():
        cfg = SessionConfig(seed=42, duration_us=2_000_000)
        cfg.channel = ChannelConfig(jitter_us_max=900, loss_prob=0.05)
        return cfg

    report_a = emit_report(run_session(make_cfg()))
    report_b = emit_report(run_session(make_cfg()))
    assert report_a == report_b

    data = run_session(make_cfg())
    dump_traces(data, tmp_path / "traces")
    replayed = emit_report(load_traces(tmp_path / "traces"))
    assert replayed == report_a
    report_pass("criterion 9 (determinism & replay)", "byte-identical reports")


def test_criterion_10_wire_golden_vectors():
    vectors = json.loads((GOLDEN / "wire_vectors.json").read_text())
    assert len(vectors) == 20
    for v in vectors:
        raw = bytes.fromhex(v["hex"])
        p = decode_packet(raw)
        assert int(p.stream_class) == v["stream_class"]
        assert p.seq == v["seq"]
        assert p.send_ts == v["send_ts"]
        assert p.payload.hex() == v["payload_hex"]
        assert encode_packet(p) == raw
    report_pass("criterion 10 (wire golden vectors)", "20 vectors decode and re-encode exactly")
