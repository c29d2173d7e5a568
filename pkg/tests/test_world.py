"""Slave kinematics, collision stops, camera rendering, trajectories."""

import math
from pathlib import Path

import numpy as np
import pytest

from teleop.rng import Rng
from teleop.video import read_pgm
from teleop.wire import Box, Vec3
from teleop.world import (
    ArmState,
    MasterMode,
    MasterSource,
    TrajectoryKind,
    TrajectorySpec,
    Workspace,
    WorldError,
    gen_trajectory,
    render_camera,
    step_slave,
)

GOLDEN = Path(__file__).parent / "golden"

BOX_HALF = Box(Vec3(0.0, -0.5, -0.5), Vec3(0.5, 0.5, 0.5))
BOX_X = Box(Vec3(0.5, -1, -1), Vec3(1, 1, 1))


def arm(x=0.0, y=0.0, z=0.0):
    return ArmState(tip=Vec3(x, y, z), last_command=Vec3(x, y, z))


class TestStepSlave:
    WS = Workspace()

    def test_rate_limited_approach(self):
        state = arm()
        state = step_slave(state, Vec3(0.01, 0, 0), self.WS, dt_us=1000)
        assert state.tip == Vec3(0.001, 0, 0)
        for _ in range(9):
            state = step_slave(state, Vec3(0.01, 0, 0), self.WS, dt_us=1000)
        assert state.tip == Vec3(0.01, 0, 0)  # reached in 10 ticks

    def test_fixpoint_no_motion(self):
        state = arm(0.1)
        out = step_slave(state, Vec3(0.1, 0, 0), self.WS, dt_us=1000)
        assert out.tip == state.tip
        assert out.in_contact is False

    def test_contact_cleared_when_free(self):
        ws = Workspace(bounds=Box(Vec3(-2, -2, -2), Vec3(2, 2, 2)), obstacles=(BOX_X,))
        state = ArmState(tip=Vec3(0.5, 0, 0), last_command=Vec3(0.6, 0, 0), in_contact=True)
        out = step_slave(state, Vec3(0.0, 0, 0), ws, dt_us=1000)
        assert out.in_contact is False

    def test_stops_on_face_when_crossing(self):
        ws = Workspace(bounds=Box(Vec3(-2, -2, -2), Vec3(2, 2, 2)),
                       obstacles=(BOX_X,), v_max=200.0)
        state = arm(0.49)
        out = step_slave(state, Vec3(0.6, 0, 0), ws, dt_us=1000)
        assert out.tip.x == 0.5  # exactly on the face
        assert out.in_contact is True

        # segment-sampling oracle: first strictly-inside sample is past 0.5
        inside_ts = [
            t / 10_000
            for t in range(10_001)
            if BOX_X.contains_strict(Vec3(0.49 + (0.6 - 0.49) * t / 10_000, 0, 0))
        ]
        assert inside_ts and 0.49 + (0.6 - 0.49) * inside_ts[0] >= 0.5

    def test_pressing_into_face_holds_contact(self):
        ws = Workspace(bounds=Box(Vec3(-2, -2, -2), Vec3(2, 2, 2)), obstacles=(BOX_X,))
        state = ArmState(tip=Vec3(0.5, 0, 0), last_command=Vec3(0.6, 0, 0))
        out = step_slave(state, Vec3(0.7, 0, 0), ws, dt_us=1000)
        assert out.tip == Vec3(0.5, 0, 0)
        assert out.in_contact is True

    def test_command_outside_bounds_clamped_and_flagged(self):
        out = step_slave(arm(), Vec3(5, 0, 0), self.WS, dt_us=1000)
        assert out.command_clamped is True
        assert out.tip == Vec3(0.001, 0, 0)  # heading toward the clamp point

    def test_safety_invariant_seeded(self):
        rng = Rng(88)
        obstacles = (
            Box(Vec3(0.15, -0.1, -0.5), Vec3(0.35, 0.1, 0.5)),
            Box(Vec3(-0.4, 0.2, -0.2), Vec3(-0.1, 0.45, 0.3)),
        )
        ws = Workspace(obstacles=obstacles, v_max=2.0)
        state = arm()
        for _ in range(5000):
            cmd = Vec3(
                rng.uniform_int(-500, 500) / 1000,
                rng.uniform_int(-500, 500) / 1000,
                rng.uniform_int(-500, 500) / 1000,
            )
            state = step_slave(state, cmd, ws, dt_us=1000)
            for ob in obstacles:
                assert not ob.contains_strict(state.tip)
            assert ws.bounds.contains(state.tip)

    def test_sliding_along_face_allowed(self):
        ws = Workspace(bounds=Box(Vec3(-2, -2, -2), Vec3(2, 2, 2)), obstacles=(BOX_X,))
        state = ArmState(tip=Vec3(0.5, 0, 0), last_command=Vec3(0.5, 0, 0))
        out = step_slave(state, Vec3(0.5, 0.4, 0), ws, dt_us=1000)
        assert out.tip.x == 0.5
        assert out.tip.y > 0


class TestRenderCamera:
    def test_empty_workspace_uniform_background(self):
        ws = Workspace()
        f = render_camera(ws, ArmState(Vec3(5, 5, 0), Vec3()), 64, 64)
        # tip far outside projects to a clamped corner; check the bulk
        assert np.count_nonzero(f.pixels == 32) >= 64 * 64 - 9

    def test_tip_center_3x3_block(self):
        ws = Workspace()
        f = render_camera(ws, arm(), 64, 64)
        assert np.all(f.pixels[31:34, 31:34] == 255)
        assert f.pixels[30, 32] == 32 and f.pixels[34, 32] == 32

    def test_half_obstacle_rectangle_analytic_and_golden(self):
        ws = Workspace(obstacles=(BOX_HALF,))
        f = render_camera(ws, arm(), 64, 64)
        # analytic bounds: x in [0, 0.5] maps to columns [32, 63], full rows
        def to_px(value):
            return math.floor((value + 0.5) / 1.0 * 63 + 0.5)

        u0, u1 = to_px(0.0), to_px(0.5)
        assert (u0, u1) == (32, 63)
        obstacle_mask = np.zeros((64, 64), dtype=bool)
        obstacle_mask[:, u0 : u1 + 1] = True
        tip_mask = np.zeros((64, 64), dtype=bool)
        tip_mask[31:34, 31:34] = True
        assert np.all(f.pixels[tip_mask] == 255)
        assert np.all(f.pixels[obstacle_mask & ~tip_mask] == 128)
        assert np.all(f.pixels[~obstacle_mask & ~tip_mask] == 32)
        golden = read_pgm(GOLDEN / "render_half_obstacle.pgm")
        assert np.array_equal(f.pixels, golden)

    def test_render_pure_function(self):
        ws = Workspace(obstacles=(BOX_HALF,))
        a = render_camera(ws, arm(0.1, -0.2), 64, 64)
        b = render_camera(ws, arm(0.1, -0.2), 64, 64)
        assert np.array_equal(a.pixels, b.pixels)

    def test_tip_block_clipped_at_frame_corner(self):
        ws = Workspace()
        f = render_camera(ws, arm(-0.5, -0.5), 64, 64)
        # projection lands on (0,0): only the 2x2 in-frame part is drawn
        assert np.all(f.pixels[0:2, 0:2] == 255)
        assert f.pixels[2, 0] == 32 and f.pixels[0, 2] == 32


class TestTrajectory:
    def test_sinusoid_quarter_period(self):
        spec = TrajectorySpec(
            kind=TrajectoryKind.SINUSOID,
            amplitude=Vec3(0.1, 0, 0),
            frequency=Vec3(1, 0, 0),
            duration_s=10,
        )
        p = gen_trajectory(spec, 0.25)
        assert p.x == pytest.approx(0.1)
        assert (p.y, p.z) == (0.0, 0.0)

    def test_step_before_and_after(self):
        spec = TrajectorySpec(kind=TrajectoryKind.STEP, step_at_s=1.0,
                              step_from=Vec3(), step_to=Vec3(0.2, 0, 0))
        assert gen_trajectory(spec, 0.5) == Vec3()
        assert gen_trajectory(spec, 1.0) == Vec3(0.2, 0, 0)

    def test_lissajous_closes_after_one_second(self):
        spec = TrajectorySpec(
            kind=TrajectoryKind.LISSAJOUS,
            amplitude=Vec3(0.1, 0.1, 0),
            frequency=Vec3(1, 2, 0),
            duration_s=10,
        )
        p0, p1 = gen_trajectory(spec, 0.0), gen_trajectory(spec, 1.0)
        assert (p1 - p0).norm() < 1e-12

    def test_scripted_piecewise_linear(self):
        spec = TrajectorySpec(
            kind=TrajectoryKind.SCRIPTED,
            duration_s=4,
            waypoints=((0.0, Vec3()), (2.0, Vec3(0.2, 0, 0)), (4.0, Vec3(0.2, 0.2, 0))),
        )
        assert gen_trajectory(spec, 1.0) == Vec3(0.1, 0, 0)
        assert gen_trajectory(spec, 3.0) == Vec3(0.2, 0.1, 0)

    def test_out_of_range_returns_endpoint(self):
        spec = TrajectorySpec(kind=TrajectoryKind.STEP, step_to=Vec3(1, 0, 0), duration_s=5)
        assert gen_trajectory(spec, 99.0) == gen_trajectory(spec, 5.0)
        assert gen_trajectory(spec, -1.0) == gen_trajectory(spec, 0.0)


class TestMasterSource:
    def test_scripted_rate_times_duration(self):
        spec = TrajectorySpec(duration_s=1.0)
        src = MasterSource(MasterMode.SCRIPTED, spec, Workspace())
        samples = [src.sample(t * 1000) for t in range(1000)]
        assert len(samples) == 1000
        assert samples[0].ts == 0 and samples[-1].ts == 999_000

    def test_live_holds_default_before_input(self, caplog):
        src = MasterSource(MasterMode.LIVE, workspace=Workspace())
        with caplog.at_level("WARNING"):
            s = src.sample(0)
        assert s.position == Vec3(0, 0, 0)
        assert len([r for r in caplog.records if "no console input" in r.message]) == 1
        src.sample(1000)  # warning only once
        assert len([r for r in caplog.records if "no console input" in r.message]) == 1

    def test_live_holds_last_command(self):
        src = MasterSource(MasterMode.LIVE, workspace=Workspace())
        src.set_live_command(Vec3(0.2, 0.1, 0))
        assert src.sample(5000).position == Vec3(0.2, 0.1, 0)
        assert src.sample(6000).position == Vec3(0.2, 0.1, 0)

    def test_scripted_requires_trajectory(self):
        with pytest.raises(WorldError):
            MasterSource(MasterMode.SCRIPTED)
