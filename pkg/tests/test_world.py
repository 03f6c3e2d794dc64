import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evnav.world import (Action, EpisodeOver, LidarConfig, ParameterError, PedestrianPath, Rect, RobotPose,
                         TerminationStatus, VelocityCommand, WheelRates, WorldMap, WorldSnapshot, body_to_wheel,
                         check_termination, clamp_increments, lidar_scan, step_kinematics, wheel_to_body, wrap_angle)


def euler(pose, cmds, dt_ctrl, h=1e-5):
    x, y, th = pose
    n = int(round(dt_ctrl / h))
    for v, w in cmds:
        for _ in range(n):
            x += v * math.cos(th) * h
            y += v * math.sin(th) * h
            th += w * h
    return x, y, th


def test_wheel_to_body_examples():
    assert wheel_to_body(WheelRates(5, 0, 5, 0)) == pytest.approx(VelocityCommand(0.5, 0.0))
    cmd = wheel_to_body(WheelRates(0, 0, 0, 0))
    assert (cmd.v, cmd.omega) == (0.0, 0.0)
    cmd = wheel_to_body(WheelRates(0, 0, 4, 0))
    assert cmd.v == pytest.approx(0.2) and cmd.omega == pytest.approx(1.0)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.05, 1.0), st.floats(0.1, 2.0))
def test_wheel_roundtrip(w1, w3, L, B):
    cmd = wheel_to_body(WheelRates(w1, w1, w3, w3, L=L, B=B))
    back = body_to_wheel(cmd, L, B)
    assert back.omega_1 == pytest.approx(w1, abs=1e-9)
    assert back.omega_3 == pytest.approx(w3, abs=1e-9)


def test_wheel_rejects_degenerate_geometry():
    with pytest.raises(ParameterError):
        wheel_to_body(WheelRates(1, 1, 1, 1, L=0.0))


def test_step_examples():
    p = step_kinematics(RobotPose(0, 0, 0), VelocityCommand(1, 0), 2)
    assert (p.x, p.y, p.theta) == pytest.approx((2, 0, 0))
    p = step_kinematics(RobotPose(0, 0, 0), VelocityCommand(0, 0.5), math.pi)
    assert (p.x, p.y, p.theta) == pytest.approx((0, 0, math.pi / 2), abs=1e-12)
    p = step_kinematics(RobotPose(0, 0, 0), VelocityCommand(1, 1), math.pi / 2)
    assert (p.x, p.y, p.theta) == pytest.approx((1, 1, math.pi / 2), abs=1e-12)
    e = euler((0, 0, 0), [(1, 1)], math.pi / 2)
    assert (p.x, p.y) == pytest.approx(e[:2], abs=1e-4)


def test_step_rejects_bad_dt():
    with pytest.raises(ParameterError):
        step_kinematics(RobotPose(0, 0, 0), VelocityCommand(1, 0), -0.1)


def test_wrap_angle_range():
    for a in np.linspace(-20, 20, 401):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_clamp_examples():
    c = clamp_increments(VelocityCommand(0.9, 0), Action(0.3, 0))
    assert (c.v, c.omega) == pytest.approx((1.0, 0))
    c = clamp_increments(VelocityCommand(0.5, 0.2), Action(0, 0))
    assert (c.v, c.omega) == (0.5, 0.2)
    c = clamp_increments(VelocityCommand(0.0, -0.4), Action(-0.2, -0.5))
    assert (c.v, c.omega) == pytest.approx((0.0, -0.5))


@given(st.floats(0, 1), st.floats(-0.5, 0.5), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_clamp_invariants(v, w, dv, dw):
    c = clamp_increments(VelocityCommand(v, w), Action(dv, dw))
    assert 0 <= c.v <= 1 and -0.5 <= c.omega <= 0.5
    assert abs(c.v - v) <= 0.2 + 1e-12 and abs(c.omega - w) <= 0.5 + 1e-12


def test_velocity_command_rejects_nan():
    with pytest.raises(ParameterError):
        VelocityCommand(float("nan"), 0)


def test_pedestrian_path_start_and_distance():
    path = WorldMap.load().pedestrian_path()
    x0, y0, _ = path.position(0.0)
    assert (x0, y0) == pytest.approx(path.point_at_arclength(0.0)[:2])
    # dense arc-length oracle between t=10 and t=20
    u = np.linspace(0, 2 * np.pi, 400_001)
    xs = path.cx + path.a * np.sin(u)
    ys = path.cy + path.b * np.sin(u) * np.cos(u)
    seg = np.hypot(np.diff(xs), np.diff(ys))
    cum = np.concatenate([[0], np.cumsum(seg)])
    p10, p20 = path.position(10.0), path.position(20.0)
    i10 = np.argmin(np.hypot(xs - p10[0], ys - p10[1]) + 1e3 * (np.abs(cum - 7.0) > 0.5))
    i20 = np.argmin(np.hypot(xs - p20[0], ys - p20[1]) + 1e3 * (np.abs(cum - 14.0) > 0.5))
    assert cum[i20] - cum[i10] == pytest.approx(7.0, abs=1e-3)


def test_pedestrian_speed_constant():
    path = WorldMap.load().pedestrian_path()
    ts = np.linspace(0, 99.9, 500)
    for t in ts:
        a = np.array(path.position(t)[:2])
        b = np.array(path.position(t + 0.01)[:2])
        assert np.linalg.norm(b - a) / 0.01 == pytest.approx(0.7, abs=1e-3)


def test_pedestrian_outside_duration():
    path = PedestrianPath(0, 0, 2, 2)
    with pytest.raises(EpisodeOver):
        path.position(100.5)
    with pytest.raises(EpisodeOver):
        path.position(-1)


def test_goal_at_duration():
    snap = WorldSnapshot(d_ped=2.0, d_obs=3.0, lost_duration=0.0, ped_time=100.0)
    assert check_termination(snap) is TerminationStatus.GOAL_REACHED


def test_lidar_empty_map():
    world = WorldMap(width=200, height=200, obstacles=[])
    scan = lidar_scan(world, RobotPose(100, 100, 0.3))
    assert np.all(scan.ranges == 5.0)
    assert scan.theta_obs == 0.0
    assert len(scan.ranges) == 181


def test_lidar_wall_ahead():
    world = WorldMap(width=50, height=50, obstacles=[Rect(11.0, 0.0, 1.0, 50.0)])
    pose = RobotPose(10.0, 25.0, 0.0)
    scan = lidar_scan(world, pose)
    i0 = int(np.argmin(np.abs(scan.angles)))
    assert scan.ranges[i0] == pytest.approx(1.0, abs=1e-6)
    cfg = LidarConfig(n_beams=3, span=2 * math.pi / 3)
    s3 = lidar_scan(world, pose, cfg)
    assert s3.ranges[0] == pytest.approx(2.0, abs=1e-6)
    assert s3.ranges[2] == pytest.approx(2.0, abs=1e-6)
    assert scan.d_obs == pytest.approx(1.0, abs=1e-6) and scan.theta_obs == pytest.approx(0.0, abs=1e-9)


def test_lidar_inside_obstacle_is_collision():
    world = WorldMap(width=20, height=20, obstacles=[Rect(5, 5, 2, 2)])
    scan = lidar_scan(world, RobotPose(6, 6, 0))
    assert scan.collision and scan.d_obs == 0.0
    assert check_termination(WorldSnapshot(2.0, scan.d_obs, 0.0, 1.0)) is TerminationStatus.OBSTACLE_TOO_CLOSE


@pytest.mark.parametrize("snap,expected", [
    (WorldSnapshot(3.2, 3.0, 0.0, 5.0), TerminationStatus.DISTANCE_BOUND),
    (WorldSnapshot(0.9, 3.0, 0.0, 5.0), TerminationStatus.DISTANCE_BOUND),
    (WorldSnapshot(2.0, 0.49, 0.0, 5.0), TerminationStatus.OBSTACLE_TOO_CLOSE),
    (WorldSnapshot(2.0, 3.0, 4.1, 5.0), TerminationStatus.FEATURE_LOST),
    (WorldSnapshot(2.0, 3.0, 4.0, 5.0), TerminationStatus.RUNNING),
    (WorldSnapshot(2.0, 0.5, 0.0, 5.0), TerminationStatus.RUNNING),
    # ties resolve in listed order
    (WorldSnapshot(3.5, 0.1, 5.0, 100.0), TerminationStatus.GOAL_REACHED),
    (WorldSnapshot(3.5, 0.1, 5.0, 10.0), TerminationStatus.FEATURE_LOST),
    (WorldSnapshot(3.5, 0.1, 0.0, 10.0), TerminationStatus.DISTANCE_BOUND),
])
def test_termination(snap, expected):
    assert check_termination(snap) is expected


def test_map_roundtrip(tmp_path):
    world = WorldMap.load()
    assert len(world.obstacles) == 4 and (world.width, world.height) == (21, 12)
    p = tmp_path / "m.json"
    import json
    p.write_text(json.dumps(world.to_dict()))
    assert WorldMap.load(p).to_dict() == world.to_dict()


def test_default_path_clear_of_obstacles():
    world = WorldMap.load()
    for x, y in world.pedestrian_path().sample(2000):
        assert 0 < x < world.width and 0 < y < world.height
        assert not world.blocked(x, y)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_kinematics_vs_euler_property(seed):
    rng = np.random.default_rng(seed)
    cmds = [(rng.uniform(0, 1), rng.uniform(-0.5, 0.5)) for _ in range(5)]
    pose = RobotPose(0, 0, 0)
    for v, w in cmds:
        for _ in range(20):
            pose = step_kinematics(pose, VelocityCommand(v, w), 0.1)
    e = euler((0, 0, 0), [c for c in cmds for _ in range(2)], 1.0, h=1e-4)
    assert math.hypot(pose.x - e[0], pose.y - e[1]) < 1e-3
    assert abs(wrap_angle(pose.theta - e[2])) < 1e-3
