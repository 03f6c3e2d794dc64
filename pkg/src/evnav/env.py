"""Episodic environments: the full person-following pipeline and a 1-D toy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import RewardParams, compute_reward
from .events import (CameraModel, EventCameraSim, EventStream, Homography, build_sae, estimate_depth,
                     window_by_time)
from .perception import (STATE_SCALE, BoundingBox, VisibilityTracker, build_state, detect_pedestrian_sae,
                         oracle_detect, write_overlay)
from .world import (Action, LidarConfig, RobotPose, TerminationLimits, TerminationStatus, VelocityCommand,
                    WorldMap, WorldSnapshot, check_termination, clamp_increments, lidar_scan, step_kinematics)

LOG_COLUMNS = ["t", "x_r", "y_r", "theta", "v_r", "omega_r", "x_box", "d_ped", "d_obs", "theta_obs",
               "reward", "status"]


@dataclass
class SimConfig:
    dt: float = 0.1
    ped_speed: float = 0.7
    duration: float = 100.0
    detector: str = "sae"  # "sae" | "oracle"
    noise_rate: float = 0.1
    sae_window_us: int = 10_000
    frame_us: int = 1000
    texture_period_us: int = 4000
    sae_threshold: int = 50
    min_area: int = 15
    depth_sigma: float = 0.02
    homography: list | None = None
    focal: float = 200.0
    overlay_dir: str | None = None  # when set, every SAE frame is dumped as a PGM with the box drawn
    spawn_distance: tuple[float, float] = (-0.2, 0.2)  # offset along the start heading, m
    spawn_lateral: tuple[float, float] = (-0.2, 0.2)
    spawn_heading: tuple[float, float] = (-0.1, 0.1)
    reward: RewardParams = field(default_factory=RewardParams)
    limits: TerminationLimits = field(default_factory=TerminationLimits)
    lidar: LidarConfig = field(default_factory=LidarConfig)


class FollowEnv:
    """Robot follows a pedestrian walking the scenario path.

    Per control tick the robot command is integrated exactly, the event camera is
    simulated over the final SAE window at the 1 ms frame clock, and the state is
    rebuilt from detection, depth and LIDAR. Observations are raw 6-vectors;
    :attr:`normalize` maps them to network scale.
    """

    normalize = staticmethod(lambda s: np.asarray(s) * STATE_SCALE)

    def __init__(self, world: WorldMap | None = None, config: SimConfig | None = None):
        self.world = world or WorldMap.load()
        self.cfg = config or SimConfig()
        c = self.cfg
        if c.detector not in ("sae", "oracle"):
            raise ValueError(f"unknown detector {c.detector!r}")
        self.path = self.world.pedestrian_path(c.ped_speed, c.duration)
        self.cam = CameraModel(focal=c.focal)
        self.camera_sim = EventCameraSim(self.cam, c.noise_rate, c.frame_us, c.texture_period_us)
        self.H = Homography(c.homography)
        self.n_steps = int(round(c.duration / c.dt))
        self.stream = EventStream(horizon_us=4 * c.sae_window_us)
        self.rng = np.random.default_rng(0)
        self.spawn_override: RobotPose | None = None

    # -- scene -----------------------------------------------------------------
    def ped_xy(self, t: float) -> tuple[float, float]:
        x, y, _ = self.path.position(min(max(t, 0.0), self.cfg.duration))
        return x, y

    def true_range(self) -> float:
        px, py = self.ped_xy(self.t)
        return math.hypot(px - self.pose.x, py - self.pose.y)

    def spawn(self, rng: np.random.Generator) -> RobotPose:
        if self.spawn_override is not None:
            return self.spawn_override
        sp = self.world.robot_spawn
        c = self.cfg
        h = sp["theta"]
        along = rng.uniform(*c.spawn_distance)
        side = rng.uniform(*c.spawn_lateral)
        x = sp["x"] + along * math.cos(h) - side * math.sin(h)
        y = sp["y"] + along * math.sin(h) + side * math.cos(h)
        px, py = self.ped_xy(0.0)
        heading = math.atan2(py - y, px - x) + rng.uniform(*c.spawn_heading)
        return RobotPose(x, y, heading)

    # -- episode ---------------------------------------------------------------
    def reset(self, seed: int | np.random.Generator | None = None):
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.k = 0
        self.t = 0.0
        self.pose = self.spawn(self.rng)
        self.cmd = VelocityCommand()
        self.tracker = VisibilityTracker(0.0, 0.0)
        self.stream.clear()
        self.x_box = self.cam.cx
        self.d_ped = self.true_range()
        self.status = TerminationStatus.RUNNING
        self.last_reward = 0.0
        self._sense(self.pose)
        # the pedestrian is assumed acquired at start; misses only count from here on
        self.tracker = VisibilityTracker(0.0, 0.0)
        self.state = build_state(self.cmd, self.x_box, self.d_ped, self.scan)
        return self.state.copy()

    def _sense(self, prev_pose: RobotPose) -> None:
        c = self.cfg
        t_us = int(round(self.t * 1e6))
        if c.detector == "oracle":
            box = oracle_detect(self.cam, self.pose, self.ped_xy(self.t))
        else:
            t_prev_us = t_us - int(round(c.dt * 1e6))
            cmd = self.cmd

            def scene(tu):
                pose = step_kinematics(prev_pose, cmd, (tu - t_prev_us) * 1e-6) if tu > t_prev_us else prev_pose
                return pose, self.ped_xy(tu * 1e-6)

            start = t_us - c.sae_window_us
            self.stream.append(self.camera_sim.events(scene, start, t_us, self.rng))
            events = window_by_time(self.stream, t_us, c.sae_window_us)
            self.frame = build_sae(events, start, c.sae_window_us)
            box = detect_pedestrian_sae(self.frame, c.sae_threshold, c.min_area)
            if c.overlay_dir:
                out = Path(c.overlay_dir)
                out.mkdir(parents=True, exist_ok=True)
                write_overlay(out / f"sae_{t_us:010d}.pgm", self.frame, box)
        self.box: BoundingBox | None = box
        d = None
        if box is not None:
            d = estimate_depth(self.true_range(), (box.x_box, box.y_box), self.H, c.depth_sigma, self.rng)
        detected = box is not None and d is not None
        if detected:
            self.x_box, self.d_ped = box.x_box, d
        self.detected = detected
        self.tracker.update(detected, self.t)
        self.scan = lidar_scan(self.world, self.pose, c.lidar)

    def step(self, action):
        if self.status.terminal:
            raise RuntimeError("episode is over; call reset()")
        c = self.cfg
        a = np.asarray(action, dtype=float)
        self.cmd = clamp_increments(self.cmd, Action(float(a[0]), float(a[1])))
        prev = self.pose
        self.pose = step_kinematics(prev, self.cmd, c.dt)
        self.k += 1
        self.t = self.k * c.dt
        self._sense(prev)
        self.state = build_state(self.cmd, self.x_box, self.d_ped, self.scan)
        p = c.reward
        reward, r_term = compute_reward(p.x_target - self.x_box, self.d_ped - p.d_target,
                                        self.scan.d_obs, self.d_ped, p)
        snap = WorldSnapshot(self.d_ped, self.scan.d_obs, self.tracker.lost_duration, self.t, c.duration)
        status = check_termination(snap, c.limits)
        if r_term and not status.terminal:
            # reward collision band is inclusive at d_col_min
            status = TerminationStatus.OBSTACLE_TOO_CLOSE
        self.status = status
        self.last_reward = reward
        info = {"status": status, "detected": self.detected, "t": self.t}
        return self.state.copy(), reward, status.terminal, info

    def log_row(self) -> list:
        s = self.state
        return [round(self.t, 10), self.pose.x, self.pose.y, self.pose.theta, s[0], s[1], s[2], s[3], s[4], s[5],
                self.last_reward, self.status.value]


class DistanceKeepingEnv:
    """1-D toy: observation ``[d_ped - 2]``, action = gap closed this tick (m), reward ``-e^2``."""

    normalize = staticmethod(lambda s: np.asarray(s, dtype=float))

    def __init__(self, horizon: int = 50, init_range: float = 1.0, bound: float = 0.2):
        self.horizon = horizon
        self.init_range = init_range
        self.bound = bound

    def reset(self, seed=None):
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.e = float(self.rng.uniform(-self.init_range, self.init_range))
        self.k = 0
        return np.array([self.e])

    def step(self, action):
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -self.bound, self.bound))
        self.e -= a
        self.k += 1
        done = self.k >= self.horizon
        info = {"status": TerminationStatus.GOAL_REACHED if done else TerminationStatus.RUNNING, "detected": True}
        return np.array([self.e]), -self.e * self.e, done, info
