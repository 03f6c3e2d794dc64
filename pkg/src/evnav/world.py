"""2D world: map geometry, robot kinematics, pedestrian path, LIDAR and termination."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWIST_EPS = 1e-8

V_MIN, V_MAX = 0.0, 1.0
W_MAX = 0.5
DV_MAX = 0.2
DW_MAX = 0.5

DEFAULT_MAP = Path(__file__).parent / "data" / "default_map.json"


class ParameterError(ValueError):
    pass


class EpisodeOver(Exception):
    """Raised when the pedestrian clock is queried past the end of its path."""


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True)
class RobotPose:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ParameterError(f"non-finite pose {self}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class VelocityCommand:
    v: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        # ranges are enforced by clamp_increments; raw wheel conversions may exceed them
        if not (math.isfinite(self.v) and math.isfinite(self.omega)):
            raise ParameterError(f"non-finite command v={self.v}, omega={self.omega}")


@dataclass(frozen=True)
class Action:
    delta_v: float = 0.0
    delta_w: float = 0.0


@dataclass(frozen=True)
class WheelRates:
    omega_1: float
    omega_2: float
    omega_3: float
    omega_4: float
    L: float = 0.2  # wheel diameter
    B: float = 0.4  # track


def wheel_to_body(w: WheelRates) -> VelocityCommand:
    if w.L <= 0 or w.B <= 0:
        raise ParameterError(f"wheel diameter and track must be positive (L={w.L}, B={w.B})")
    v = w.L / 4.0 * (w.omega_1 + w.omega_3)
    omega = w.L / (2.0 * w.B) * (w.omega_3 - w.omega_1)
    return VelocityCommand(v, omega)


def body_to_wheel(cmd: VelocityCommand, L: float = 0.2, B: float = 0.4) -> WheelRates:
    """Inverse of :func:`wheel_to_body` under the no-slip pairing."""
    if L <= 0 or B <= 0:
        raise ParameterError(f"wheel diameter and track must be positive (L={L}, B={B})")
    s = 4.0 * cmd.v / L  # omega_1 + omega_3
    d = 2.0 * B * cmd.omega / L  # omega_3 - omega_1
    w1 = 0.5 * (s - d)
    w3 = 0.5 * (s + d)
    return WheelRates(w1, w1, w3, w3, L, B)


def step_kinematics(pose: RobotPose, cmd: VelocityCommand, dt: float) -> RobotPose:
    """Exact constant-twist integration of the unicycle model over ``dt``."""
    if not dt > 0 or not math.isfinite(dt):
        raise ParameterError(f"dt must be positive, got {dt}")
    v, w, th = cmd.v, cmd.omega, pose.theta
    if abs(w) > TWIST_EPS:
        th1 = th + w * dt
        x = pose.x + v / w * (math.sin(th1) - math.sin(th))
        y = pose.y - v / w * (math.cos(th1) - math.cos(th))
    else:
        th1 = th
        x = pose.x + v * math.cos(th) * dt
        y = pose.y + v * math.sin(th) * dt
    return RobotPose(x, y, th1)


def clamp_increments(prev: VelocityCommand, delta: Action) -> VelocityCommand:
    dv = min(max(delta.delta_v, -DV_MAX), DV_MAX)
    dw = min(max(delta.delta_w, -DW_MAX), DW_MAX)
    v = min(max(prev.v + dv, V_MIN), V_MAX)
    w = min(max(prev.omega + dw, -W_MAX), W_MAX)
    return VelocityCommand(v, w)


@dataclass(frozen=True)
class Rect:
    x: float
    y: float
    w: float
    h: float

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.w and self.y <= py <= self.y + self.h


class PedestrianPath:
    """Gerono lemniscate ``(cx + a sin u, cy + b sin u cos u)`` walked at constant speed.

    The curve is reparameterized by arc length through a 2048-node cumulative
    table (Gauss-Legendre per cell). Linear interpolation of the curve parameter
    gives the starting guess, refined by Newton steps inside the cell so the
    walking speed is constant to well below 1e-3 m/s.
    """

    _GL_X, _GL_W = np.polynomial.legendre.leggauss(5)

    def __init__(self, cx: float, cy: float, a: float, b: float,
                 speed: float = 0.7, duration: float = 100.0, samples: int = 2048):
        if a <= 0 or b <= 0 or speed < 0 or duration <= 0:
            raise ParameterError("lemniscate needs a, b, duration > 0 and speed >= 0")
        self.cx, self.cy, self.a, self.b = cx, cy, a, b
        self.speed = speed
        self.duration = duration
        self._u = np.linspace(0.0, 2.0 * math.pi, samples)
        seg = self._arc(self._u[:-1], self._u[1:])
        self._s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self._s[-1])

    def _curve(self, u):
        return (self.cx + self.a * np.sin(u), self.cy + self.b * np.sin(u) * np.cos(u))

    def _tangent(self, u):
        return (self.a * np.cos(u), self.b * np.cos(2.0 * u))

    def _speed(self, u):
        dx, dy = self._tangent(u)
        return np.hypot(dx, dy)

    def _arc(self, u0, u1):
        u0, u1 = np.asarray(u0, dtype=float), np.asarray(u1, dtype=float)
        half = 0.5 * (u1 - u0)
        mid = 0.5 * (u1 + u0)
        nodes = mid[..., None] + half[..., None] * self._GL_X
        return half * (self._speed(nodes) @ self._GL_W)

    def point_at_arclength(self, s: float) -> tuple[float, float, float]:
        s = s % self.length
        k = int(np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, len(self._s) - 2))
        u_k = self._u[k]
        u = float(np.interp(s, self._s, self._u))
        for _ in range(3):
            f = self._s[k] + float(self._arc(u_k, u)) - s
            u -= f / float(self._speed(u))
        x, y = self._curve(u)
        dx, dy = self._tangent(u)
        return float(x), float(y), math.atan2(dy, dx)

    def position(self, t: float) -> tuple[float, float, float]:
        """Pedestrian ``(x, y, heading)`` at time ``t``."""
        if t < -1e-12 or t > self.duration + 1e-9:
            raise EpisodeOver(f"t={t} outside [0, {self.duration}]")
        return self.point_at_arclength(self.speed * min(max(t, 0.0), self.duration))

    def sample(self, n: int = 400) -> np.ndarray:
        """Closed polyline of the full curve, shape (n, 2)."""
        u = np.linspace(0.0, 2.0 * math.pi, n)
        x, y = self._curve(u)
        return np.column_stack([x, y])


@dataclass
class WorldMap:
    width: float = 21.0
    height: float = 12.0
    obstacles: list[Rect] = field(default_factory=list)
    path: dict = field(default_factory=lambda: {"type": "lemniscate", "cx": 10.5, "cy": 6.0, "a": 7.5, "b": 8.0})
    robot_spawn: dict = field(default_factory=lambda: {"x": 10.5, "y": 6.0, "theta": 0.0})

    def __post_init__(self):
        for r in self.obstacles:
            if r.x < 0 or r.y < 0 or r.x + r.w > self.width or r.y + r.h > self.height:
                raise ParameterError(f"obstacle {r} outside {self.width}x{self.height} map")
        sp = self.robot_spawn
        if self.blocked(sp["x"], sp["y"]):
            raise ParameterError(f"robot spawn ({sp['x']}, {sp['y']}) is blocked")

    def pedestrian_path(self, speed: float = 0.7, duration: float = 100.0) -> PedestrianPath:
        p = self.path
        if p.get("type", "lemniscate") != "lemniscate":
            raise ParameterError(f"unsupported path type {p.get('type')!r}")
        return PedestrianPath(p["cx"], p["cy"], p["a"], p["b"], speed=speed, duration=duration)

    def blocked(self, x: float, y: float) -> bool:
        if not (0.0 < x < self.width and 0.0 < y < self.height):
            return True
        return any(r.contains(x, y) for r in self.obstacles)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "obstacles": [{"x": r.x, "y": r.y, "w": r.w, "h": r.h} for r in self.obstacles],
            "path": dict(self.path),
            "robot_spawn": dict(self.robot_spawn),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldMap":
        return cls(
            width=float(d["width"]),
            height=float(d["height"]),
            obstacles=[Rect(o["x"], o["y"], o["w"], o["h"]) for o in d.get("obstacles", [])],
            path=dict(d["path"]),
            robot_spawn=dict(d.get("robot_spawn", {"x": d["width"] / 2, "y": d["height"] / 2, "theta": 0.0})),
        )

    @classmethod
    def load(cls, path: str | Path = DEFAULT_MAP) -> "WorldMap":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class LidarConfig:
    n_beams: int = 181
    span: float = math.pi
    max_range: float = 5.0


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray
    angles: np.ndarray  # body frame, 0 = ahead, CCW positive
    max_range: float
    d_obs: float
    theta_obs: float
    collision: bool = False


def _ray_rect_hits(ox, oy, dx, dy, xmin, ymin, xmax, ymax):
    """Slab test; returns (t_enter, t_exit) arrays of shape (beams, rects)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_x = 1.0 / dx[:, None]
        inv_y = 1.0 / dy[:, None]
        tx1 = (xmin[None, :] - ox) * inv_x
        tx2 = (xmax[None, :] - ox) * inv_x
        ty1 = (ymin[None, :] - oy) * inv_y
        ty2 = (ymax[None, :] - oy) * inv_y
    t_enter = np.maximum(np.minimum(tx1, tx2), np.minimum(ty1, ty2))
    t_exit = np.minimum(np.maximum(tx1, tx2), np.maximum(ty1, ty2))
    return t_enter, t_exit


def lidar_scan(world: WorldMap, pose: RobotPose, cfg: LidarConfig = LidarConfig()) -> LidarScan:
    """Ray-cast against obstacles and the map boundary.

    ``d_obs``/``theta_obs`` are the shortest beam and its body-frame bearing; when
    nothing is within ``max_range`` the bearing is reported as 0.
    """
    half = cfg.span / 2.0
    angles = np.linspace(-half, half, cfg.n_beams) if cfg.n_beams > 1 else np.zeros(1)
    world_angles = pose.theta + angles
    dx = np.cos(world_angles)
    dy = np.sin(world_angles)
    dx = np.where(np.abs(dx) < 1e-15, 1e-15, dx)
    dy = np.where(np.abs(dy) < 1e-15, 1e-15, dy)
    ranges = np.full(cfg.n_beams, cfg.max_range)

    collision = world.blocked(pose.x, pose.y)
    if collision:
        return LidarScan(np.zeros(cfg.n_beams), angles, cfg.max_range, 0.0, 0.0, True)

    # boundary: origin inside, so exit distance is the wall hit
    _, t_exit = _ray_rect_hits(pose.x, pose.y, dx, dy, np.array([0.0]), np.array([0.0]),
                               np.array([world.width]), np.array([world.height]))
    ranges = np.minimum(ranges, t_exit[:, 0])
    if world.obstacles:
        arr = np.array([[r.x, r.y, r.x + r.w, r.y + r.h] for r in world.obstacles])
        t_enter, t_exit = _ray_rect_hits(pose.x, pose.y, dx, dy, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
        hit = (t_exit >= t_enter) & (t_enter > 0.0)
        t_hit = np.where(hit, t_enter, np.inf).min(axis=1)
        ranges = np.minimum(ranges, t_hit)
    ranges = np.minimum(ranges, cfg.max_range)
    i = int(np.argmin(ranges))
    d_obs = float(ranges[i])
    theta_obs = float(angles[i]) if d_obs < cfg.max_range else 0.0
    return LidarScan(ranges, angles, cfg.max_range, d_obs, theta_obs, False)


class TerminationStatus(enum.Enum):
    RUNNING = "Running"
    GOAL_REACHED = "GoalReached"
    FEATURE_LOST = "FeatureLost"
    DISTANCE_BOUND = "DistanceBound"
    OBSTACLE_TOO_CLOSE = "ObstacleTooClose"

    @property
    def terminal(self) -> bool:
        return self is not TerminationStatus.RUNNING


@dataclass(frozen=True)
class WorldSnapshot:
    d_ped: float
    d_obs: float
    lost_duration: float
    ped_time: float
    duration: float = 100.0


@dataclass(frozen=True)
class TerminationLimits:
    lost_max: float = 4.0
    d_ped_min: float = 1.0
    d_ped_max: float = 3.0
    d_obs_min: float = 0.5


def check_termination(snap: WorldSnapshot, limits: TerminationLimits = TerminationLimits()) -> TerminationStatus:
    # order matters: first matching condition wins
    if snap.ped_time >= snap.duration - 1e-9:
        return TerminationStatus.GOAL_REACHED
    if snap.lost_duration > limits.lost_max:
        return TerminationStatus.FEATURE_LOST
    if snap.d_ped > limits.d_ped_max or snap.d_ped < limits.d_ped_min:
        return TerminationStatus.DISTANCE_BOUND
    if snap.d_obs < limits.d_obs_min:
        return TerminationStatus.OBSTACLE_TOO_CLOSE
    return TerminationStatus.RUNNING
