"""Synthetic event camera: projection, silhouettes, event synthesis, windows, SAE, homography."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .world import RobotPose

WIDTH, HEIGHT = 346, 260

EVENT_DTYPE = np.dtype([("t", "<i8"), ("x", "<i2"), ("y", "<i2"), ("p", "i1")])


class Event(NamedTuple):
    x: int
    y: int
    t: int  # microseconds
    p: int  # -1 or +1


class SaeContractError(ValueError):
    pass


class DegeneratePointError(ValueError):
    pass


def empty_events() -> np.ndarray:
    return np.zeros(0, dtype=EVENT_DTYPE)


def events_from_records(records) -> np.ndarray:
    """Pack ``Event`` tuples (or ``(x, y, t, p)`` tuples) into a structured array."""
    out = np.zeros(len(records), dtype=EVENT_DTYPE)
    for i, (x, y, t, p) in enumerate(records):
        out[i] = (t, x, y, p)
    return out


@dataclass(frozen=True)
class CameraModel:
    width: int = WIDTH
    height: int = HEIGHT
    focal: float = 200.0
    cx: float = 173.0
    cy: float = 130.0
    mount_height: float = 0.8
    forward_offset: float = 0.0
    near: float = 0.1

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def to_camera(self, pose: RobotPose, x: float, y: float, z: float) -> tuple[float, float, float]:
        """World point -> camera frame (X right, Y down, Z forward)."""
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        dx, dy = x - pose.x, y - pose.y
        fwd = c * dx + s * dy - self.forward_offset
        left = -s * dx + c * dy
        return -left, self.mount_height - z, fwd

    def in_bounds(self, u: float, v: float) -> bool:
        return -0.5 <= u < self.width - 0.5 and -0.5 <= v < self.height - 0.5


def project_point(cam: CameraModel, pose: RobotPose, point) -> tuple[float, float] | None:
    """Pinhole projection of a world point ``(x, y[, z])``; None when not visible."""
    x, y = point[0], point[1]
    z = point[2] if len(point) > 2 else cam.mount_height
    X, Y, Z = cam.to_camera(pose, x, y, z)
    if Z <= 1e-9:
        return None
    u = cam.cx + cam.focal * X / Z
    v = cam.cy + cam.focal * Y / Z
    if not cam.in_bounds(u, v):
        return None
    return u, v


def silhouette_extent(cam: CameraModel, pose: RobotPose, ped_xy, size=(1.7, 0.5)):
    """Inclusive pixel box ``(c0, c1, r0, r1)`` of the projected pedestrian, or None.

    The pedestrian is an upright rectangle facing the image plane at the depth of
    its center; pixel ``i`` is covered when its center lies inside the projection.
    """
    tall, wide = size
    X, _, Z = cam.to_camera(pose, ped_xy[0], ped_xy[1], 0.0)
    if Z <= cam.near:
        return None
    f = cam.focal
    u0 = cam.cx + f * (X - wide / 2.0) / Z
    u1 = cam.cx + f * (X + wide / 2.0) / Z
    v0 = cam.cy + f * (cam.mount_height - tall) / Z
    v1 = cam.cy + f * cam.mount_height / Z
    c0, c1 = max(math.ceil(u0), 0), min(math.floor(u1), cam.width - 1)
    r0, r1 = max(math.ceil(v0), 0), min(math.floor(v1), cam.height - 1)
    if c0 > c1 or r0 > r1:
        return None
    return c0, c1, r0, r1


def render_silhouette(cam: CameraModel, pose: RobotPose, ped_xy, size=(1.7, 0.5)) -> np.ndarray:
    img = np.zeros((cam.height, cam.width), dtype=np.uint8)
    ext = silhouette_extent(cam, pose, ped_xy, size)
    if ext is not None:
        c0, c1, r0, r1 = ext
        img[r0:r1 + 1, c0:c1 + 1] = 1
    return img


_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M2
    z = (z ^ (z >> np.uint64(27))) * _M3
    return z ^ (z >> np.uint64(31))


def _texture_hash(r0: int, r1: int, c0: int, c1: int, period_us: int):
    yy, xx = np.mgrid[r0:r1, c0:c1].astype(np.uint64)
    with np.errstate(over="ignore"):
        base = _mix(xx * _M1 + yy * _M2 + np.uint64(1))
    return base, base % np.uint64(period_us)


def _texture_bits(base, phase, t_us: int, period_us: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        epoch = ((np.int64(t_us) + phase.astype(np.int64)) // np.int64(period_us)).astype(np.uint64)
        return (_mix(base ^ (epoch * _M3)) >> np.uint64(63)).astype(np.uint8)


def apply_gait_texture(img: np.ndarray, t_us: int, period_us: int = 4000) -> np.ndarray:
    """Mask a silhouette with a body texture that re-draws as the person walks.

    Each pixel re-draws a pseudo-random on/off bit once per ``period_us`` at its own
    phase, so a tracked pedestrian keeps emitting events even with no relative
    motion. Stateless in ``t_us``; no RNG involved.
    """
    rows = np.flatnonzero(img.any(axis=1))
    if rows.size == 0:
        return img.copy()
    cols = np.flatnonzero(img.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    base, phase = _texture_hash(r0, r1, c0, c1, period_us)
    out = np.zeros_like(img)
    out[r0:r1, c0:c1] = img[r0:r1, c0:c1] & _texture_bits(base, phase, t_us, period_us)
    return out


def synthesize_events(prev: np.ndarray, curr: np.ndarray, t0: int, t1: int,
                      noise_rate: float = 0.0, rng: np.random.Generator | None = None,
                      origin: tuple[int, int] = (0, 0), sensor_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Occupancy-change events between two frames plus Poisson background noise.

    A pixel turning on (0 -> 1) darkens and emits polarity -1; turning off emits +1.
    Timestamps are uniform integers in ``(t0, t1]``; output is time-sorted.
    ``origin`` (col, row) places cropped frames on the sensor, whose full
    ``sensor_shape`` (rows, cols) receives the background noise.
    """
    if t1 <= t0:
        raise ValueError("t1 must be after t0")
    if prev.shape != curr.shape:
        raise ValueError("frame shapes differ")
    if rng is None:
        rng = np.random.default_rng(0)
    ys, xs = np.nonzero(prev != curr)
    n = xs.size
    h, w = sensor_shape or curr.shape
    n_noise = rng.poisson(noise_rate * (t1 - t0) * 1e-6 * h * w) if noise_rate > 0 else 0
    out = np.empty(n + n_noise, dtype=EVENT_DTYPE)
    out["x"][:n] = xs + origin[0]
    out["y"][:n] = ys + origin[1]
    out["p"][:n] = np.where(curr[ys, xs] > prev[ys, xs], -1, 1)
    if n_noise:
        out["x"][n:] = rng.integers(0, w, n_noise)
        out["y"][n:] = rng.integers(0, h, n_noise)
        out["p"][n:] = rng.choice(np.array([-1, 1], dtype=np.int8), n_noise)
    out["t"] = rng.integers(t0 + 1, t1 + 1, n + n_noise)
    return out[np.argsort(out["t"], kind="stable")]


class EventCameraSim:
    """Renders the textured pedestrian at a fixed frame period and emits events.

    Frames are rasterized only inside the union of the silhouette boxes over the
    requested span; noise still covers the whole sensor.
    """

    def __init__(self, cam: CameraModel, noise_rate: float = 0.1, frame_us: int = 1000,
                 texture_period_us: int = 4000, size=(1.7, 0.5)):
        self.cam = cam
        self.noise_rate = noise_rate
        self.frame_us = frame_us
        self.texture_period_us = texture_period_us
        self.size = size

    def events(self, scene, t_start_us: int, t_end_us: int, rng: np.random.Generator) -> np.ndarray:
        """Events in ``(t_start_us, t_end_us]``; ``scene(t_us)`` gives ``(robot_pose, ped_xy)``."""
        cam = self.cam
        times = list(range(t_start_us, t_end_us + 1, self.frame_us))
        if times[-1] != t_end_us:
            times.append(t_end_us)
        extents = [silhouette_extent(cam, *scene(t), self.size) for t in times]
        vis = [e for e in extents if e is not None]
        if vis:
            c0 = min(e[0] for e in vis)
            c1 = max(e[1] for e in vis) + 1
            r0 = min(e[2] for e in vis)
            r1 = max(e[3] for e in vis) + 1
            base, phase = _texture_hash(r0, r1, c0, c1, self.texture_period_us)
        else:
            c0, c1, r0, r1 = 0, 1, 0, 1
        frames = []
        for t, e in zip(times, extents):
            img = np.zeros((r1 - r0, c1 - c0), dtype=np.uint8)
            if e is not None:
                img[e[2] - r0:e[3] - r0 + 1, e[0] - c0:e[1] - c0 + 1] = 1
                img &= _texture_bits(base, phase, t, self.texture_period_us)
            frames.append(img)
        chunks = [
            synthesize_events(frames[k], frames[k + 1], times[k], times[k + 1], self.noise_rate, rng,
                              origin=(c0, r0), sensor_shape=(cam.height, cam.width))
            for k in range(len(times) - 1)
        ]
        return np.concatenate(chunks) if chunks else empty_events()


class EventStream:
    """Time-ordered event buffer with a bounded retention horizon (microseconds)."""

    def __init__(self, horizon_us: int | None = None):
        self.horizon_us = horizon_us
        self._ev = empty_events()

    def __len__(self) -> int:
        return len(self._ev)

    @property
    def events(self) -> np.ndarray:
        return self._ev

    def append(self, events: np.ndarray) -> None:
        if len(events) == 0:
            return
        t = events["t"]
        if np.any(np.diff(t) < 0) or (len(self._ev) and t[0] < self._ev["t"][-1]):
            raise ValueError("events must be appended in non-decreasing time order")
        self._ev = np.concatenate([self._ev, events]) if len(self._ev) else events.copy()
        if self.horizon_us is not None:
            cut = np.searchsorted(self._ev["t"], self._ev["t"][-1] - self.horizon_us, side="left")
            if cut:
                self._ev = self._ev[cut:]

    def clear(self) -> None:
        self._ev = empty_events()


def _as_array(stream) -> np.ndarray:
    return stream.events if isinstance(stream, EventStream) else stream


def window_by_time(stream, t: int, dt: int) -> np.ndarray:
    """Events with ``t - dt < t_k <= t``."""
    if dt <= 0:
        raise ValueError("window length must be positive")
    ev = _as_array(stream)
    ts = ev["t"]
    lo = np.searchsorted(ts, t - dt, side="right")
    hi = np.searchsorted(ts, t, side="right")
    return ev[lo:hi]


def window_by_count(stream, t: int, n: int) -> np.ndarray:
    """The most recent ``min(n, available)`` events at or before ``t``."""
    if n <= 0:
        raise ValueError("event count must be positive")
    ev = _as_array(stream)
    hi = np.searchsorted(ev["t"], t, side="right")
    return ev[max(0, hi - n):hi]


@dataclass(frozen=True)
class SaeFrame:
    neg: np.ndarray
    pos: np.ndarray
    composite: np.ndarray
    t_init: int
    dt: int


def build_sae(events: np.ndarray, t_init: int, dt: int, width: int = WIDTH, height: int = HEIGHT) -> SaeFrame:
    """Surface of active events scaled to bytes, one channel per polarity.

    Each pixel holds ``round(255 * (t_e - t_init) / dt)`` (half up) for its last
    event; the composite is the per-pixel max of both channels.
    """
    if dt <= 0:
        raise SaeContractError("window length must be positive")
    neg = np.zeros((height, width), dtype=np.uint8)
    pos = np.zeros((height, width), dtype=np.uint8)
    if len(events):
        t = events["t"]
        if t.min() < t_init or t.max() > t_init + dt:
            raise SaeContractError(f"event outside window [{t_init}, {t_init + dt}]")
        x = events["x"].astype(np.intp)
        y = events["y"].astype(np.intp)
        if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
            raise SaeContractError("event pixel outside the sensor")
        val = ((t - t_init) * 510 + dt) // (2 * dt)
        val = val.astype(np.uint8)
        p = events["p"]
        for ch, sel in ((neg, p < 0), (pos, p > 0)):
            # values are monotone in t, so max == value of the last event
            np.maximum.at(ch, (y[sel], x[sel]), val[sel])
    return SaeFrame(neg, pos, np.maximum(neg, pos), t_init, dt)


class Homography:
    def __init__(self, matrix=None):
        m = np.eye(3) if matrix is None else np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is singular")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        self.matrix = m

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


def apply_homography(H: Homography, pixel) -> tuple[float, float]:
    m = H.matrix
    u, v = float(pixel[0]), float(pixel[1])
    w = m[2, 0] * u + m[2, 1] * v + m[2, 2]
    if abs(w) < 1e-12:
        raise DegeneratePointError(f"pixel {pixel} maps to infinity")
    return ((m[0, 0] * u + m[0, 1] * v + m[0, 2]) / w,
            (m[1, 0] * u + m[1, 1] * v + m[1, 2]) / w)


def estimate_depth(true_range: float, pixel, H: Homography | None = None, sigma: float = 0.02,
                   rng: np.random.Generator | None = None,
                   width: int = WIDTH, height: int = HEIGHT) -> float | None:
    """Simulated depth-camera distance at the box center; None when it falls off the depth frame."""
    u, v = apply_homography(H or Homography(), pixel)
    if not (0 <= u < width and 0 <= v < height):
        return None
    d = true_range
    if sigma > 0:
        d += sigma * (rng if rng is not None else np.random.default_rng(0)).standard_normal()
    return max(d, 0.1)


def write_events_csv(path: str | Path, events: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("t_us,x,y,p\n")
        for e in events:
            f.write(f"{int(e['t'])},{int(e['x'])},{int(e['y'])},{int(e['p'])}\n")


def read_events_csv(path: str | Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    out = np.zeros(len(data), dtype=EVENT_DTYPE)
    if len(data):
        out["t"], out["x"], out["y"], out["p"] = data[:, 0], data[:, 1], data[:, 2], data[:, 3]
    return out


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError("not a binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw[m.end():m.end() + w * h], dtype=np.uint8).reshape(h, w)
