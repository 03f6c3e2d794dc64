"""Pedestrian detection, state assembly and visibility tracking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .events import WIDTH, CameraModel, SaeFrame, silhouette_extent, write_pgm
from .world import LidarScan, RobotPose, VelocityCommand

STATE_DIM = 6
# v, omega, x_box, d_ped, d_obs, theta_obs
STATE_SCALE = np.array([1.0, 1.0, 1.0 / WIDTH, 1.0 / 3.0, 1.0 / 5.0, 1.0 / np.pi])


@dataclass(frozen=True)
class BoundingBox:
    x_box: float
    y_box: float
    width: int
    height: int
    confidence: float = 1.0

    @classmethod
    def from_extent(cls, c0: int, c1: int, r0: int, r1: int, confidence: float = 1.0) -> "BoundingBox":
        return cls((c0 + c1) / 2.0, (r0 + r1) / 2.0, c1 - c0 + 1, r1 - r0 + 1, confidence)


def detect_pedestrian_sae(frame: SaeFrame, threshold: int = 50, min_area: int = 15) -> BoundingBox | None:
    """Box around the largest 4-connected blob of the thresholded composite SAE.

    Stand-in for a learned detector. Returns None when no blob reaches ``min_area``.
    """
    mask = frame.composite >= threshold
    if not mask.any():
        return None
    labels, n = ndimage.label(mask)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    areas[0] = 0
    best = int(np.argmax(areas))
    area = int(areas[best])
    if area < min_area:
        return None
    rs, cs = ndimage.find_objects(labels, max_label=best)[best - 1]
    box = BoundingBox.from_extent(cs.start, cs.stop - 1, rs.start, rs.stop - 1)
    return BoundingBox(box.x_box, box.y_box, box.width, box.height, area / (box.width * box.height))


def oracle_detect(cam: CameraModel, pose: RobotPose, ped_xy, size=(1.7, 0.5)) -> BoundingBox | None:
    """Ground-truth box of the projected silhouette (ablation detector)."""
    ext = silhouette_extent(cam, pose, ped_xy, size)
    if ext is None:
        return None
    return BoundingBox.from_extent(*ext)


def draw_overlay(frame: SaeFrame, box: BoundingBox | None) -> np.ndarray:
    """Composite SAE with the detection box outlined in white."""
    img = frame.composite.copy()
    if box is not None:
        h, w = img.shape
        c0 = max(int(round(box.x_box - (box.width - 1) / 2)), 0)
        r0 = max(int(round(box.y_box - (box.height - 1) / 2)), 0)
        c1 = min(c0 + box.width - 1, w - 1)
        r1 = min(r0 + box.height - 1, h - 1)
        img[r0, c0:c1 + 1] = img[r1, c0:c1 + 1] = 255
        img[r0:r1 + 1, c0] = img[r0:r1 + 1, c1] = 255
    return img


def write_overlay(path, frame: SaeFrame, box: BoundingBox | None) -> None:
    write_pgm(path, draw_overlay(frame, box))


@dataclass(frozen=True)
class StateVector:
    v_r: float
    omega_r: float
    x_box: float
    d_ped: float
    d_obs: float
    theta_obs: float

    def raw(self) -> np.ndarray:
        return np.array([self.v_r, self.omega_r, self.x_box, self.d_ped, self.d_obs, self.theta_obs])

    def normalized(self) -> np.ndarray:
        return self.raw() * STATE_SCALE

    @classmethod
    def from_normalized(cls, arr) -> "StateVector":
        return cls(*(np.asarray(arr, dtype=float) / STATE_SCALE).tolist())


def build_state(cmd: VelocityCommand, x_box: float, d_ped: float, scan: LidarScan | tuple[float, float],
                normalize: bool = False) -> np.ndarray:
    """6-D state ``[v, omega, x_box, d_ped, d_obs, theta_obs]``."""
    if isinstance(scan, LidarScan):
        d_obs, theta_obs = scan.d_obs, scan.theta_obs
    else:
        d_obs, theta_obs = scan
    s = StateVector(cmd.v, cmd.omega, x_box, d_ped, d_obs, theta_obs)
    out = s.normalized() if normalize else s.raw()
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite state {out}")
    return out


@dataclass
class VisibilityTracker:
    last_detection: float = 0.0
    lost_duration: float = 0.0

    def update(self, detected: bool, now: float) -> float:
        if now < self.last_detection:
            raise ValueError("time went backwards")
        if detected:
            self.last_detection = now
            self.lost_duration = 0.0
        else:
            self.lost_duration = now - self.last_detection
        return self.lost_duration


def update_visibility(tracker: VisibilityTracker, detected: bool, now: float) -> VisibilityTracker:
    tracker.update(detected, now)
    return tracker
