"""Camera model, pose conventions, and pose normalization.

Conventions used everywhere in this package:

- Camera frame: origin at the pinhole, x right, y down, z forward
  (into the scene). Units are mm at API boundaries, degrees for angles;
  radians appear only inside trigonometric kernels.
- A shaft pose is the tip position (x, y, z) plus pitch and yaw. Pitch
  is measured from the image plane, so pitch 90 points the shaft axis
  along the optical axis away from the camera; yaw is the azimuth of
  the axis about the optical axis. The shaft body extends from the tip
  backward along the negative axis direction. Roll is unobservable by
  rotational symmetry and is not modeled.
- Pixel coordinates: origin at the top-left image corner, pixel centers
  at integer + 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

POSE_DIMS = ("x", "y", "z", "pitch", "yaw")


@dataclass
class ShaftPose:
    """5-DOF pose of a shaft tip in the camera frame (mm / degrees)."""

    x: float
    y: float
    z: float
    pitch: float
    yaw: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.pitch, self.yaw], dtype=np.float64)

    @classmethod
    def from_array(cls, v) -> "ShaftPose":
        x, y, z, pitch, yaw = (float(c) for c in v)
        return cls(x, y, z, pitch, yaw)

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in POSE_DIMS}

    @classmethod
    def from_dict(cls, d: dict) -> "ShaftPose":
        return cls(**{k: float(d[k]) for k in POSE_DIMS})


@dataclass
class PoseRanges:
    """Per-dimension (min, max) sampling ranges for shaft poses.

    Defaults are the generation ranges used throughout: x, y in
    [-20, 20] mm, z in [10, 40] mm, pitch in [50, 90] degrees, yaw in
    [0, 358] degrees.
    """

    x: tuple[float, float] = (-20.0, 20.0)
    y: tuple[float, float] = (-20.0, 20.0)
    z: tuple[float, float] = (10.0, 40.0)
    pitch: tuple[float, float] = (50.0, 90.0)
    yaw: tuple[float, float] = (0.0, 358.0)

    def __post_init__(self) -> None:
        for name in POSE_DIMS:
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"pose range {name}: min {lo} must be < max {hi}")

    @property
    def mins(self) -> np.ndarray:
        return np.array([getattr(self, k)[0] for k in POSE_DIMS], dtype=np.float64)

    @property
    def maxs(self) -> np.ndarray:
        return np.array([getattr(self, k)[1] for k in POSE_DIMS], dtype=np.float64)

    def midpoint(self) -> ShaftPose:
        return ShaftPose.from_array((self.mins + self.maxs) / 2.0)


@dataclass
class CameraModel:
    """Pinhole camera with a square pixel grid and symmetric FOV.

    The focal length in pixels is derived from the horizontal field of
    view: focal = (width / 2) / tan(fov / 2). The principal point
    defaults to the image center.
    """

    width: int = 64
    height: int = 64
    horizontal_fov_deg: float = 95.0
    principal_point: tuple[float, float] | None = field(default=None)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("camera dimensions must be positive")
        if not 0.0 < self.horizontal_fov_deg < 180.0:
            raise ConfigError("horizontal FOV must be in (0, 180) degrees")
        if self.principal_point is None:
            self.principal_point = (self.width / 2.0, self.height / 2.0)

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.horizontal_fov_deg) / 2.0)


def direction_from_angles(pitch_deg: float, yaw_deg: float) -> np.ndarray:
    """Unit axis direction for the given pitch/yaw (degrees).

    d = (cos(pitch) cos(yaw), cos(pitch) sin(yaw), sin(pitch)); for
    pitch > 0 the axis points away from the camera. The shaft body
    occupies the segment from the tip backward along -d.
    """
    phi = math.radians(pitch_deg)
    psi = math.radians(yaw_deg)
    return np.array(
        [math.cos(phi) * math.cos(psi), math.cos(phi) * math.sin(psi), math.sin(phi)],
        dtype=np.float64,
    )


def project_point(camera: CameraModel, p) -> tuple[float, float]:
    """Project a camera-frame point (mm) to pixel coordinates.

    Raises ConfigError for points at or behind the camera plane.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if z <= 0.0:
        raise ConfigError(f"cannot project point with z <= 0 (got z={z})")
    cx, cy = camera.principal_point
    f = camera.focal
    return (cx + f * x / z, cy + f * y / z)


def normalize_pose(pose: ShaftPose, ranges: PoseRanges) -> np.ndarray:
    """Map a pose linearly into [-1, 1] per dimension.

    Out-of-range inputs are allowed and map outside [-1, 1].
    """
    v = pose.as_array()
    lo, hi = ranges.mins, ranges.maxs
    return 2.0 * (v - lo) / (hi - lo) - 1.0


def denormalize_pose(v, ranges: PoseRanges) -> ShaftPose:
    """Exact inverse of :func:`normalize_pose` (up to float rounding)."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = ranges.mins, ranges.maxs
    return ShaftPose.from_array((v + 1.0) / 2.0 * (hi - lo) + lo)


def yaw_error(a_deg: float, b_deg: float) -> float:
    """Circular distance between two yaw angles, in [0, 180] degrees.

    Evaluation-only metric; the training loss uses plain normalized
    differences.
    """
    d = abs(a_deg - b_deg) % 360.0
    return min(d, 360.0 - d)
