"""Rigid-body math shared by the whole pipeline.

Conventions (fixed once, used everywhere):

* Grasp rotations are ``R = Rz(theta) @ Ry(beta) @ Rx(gamma)`` in the camera
  frame. At ``theta = beta = gamma = 0`` the gripper approach axis is camera
  +z, the closing axis is camera +x and the finger-plane normal is camera +y.
* All three angles live in ``[-pi/2, pi/2]``; rotations outside that box are
  rejected rather than wrapped.
* The camera follows the standard pinhole model with +z forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RangeError, UnrepresentableError

HALF_PI = math.pi / 2.0

# Offset box of a region-frame grasp: every component of dt stays inside
# [-DT_CLAMP, DT_CLAMP] meters.
DT_CLAMP = 0.02


@dataclass
class GraspPose:
    """A 6-DoF parallel-jaw grasp in the camera frame."""

    center: np.ndarray  # (3,) meters
    theta: float  # in-plane rotation about the optical axis, radians
    beta: float
    gamma: float
    width: float  # jaw opening, meters
    score: float = 0.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)

    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.theta, self.beta, self.gamma)

    def closing_axis(self) -> np.ndarray:
        return self.rotation()[:, 0]

    def approach_axis(self) -> np.ndarray:
        return self.rotation()[:, 2]

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "theta": float(self.theta),
            "beta": float(self.beta),
            "gamma": float(self.gamma),
            "width": float(self.width),
            "score": float(self.score),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraspPose":
        return cls(
            center=np.asarray(d["center"], dtype=float),
            theta=float(d["theta"]),
            beta=float(d["beta"]),
            gamma=float(d["gamma"]),
            width=float(d["width"]),
            score=float(d.get("score", 0.0)),
        )


@dataclass
class RegionGrasp:
    """A grasp expressed relative to a region-patch center."""

    dt: np.ndarray  # (3,) offset from the patch center, meters
    theta: float
    beta: float
    gamma: float
    width: float
    score: float = 0.0

    def __post_init__(self):
        self.dt = np.asarray(self.dt, dtype=float).reshape(3)


@dataclass
class CameraModel:
    """Pinhole camera with a rigid camera-to-world pose."""

    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    def cam_to_world(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.position

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return (p - self.position) @ self.rotation

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "pose": [[float(v) for v in row] for row in self.pose],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            pose=np.asarray(d["pose"], dtype=float),
        )


@dataclass
class GripperModel:
    """Parallel-jaw gripper dimensions, defaulting to a 2F-85 class gripper."""

    max_width: float = 0.085
    finger_depth: float = 0.04
    finger_thickness: float = 0.01
    palm_depth: float = 0.02
    palm_width: float = 0.105

    def __post_init__(self):
        for name in ("max_width", "finger_depth", "finger_thickness", "palm_depth", "palm_width"):
            if getattr(self, name) <= 0:
                raise DomainError(f"gripper dimension {name} must be positive")


def _check_angle(name: str, value: float) -> None:
    if not (-HALF_PI - 1e-12 <= value <= HALF_PI + 1e-12):
        raise RangeError(f"{name}={value!r} outside [-pi/2, pi/2]")


def euler_to_rotation(theta: float, beta: float, gamma: float) -> np.ndarray:
    """Compose Rz(theta) @ Ry(beta) @ Rx(gamma) for half-range angles."""
    _check_angle("theta", theta)
    _check_angle("beta", beta)
    _check_angle("gamma", gamma)
    ct, st = math.cos(theta), math.sin(theta)
    cb, sb = math.cos(beta), math.sin(beta)
    cg, sg = math.cos(gamma), math.sin(gamma)
    return np.array(
        [
            [ct * cb, ct * sb * sg - st * cg, ct * sb * cg + st * sg],
            [st * cb, st * sb * sg + ct * cg, st * sb * cg - ct * sg],
            [-sb, cb * sg, cb * cg],
        ]
    )


def rotation_to_euler(R: np.ndarray) -> tuple[float, float, float]:
    """Invert :func:`euler_to_rotation`.

    Raises:
        DomainError: if R is not a proper rotation matrix.
        UnrepresentableError: if no half-range (theta, beta, gamma) produces R.
    """
    R = np.asarray(R, dtype=float).reshape(3, 3)
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-8 or np.linalg.det(R) < 0:
        raise DomainError("R is not orthonormal with det +1")
    sb = -R[2, 0]
    beta = math.asin(min(1.0, max(-1.0, sb)))
    cb = math.cos(beta)
    if cb < 1e-9:
        # Gimbal boundary: only theta -/+ gamma is determined; pin gamma = 0.
        gamma = 0.0
        theta = math.atan2(-R[0, 1], R[1, 1]) if sb > 0 else math.atan2(R[0, 1], R[1, 1])
    else:
        theta = math.atan2(R[1, 0], R[0, 0])
        gamma = math.atan2(R[2, 1], R[2, 2])
    for v in (theta, gamma):
        if not (-HALF_PI - 1e-9 <= v <= HALF_PI + 1e-9):
            raise UnrepresentableError("rotation requires theta or gamma beyond pi/2")
    if np.max(np.abs(euler_to_rotation(theta, beta, gamma) - R)) > 1e-6:
        raise UnrepresentableError("rotation is not reachable within half-range angles")
    return theta, beta, gamma


def rotation_geodesic_distance(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Angle of the relative rotation between two rotation matrices."""
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def project(point: np.ndarray, cam: CameraModel) -> tuple:
    """Project camera-frame point(s) to pixel coordinates (u, v)."""
    p = np.asarray(point, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise DomainError("cannot project points with non-positive depth")
    u = cam.cx + cam.fx * p[..., 0] / z
    v = cam.cy + cam.fy * p[..., 1] / z
    if p.ndim == 1:
        return float(u), float(v)
    return u, v


def unproject(u, v, z, cam: CameraModel) -> np.ndarray:
    """Lift pixel coordinates at depth z (meters) into the camera frame."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("cannot unproject with non-positive depth")
    x = (u - cam.cx) * z / cam.fx
    y = (v - cam.cy) * z / cam.fy
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def to_region_frame(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Translate camera-frame points so the patch center becomes the origin."""
    return np.asarray(points, dtype=float) - np.asarray(center, dtype=float)


def from_region_frame(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=float) + np.asarray(center, dtype=float)


def region_to_camera_grasp(g_p: RegionGrasp, patch_center: np.ndarray) -> GraspPose:
    """Anchor a region-frame grasp back onto its patch center."""
    center = np.asarray(patch_center, dtype=float) + g_p.dt
    return GraspPose(
        center=center,
        theta=g_p.theta,
        beta=g_p.beta,
        gamma=g_p.gamma,
        width=g_p.width,
        score=g_p.score,
    )
