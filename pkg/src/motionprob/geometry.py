"""Camera model, rigid-body transforms, and the image/depth containers shared
by the rest of the package.

Conventions used everywhere:
  - pixel (u, v) samples the continuous image point (u, v) exactly (no +0.5),
  - camera frame is x-right, y-down, z-forward,
  - poses stored as rotation matrix + translation vector; camera poses in
    trajectories are camera-to-world,
  - invalid depth is carried by a boolean validity mask, never by sentinels.

All container types are immutable after construction (arrays are copied and
marked read-only), so they can be shared freely across worker processes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-9


class GeometryError(ValueError):
    pass


class InvalidDepthError(GeometryError):
    """Backprojection was asked for with a non-positive depth."""


class BehindCameraError(GeometryError):
    """Projection was asked for with a point at or behind the camera plane."""


def _readonly(a: np.ndarray, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters for a rectified image."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y) and np.isfinite(self.z)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @staticmethod
    def from_array(a) -> "Point3":
        a = np.asarray(a, dtype=float).reshape(3)
        return Point3(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHONORMAL_TOL, rtol=0.0):
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise GeometryError(f"rotation determinant {np.linalg.det(R)} != 1")
        object.__setattr__(self, "rotation", _readonly(R, float))
        object.__setattr__(self, "translation", _readonly(t, float))

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "PoseSE3":
        T = np.asarray(T, dtype=float)
        return PoseSE3(T[:3, :3], T[:3, 3])

    @staticmethod
    def from_quaternion_xyzw(q, t) -> "PoseSE3":
        from scipy.spatial.transform import Rotation

        return PoseSE3(Rotation.from_quat(np.asarray(q, dtype=float)).as_matrix(), t)

    def quaternion_xyzw(self) -> np.ndarray:
        from scipy.spatial.transform import Rotation

        return Rotation.from_matrix(self.rotation).as_quat()

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other: apply `other` first, then `self`."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "PoseSE3":
        return PoseSE3(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class DepthMap:
    """Metric depth grid; invalid pixels carry no depth semantics."""

    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.validity, dtype=bool)
        if v.ndim != 2 or m.shape != v.shape:
            raise GeometryError(f"depth {v.shape} / validity {m.shape} mismatch")
        valid = v[m]
        if valid.size and not (np.all(np.isfinite(valid)) and np.all(valid > 0)):
            raise GeometryError("valid depth values must be finite and positive")
        object.__setattr__(self, "values", _readonly(v, float))
        object.__setattr__(self, "validity", _readonly(m, bool))

    @staticmethod
    def from_array(values: np.ndarray) -> "DepthMap":
        v = np.asarray(values, dtype=float)
        return DepthMap(np.where(np.isfinite(v) & (v > 0), v, 0.0), np.isfinite(v) & (v > 0))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit RGB image."""

    channels: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.channels)
        if c.ndim != 3 or c.shape[2] != 3 or c.dtype != np.uint8:
            raise GeometryError(f"expected HxWx3 uint8 image, got {c.shape} {c.dtype}")
        object.__setattr__(self, "channels", _readonly(c, np.uint8))

    @property
    def shape(self):
        return self.channels.shape[:2]


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel probability in [0, 1] with a validity mask."""

    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.validity, dtype=bool)
        if v.ndim != 2 or m.shape != v.shape:
            raise GeometryError(f"values {v.shape} / validity {m.shape} mismatch")
        valid = v[m]
        if valid.size and not (np.all(valid >= 0.0) and np.all(valid <= 1.0)):
            raise GeometryError("probabilities outside [0, 1]")
        object.__setattr__(self, "values", _readonly(v, float))
        object.__setattr__(self, "validity", _readonly(m, bool))

    @staticmethod
    def full(values: np.ndarray) -> "ProbabilityMap":
        v = np.asarray(values, dtype=float)
        return ProbabilityMap(v, np.ones(v.shape, dtype=bool))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class FrameBundle:
    """One timestamped RGB-D observation with its static-background counterpart."""

    timestamp: float
    image: ImageBuffer
    depth: DepthMap
    background: ImageBuffer
    background_depth: DepthMap | None = None
    pose: PoseSE3 | None = None  # camera-to-world when present

    def __post_init__(self):
        if self.image.shape != self.depth.shape or self.image.shape != self.background.shape:
            raise GeometryError("frame, depth and background dimensions disagree")
        if self.background_depth is not None and self.background_depth.shape != self.image.shape:
            raise GeometryError("background depth dimensions disagree")

    def replace(self, **kwargs) -> "FrameBundle":
        return dataclasses.replace(self, **kwargs)


# --- projection operations ---------------------------------------------------


def backproject(px, depth: float, k: Intrinsics) -> Point3:
    """Lift pixel (u, v) at metric depth to a camera-frame 3D point."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    u, v = float(px[0]), float(px[1])
    return Point3((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth)


def project(p: Point3, k: Intrinsics) -> tuple[float, float]:
    """Project a camera-frame point to continuous pixel coordinates."""
    if not p.z > 0:
        raise BehindCameraError(f"point z={p.z} is not in front of the camera")
    return (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)


def transform(pose: PoseSE3, p: Point3) -> Point3:
    return Point3.from_array(pose.rotation @ p.as_array() + pose.translation)


# --- se3 exponential / logarithm ---------------------------------------------
#
# Twist layout: xi = (wx, wy, wz, vx, vy, vz), rotation part first.
# The optimizer applies increments by left multiplication: pose' = exp(xi) ∘ pose.

_SMALL_ANGLE = 1e-8


def _hat(w: np.ndarray) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def se3_exp(xi) -> PoseSE3:
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    theta = np.linalg.norm(w)
    S = _hat(w)
    S2 = S @ S
    if theta < _SMALL_ANGLE:
        # second-order series; exact enough at theta < 1e-8
        R = np.eye(3) + S + 0.5 * S2
        V = np.eye(3) + 0.5 * S + S2 / 6.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
        c = (theta - np.sin(theta)) / theta**3
        R = np.eye(3) + a * S + b * S2
        V = np.eye(3) + b * S + c * S2
    # re-orthonormalize against accumulated roundoff before the constructor check
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    return PoseSE3(R, V @ v)


def se3_log(pose: PoseSE3) -> np.ndarray:
    R = pose.rotation
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < _SMALL_ANGLE:
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
        Vinv = np.eye(3) - 0.5 * _hat(w)
    else:
        w = (
            theta
            / (2.0 * np.sin(theta))
            * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        )
        S = _hat(w)
        Vinv = (
            np.eye(3)
            - 0.5 * S
            + (1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))) * (S @ S)
        )
    return np.concatenate([w, Vinv @ pose.translation])
