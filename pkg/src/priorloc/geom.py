"""Rigid-body pose algebra and the pinhole camera model.

Conventions used across the whole package:

* World frame is East-North-Up (ENU); gravity points along world -z.
* A :class:`Pose` stores the camera-from-world rotation ``R`` and the
  camera center ``c`` in world coordinates, so a world point ``X`` maps
  to camera coordinates as ``R @ (X - c)``.
* The camera looks along its +z axis; image x is to the right, image y
  is down.
* All public angles are degrees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CameraIntrinsics",
    "Pose",
    "angular_diff_deg",
    "exp_so3",
    "gravity_dir",
    "log_so3",
    "pose_error",
    "principal_axis",
    "project",
    "random_rotation",
    "unit",
]

WORLD_DOWN = np.array([0.0, 0.0, -1.0])

# Camera-frame depths at or below this are treated as behind the camera.
MIN_DEPTH = 1e-9


def unit(v) -> np.ndarray:
    """Normalize a vector to unit length."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(rotvec) -> np.ndarray:
    """Rotation matrix from an axis-angle vector (Rodrigues)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    K = skew(rotvec)
    if angle < 1e-10:
        # second-order series, exact enough at this scale
        return np.eye(3) + K + 0.5 * (K @ K)
    K = K / angle
    s, c = np.sin(angle), np.cos(angle)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def log_so3(R) -> np.ndarray:
    """Axis-angle vector of a rotation matrix; inverse of :func:`exp_so3`."""
    R = np.asarray(R, dtype=float)
    cos_angle = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    angle = np.arccos(cos_angle)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-7:
        return w  # w == angle * axis to first order
    if np.pi - angle < 1e-7:
        # near pi the antisymmetric part vanishes; recover axis from R + I
        A = R + np.eye(3)
        col = int(np.argmax(np.diag(A)))
        axis = unit(A[:, col])
        # fix the sign so exp matches R (w still carries it when nonzero)
        if np.dot(axis, w) < 0:
            axis = -axis
        return axis * angle
    return w * (angle / np.sin(angle))


def so3_right_jacobian(rotvec) -> np.ndarray:
    """Right Jacobian of SO(3): d Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    K = skew(rotvec)
    if angle < 1e-7:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        - (1.0 - np.cos(angle)) / a2 * K
        + (angle - np.sin(angle)) / (a2 * angle) * (K @ K)
    )


def so3_right_jacobian_inv(rotvec) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    K = skew(rotvec)
    if angle < 1e-7:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    a2 = angle * angle
    coeff = 1.0 / a2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * K + coeff * (K @ K)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed random rotation matrix."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def matrix_from_quat(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Camera pose: camera-from-world rotation and camera center in world."""

    R: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        c = np.asarray(self.c, dtype=float).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "c", c)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_Rt(cls, R, t) -> "Pose":
        """From the classic extrinsic pair (x_cam = R x_world + t)."""
        R = np.asarray(R, dtype=float)
        t = np.asarray(t, dtype=float).reshape(3)
        return cls(R, -R.T @ t)

    @property
    def t(self) -> np.ndarray:
        """Extrinsic translation (x_cam = R x_world + t)."""
        return -self.R @ self.c

    def world_to_camera(self, points) -> np.ndarray:
        """Map world points (..., 3) to camera coordinates."""
        points = np.asarray(points, dtype=float)
        return (points - self.c) @ self.R.T

    def camera_to_world(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.R + self.c

    def compose(self, other: "Pose") -> "Pose":
        """Rigid composition: apply ``other`` first, then ``self``."""
        return Pose.from_Rt(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose.from_Rt(self.R.T, -self.R.T @ self.t)

    def orthonormalized(self) -> "Pose":
        """Project R back onto SO(3) (useful after long update chains)."""
        U, _, Vt = np.linalg.svd(self.R)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] *= -1
            R = U @ Vt
        return Pose(R, self.c)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, uv, margin: float = 0.0) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (
            (uv[..., 0] >= margin)
            & (uv[..., 0] <= self.width - 1 - margin)
            & (uv[..., 1] >= margin)
            & (uv[..., 1] <= self.height - 1 - margin)
        )


def project(pose: Pose, intrinsics: CameraIntrinsics, points):
    """Pinhole projection of world points.

    Returns ``(uv, in_front)`` where ``uv`` has shape (..., 2) and
    ``in_front`` flags points with camera-frame depth > MIN_DEPTH.
    Pixel values for flagged-out points are not meaningful.
    """
    points = np.asarray(points, dtype=float)
    pc = pose.world_to_camera(points)
    z = pc[..., 2]
    in_front = z > MIN_DEPTH
    safe_z = np.where(in_front, z, 1.0)
    u = intrinsics.fx * pc[..., 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * pc[..., 1] / safe_z + intrinsics.cy
    return np.stack([u, v], axis=-1), in_front


def gravity_dir(pose: Pose) -> np.ndarray:
    """World down direction (-z) expressed in the camera frame."""
    return pose.R @ WORLD_DOWN


def principal_axis(pose: Pose) -> np.ndarray:
    """Camera viewing direction (+z of the camera) in world coordinates."""
    return pose.R[2, :].copy()


def angular_diff_deg(a, b) -> float:
    """Angle between two unit vectors in degrees, clamped against rounding."""
    d = float(np.clip(np.dot(np.asarray(a, float), np.asarray(b, float)), -1.0, 1.0))
    return float(np.degrees(np.arccos(d)))


def rotation_angle_deg(R) -> float:
    """Geodesic rotation angle of a rotation matrix in degrees."""
    R = np.asarray(R, dtype=float)
    c = 0.5 * (np.trace(R) - 1.0)
    # atan2 form stays well conditioned near 0 where arccos loses digits
    s = 0.5 * np.linalg.norm(
        np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    )
    return float(np.degrees(np.arctan2(s, c)))


def pose_error(estimate: Pose, truth: Pose) -> tuple[float, float]:
    """(translation error in meters, geodesic rotation error in degrees)."""
    dt = float(np.linalg.norm(estimate.c - truth.c))
    dr = rotation_angle_deg(estimate.R @ truth.R.T)
    return dt, dr


def rot_z(rad: float) -> np.ndarray:
    c, s = np.cos(rad), np.sin(rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def minimal_rotation(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` to unit vector ``b``."""
    a = unit(a)
    b = unit(b)
    c = float(np.dot(a, b))
    axis = np.cross(a, b)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        if c > 0:
            return np.eye(3)
        # antipodal: rotate 180 deg about any axis orthogonal to a
        helper = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        axis = unit(np.cross(a, helper))
        return exp_so3(axis * np.pi)
    return exp_so3(axis / n * np.arctan2(n, c))
