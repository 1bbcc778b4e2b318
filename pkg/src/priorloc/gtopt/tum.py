"""TUM-format trajectory I/O and trajectory error metrics.

TUM lines are ``timestamp tx ty tz qx qy qz qw`` with the translation at
the camera center and the quaternion giving the world-from-camera
rotation, so external comparison tools read them directly.
"""

from __future__ import annotations

import numpy as np

from ..geom import Pose, matrix_from_quat, quat_from_matrix, rotation_angle_deg

__all__ = ["ate_rmse", "load_tum", "rotation_errors_deg", "save_tum"]


def save_tum(path, timestamps, poses: list[Pose]) -> None:
    with open(path, "w") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n")
        for ts, pose in zip(timestamps, poses):
            w, x, y, z = quat_from_matrix(pose.R.T)
            c = pose.c
            f.write(
                f"{ts:.9f} {c[0]:.9f} {c[1]:.9f} {c[2]:.9f} "
                f"{x:.9f} {y:.9f} {z:.9f} {w:.9f}\n"
            )


def load_tum(path) -> tuple[np.ndarray, list[Pose]]:
    timestamps = []
    poses = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) < 8:
                continue
            ts, tx, ty, tz, qx, qy, qz, qw = vals[:8]
            timestamps.append(ts)
            R_wc = matrix_from_quat([qw, qx, qy, qz])
            poses.append(Pose(R_wc.T, np.array([tx, ty, tz])))
    return np.array(timestamps), poses


def ate_rmse(estimate: list[Pose], truth: list[Pose]) -> float:
    """Absolute trajectory error: RMS camera-center distance."""
    if len(estimate) != len(truth):
        raise ValueError("trajectories differ in length")
    d = np.array([e.c - t.c for e, t in zip(estimate, truth)])
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def rotation_errors_deg(estimate: list[Pose], truth: list[Pose]) -> np.ndarray:
    if len(estimate) != len(truth):
        raise ValueError("trajectories differ in length")
    return np.array([rotation_angle_deg(e.R @ t.R.T) for e, t in zip(estimate, truth)])
