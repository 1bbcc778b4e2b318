"""Text format for trajectory problems.

Sections, one record per line, '#' comments allowed:

  [CAMERA]    fx fy cx cy width height
  [FRAMES]    idx timestamp qw qx qy qz cx cy cz vx vy vz
              (quaternion is camera-from-world, c the camera center)
  [LANDMARKS] id x y z
  [MAPPOINTS] id x y z
  [OBS_SL]    frame point_id u v
  [OBS_VO]    frame landmark_id u v
  [IMU]       segment dt gx gy gz ax ay az   (raw samples, segment i -> i+1)
  [RTK]       frame e n
  [GRAVITY]   frame gx gy gz

IMU samples are preintegrated at load time with the problem's (zero)
initial biases.
"""

from __future__ import annotations

import numpy as np

from ..geom import CameraIntrinsics, Pose, matrix_from_quat, quat_from_matrix
from .imu import preintegrate
from .problem import FrameState, TrajectoryProblem

__all__ = ["load_problem", "save_problem"]


def save_problem(path, problem: TrajectoryProblem) -> None:
    intr = problem.intrinsics
    with open(path, "w") as f:
        f.write("[CAMERA]\n")
        f.write(f"{intr.fx} {intr.fy} {intr.cx} {intr.cy} {intr.width} {intr.height}\n")
        f.write("[FRAMES]\n")
        for i, fr in enumerate(problem.frames):
            q = quat_from_matrix(fr.pose.R)
            c = fr.pose.c
            v = fr.velocity
            f.write(
                f"{i} {problem.timestamps[i]:.9f} "
                f"{q[0]:.12g} {q[1]:.12g} {q[2]:.12g} {q[3]:.12g} "
                f"{c[0]:.9f} {c[1]:.9f} {c[2]:.9f} "
                f"{v[0]:.9f} {v[1]:.9f} {v[2]:.9f}\n"
            )
        f.write("[LANDMARKS]\n")
        for lid, pos in zip(problem.landmark_ids, problem.landmark_positions):
            f.write(f"{lid} {pos[0]:.9f} {pos[1]:.9f} {pos[2]:.9f}\n")
        f.write("[MAPPOINTS]\n")
        for pid in sorted(problem.map_points):
            p = problem.map_points[pid]
            f.write(f"{pid} {p[0]:.9f} {p[1]:.9f} {p[2]:.9f}\n")
        f.write("[OBS_SL]\n")
        for fi, pid, px in problem.obs_sl:
            f.write(f"{fi} {pid} {px[0]:.6f} {px[1]:.6f}\n")
        f.write("[OBS_VO]\n")
        for fi, lid, px in problem.obs_vo:
            f.write(f"{fi} {lid} {px[0]:.6f} {px[1]:.6f}\n")
        if problem.imu_samples:
            f.write("[IMU]\n")
            for seg, samples in enumerate(problem.imu_samples):
                for gyro, accel, dt in samples:
                    f.write(
                        f"{seg} {dt:.9f} "
                        f"{gyro[0]:.9g} {gyro[1]:.9g} {gyro[2]:.9g} "
                        f"{accel[0]:.9g} {accel[1]:.9g} {accel[2]:.9g}\n"
                    )
        if problem.rtk_xy is not None:
            f.write("[RTK]\n")
            for i, xy in enumerate(problem.rtk_xy):
                f.write(f"{i} {xy[0]:.9f} {xy[1]:.9f}\n")
        if problem.gravity_meas is not None:
            f.write("[GRAVITY]\n")
            for i, g in enumerate(problem.gravity_meas):
                f.write(f"{i} {g[0]:.12g} {g[1]:.12g} {g[2]:.12g}\n")


def load_problem(path) -> TrajectoryProblem:
    sections: dict[str, list[list[str]]] = {}
    current = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].upper()
                sections[current] = []
                continue
            if current is None:
                raise ValueError("record before any section header")
            sections[current].append(line.split())

    if "CAMERA" not in sections or not sections["CAMERA"]:
        raise ValueError("missing [CAMERA] section")
    cam = sections["CAMERA"][0]
    intr = CameraIntrinsics(
        float(cam[0]), float(cam[1]), float(cam[2]), float(cam[3]), int(cam[4]), int(cam[5])
    )

    frames_raw = sorted(sections.get("FRAMES", []), key=lambda r: int(r[0]))
    frames = []
    timestamps = []
    for rec in frames_raw:
        timestamps.append(float(rec[1]))
        q = [float(v) for v in rec[2:6]]
        c = np.array([float(v) for v in rec[6:9]])
        v = np.array([float(x) for x in rec[9:12]])
        frames.append(FrameState(Pose(matrix_from_quat(q), c), v))

    landmark_ids = []
    lm_pos = []
    for rec in sections.get("LANDMARKS", []):
        landmark_ids.append(int(rec[0]))
        lm_pos.append([float(v) for v in rec[1:4]])
    map_points = {
        int(rec[0]): np.array([float(v) for v in rec[1:4]])
        for rec in sections.get("MAPPOINTS", [])
    }
    obs_sl = [
        (int(r[0]), int(r[1]), np.array([float(r[2]), float(r[3])]))
        for r in sections.get("OBS_SL", [])
    ]
    obs_vo = [
        (int(r[0]), int(r[1]), np.array([float(r[2]), float(r[3])]))
        for r in sections.get("OBS_VO", [])
    ]

    imu_samples = None
    segments = []
    if sections.get("IMU"):
        n_segs = len(frames) - 1
        imu_samples = [[] for _ in range(n_segs)]
        for rec in sections["IMU"]:
            seg = int(rec[0])
            if not (0 <= seg < n_segs):
                raise ValueError(f"IMU sample for invalid segment {seg}")
            dt = float(rec[1])
            gyro = np.array([float(v) for v in rec[2:5]])
            accel = np.array([float(v) for v in rec[5:8]])
            imu_samples[seg].append((gyro, accel, dt))
        segments = [preintegrate(s) for s in imu_samples]

    rtk = None
    if sections.get("RTK"):
        rtk = np.zeros((len(frames), 2))
        for rec in sections["RTK"]:
            rtk[int(rec[0])] = [float(rec[1]), float(rec[2])]
    grav = None
    if sections.get("GRAVITY"):
        grav = np.zeros((len(frames), 3))
        for rec in sections["GRAVITY"]:
            grav[int(rec[0])] = [float(v) for v in rec[1:4]]

    return TrajectoryProblem(
        frames=frames,
        timestamps=np.array(timestamps),
        intrinsics=intr,
        map_points=map_points,
        landmark_ids=landmark_ids,
        landmark_positions=np.array(lm_pos).reshape(len(landmark_ids), 3),
        obs_sl=obs_sl,
        obs_vo=obs_vo,
        imu_segments=segments,
        rtk_xy=rtk,
        gravity_meas=grav,
        imu_samples=imu_samples,
    )
