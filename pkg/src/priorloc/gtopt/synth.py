"""Synthetic walk generator for exercising the trajectory optimizer.

The ground-truth states are produced by integrating an analytic body-rate
and body-acceleration profile with the same midpoint rule the
preintegration uses, so with noise-free measurements the IMU residuals
vanish at the truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import CameraIntrinsics, Pose, exp_so3, gravity_dir, project, unit
from .imu import preintegrate
from .problem import FrameState, TrajectoryProblem

__all__ = ["SynthTruth", "synthesize_trajectory_problem"]


@dataclass
class SynthTruth:
    poses: list
    velocities: np.ndarray
    bias_acc: np.ndarray
    bias_gyro: np.ndarray


def _body_rates(t: float) -> tuple[np.ndarray, np.ndarray]:
    """Smooth angular-rate / linear-acceleration profile of the walk."""
    gyro = np.array(
        [
            0.10 * np.sin(0.70 * t),
            0.08 * np.cos(0.50 * t),
            0.25 * np.sin(0.30 * t + 0.5),
        ]
    )
    accel = np.array(
        [
            0.40 * np.sin(0.90 * t + 1.0),
            0.30 * np.cos(0.60 * t),
            0.25 * np.sin(0.80 * t + 2.0),
        ]
    )
    return gyro, accel


def synthesize_trajectory_problem(
    n_frames: int = 50,
    frame_dt: float = 0.5,
    imu_rate: float = 200.0,
    n_map_points: int = 160,
    n_landmarks: int = 120,
    obs_noise_px: float = 1.0,
    rtk_sigma: float = 0.02,
    gravity_sigma_deg: float = 0.1,
    imu_gyro_noise: float = 2e-4,
    imu_accel_noise: float = 2e-3,
    init_pos_noise: float = 0.20,
    init_rot_noise_deg: float = 1.0,
    landmark_init_noise: float = 0.10,
    outlier_fraction: float = 0.0,
    with_biases: bool = True,
    seed: int = 0,
) -> tuple[TrajectoryProblem, SynthTruth]:
    """Build a measurement-complete problem plus its ground truth.

    Initial states mimic a per-frame localization front end: poses are
    the truth perturbed by ``init_pos_noise`` / ``init_rot_noise_deg``,
    velocities and biases start at zero, landmarks at their true
    positions plus noise. ``outlier_fraction`` replaces that fraction of
    reprojection observations with random pixels.
    """
    rng = np.random.default_rng(seed)
    intr = CameraIntrinsics(450.0, 450.0, 320.0, 240.0, 640, 480)
    dt = 1.0 / imu_rate
    steps_per_frame = int(round(frame_dt * imu_rate))

    if with_biases:
        bias_gyro_true = np.array([0.004, -0.003, 0.002])
        bias_acc_true = np.array([0.03, -0.02, 0.015])
    else:
        bias_gyro_true = np.zeros(3)
        bias_acc_true = np.zeros(3)

    # camera starts level, looking North, walking forward at ~1 m/s
    R_wb = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
    pos = np.zeros(3)
    vel = R_wb @ np.array([0.05, 0.0, 1.0])

    true_poses = [Pose(R_wb.T, pos.copy())]
    true_vels = [vel.copy()]
    segments_raw = []
    t = 0.0
    for _ in range(n_frames - 1):
        samples = []
        for _ in range(steps_per_frame):
            gyro, accel = _body_rates(t + dt / 2.0)
            half = R_wb @ exp_so3(gyro * dt / 2.0)
            acc_w = half @ accel
            pos = pos + vel * dt + 0.5 * acc_w * dt * dt
            vel = vel + acc_w * dt
            R_wb = R_wb @ exp_so3(gyro * dt)
            t += dt
            meas_gyro = gyro + bias_gyro_true + rng.normal(0, imu_gyro_noise, 3)
            meas_accel = accel + bias_acc_true + rng.normal(0, imu_accel_noise, 3)
            samples.append((meas_gyro, meas_accel, dt))
        segments_raw.append(samples)
        true_poses.append(Pose(R_wb.T, pos.copy()))
        true_vels.append(vel.copy())

    timestamps = np.arange(n_frames) * frame_dt
    centers = np.array([p.c for p in true_poses])

    def scatter_points(n: int, salt: int) -> np.ndarray:
        r = np.random.default_rng(seed * 7919 + salt)
        anchor = centers[r.integers(0, n_frames, size=n)]
        fwd = np.zeros((n, 3))
        for k in range(n):
            fi = r.integers(0, n_frames)
            fwd[k] = true_poses[fi].R[2, :]
        ahead = r.uniform(4.0, 22.0, size=n)[:, None] * fwd
        lateral = r.normal(0.0, 5.0, size=(n, 3))
        return anchor + ahead + lateral

    map_xyz = scatter_points(n_map_points, 1)
    lm_xyz = scatter_points(n_landmarks, 2)
    map_points = {pid: map_xyz[pid] for pid in range(n_map_points)}
    landmark_ids = list(range(n_landmarks))

    def observe(points_xyz: np.ndarray, ids) -> list:
        obs = []
        for fi, pose in enumerate(true_poses):
            uv, ok = project(pose, intr, points_xyz)
            depth = pose.world_to_camera(points_xyz)[:, 2]
            keep = ok & intr.contains(uv, margin=2.0) & (depth < 45.0)
            for k in np.nonzero(keep)[0]:
                px = uv[k] + rng.normal(0.0, obs_noise_px, 2)
                if outlier_fraction > 0 and rng.uniform() < outlier_fraction:
                    px = np.array(
                        [rng.uniform(0, intr.width - 1), rng.uniform(0, intr.height - 1)]
                    )
                obs.append((fi, int(ids[k]), px))
        return obs

    obs_sl = observe(map_xyz, list(range(n_map_points)))
    obs_vo = observe(lm_xyz, landmark_ids)

    rtk = centers[:, :2] + rng.normal(0.0, rtk_sigma, size=(n_frames, 2))
    grav = []
    for pose in true_poses:
        g = gravity_dir(pose)
        helper = (
            np.array([1.0, 0.0, 0.0]) if abs(g[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        )
        e1 = unit(np.cross(g, helper))
        e2 = np.cross(g, e1)
        phi = rng.uniform(0, 2 * np.pi)
        ang = np.radians(rng.normal(0.0, gravity_sigma_deg))
        axis = np.cos(phi) * e1 + np.sin(phi) * e2
        grav.append(exp_so3(axis * ang) @ g)

    init_frames = []
    for fi, pose in enumerate(true_poses):
        axis = unit(rng.normal(size=3))
        ang = np.radians(rng.normal(0.0, init_rot_noise_deg))
        R0 = exp_so3(axis * ang) @ pose.R
        c0 = pose.c + rng.normal(0.0, init_pos_noise, 3)
        init_frames.append(FrameState(Pose(R0, c0), np.zeros(3)))

    segments = [preintegrate(s) for s in segments_raw]
    lm_init = lm_xyz + rng.normal(0.0, landmark_init_noise, size=lm_xyz.shape)

    problem = TrajectoryProblem(
        frames=init_frames,
        timestamps=timestamps,
        intrinsics=intr,
        map_points=map_points,
        landmark_ids=landmark_ids,
        landmark_positions=lm_init,
        obs_sl=obs_sl,
        obs_vo=obs_vo,
        imu_segments=segments,
        rtk_xy=rtk,
        gravity_meas=np.array(grav),
        imu_samples=segments_raw,
    )
    truth = SynthTruth(
        poses=true_poses,
        velocities=np.array(true_vels),
        bias_acc=bias_acc_true,
        bias_gyro=bias_gyro_true,
    )
    return problem, truth
