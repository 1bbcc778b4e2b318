"""IMU preintegration between consecutive frames.

Accelerometer samples are expected as gravity-compensated linear body
acceleration (the phone's linear-acceleration output), so a static
device yields zero deltas and the relative-motion residual needs no
explicit gravity term. Integration uses the discrete midpoint rule: the
rotation advanced to the middle of each sample interval rotates that
sample's acceleration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import Pose, exp_so3, log_so3, skew, so3_right_jacobian

__all__ = ["ImuPreintegration", "imu_residual", "imu_residual_jacobians", "preintegrate"]


@dataclass(frozen=True)
class ImuPreintegration:
    """Relative rotation/velocity/position deltas over one frame interval."""

    delta_R: np.ndarray
    delta_v: np.ndarray
    delta_p: np.ndarray
    dt: float
    covariance: np.ndarray  # (9,9) on [rot, vel, pos]
    bias_acc_ref: np.ndarray
    bias_gyro_ref: np.ndarray
    # first-order sensitivities of the deltas to bias changes
    J_R_bg: np.ndarray
    J_v_ba: np.ndarray
    J_v_bg: np.ndarray
    J_p_ba: np.ndarray
    J_p_bg: np.ndarray

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("preintegration interval must be positive")

    def corrected(self, bias_acc: np.ndarray, bias_gyro: np.ndarray):
        """Deltas adjusted to new biases via the stored sensitivities."""
        dba = np.asarray(bias_acc, dtype=float) - self.bias_acc_ref
        dbg = np.asarray(bias_gyro, dtype=float) - self.bias_gyro_ref
        dR = self.delta_R @ exp_so3(self.J_R_bg @ dbg)
        dv = self.delta_v + self.J_v_ba @ dba + self.J_v_bg @ dbg
        dp = self.delta_p + self.J_p_ba @ dba + self.J_p_bg @ dbg
        return dR, dv, dp


def preintegrate(
    samples,
    bias_acc=np.zeros(3),
    bias_gyro=np.zeros(3),
    gyro_noise: float = 1e-4,
    accel_noise: float = 1e-3,
) -> ImuPreintegration:
    """Integrate bias-corrected IMU samples into relative-motion deltas.

    ``samples``: iterable of (gyro rad/s, accel m/s^2, dt seconds), accel
    gravity-compensated. ``*_noise`` are per-sample standard deviations
    used for the covariance propagation.
    """
    bias_acc = np.asarray(bias_acc, dtype=float)
    bias_gyro = np.asarray(bias_gyro, dtype=float)

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    total_dt = 0.0
    cov = np.zeros((9, 9))
    J_R_bg = np.zeros((3, 3))
    J_v_ba = np.zeros((3, 3))
    J_v_bg = np.zeros((3, 3))
    J_p_ba = np.zeros((3, 3))
    J_p_bg = np.zeros((3, 3))

    for gyro, accel, dt in samples:
        if dt <= 0:
            raise ValueError("sample dt must be positive")
        w = np.asarray(gyro, dtype=float) - bias_gyro
        a = np.asarray(accel, dtype=float) - bias_acc
        step = exp_so3(w * dt)
        half = exp_so3(w * (dt / 2.0))
        R_half = dR @ half
        Ra = R_half @ a

        # covariance propagation on [rot, vel, pos]
        A = np.eye(9)
        A[0:3, 0:3] = step.T
        A[3:6, 0:3] = -R_half @ skew(a) * dt
        A[6:9, 0:3] = -0.5 * R_half @ skew(a) * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt
        B = np.zeros((9, 6))
        B[0:3, 0:3] = so3_right_jacobian(w * dt) * dt
        B[3:6, 3:6] = R_half * dt
        B[6:9, 3:6] = 0.5 * R_half * dt * dt
        Q = np.diag([gyro_noise**2] * 3 + [accel_noise**2] * 3)
        cov = A @ cov @ A.T + B @ Q @ B.T

        # bias sensitivities (position uses the pre-update velocity terms)
        J_half = half.T @ J_R_bg - so3_right_jacobian(w * (dt / 2.0)) * (dt / 2.0)
        dRa_bg = -R_half @ skew(a) @ J_half
        J_p_ba = J_p_ba + J_v_ba * dt - 0.5 * R_half * dt * dt
        J_p_bg = J_p_bg + J_v_bg * dt + 0.5 * dRa_bg * dt * dt
        J_v_ba = J_v_ba - R_half * dt
        J_v_bg = J_v_bg + dRa_bg * dt
        J_R_bg = step.T @ J_R_bg - so3_right_jacobian(w * dt) * dt

        dp = dp + dv * dt + 0.5 * Ra * dt * dt
        dv = dv + Ra * dt
        dR = dR @ step
        total_dt += dt

    return ImuPreintegration(
        delta_R=dR,
        delta_v=dv,
        delta_p=dp,
        dt=total_dt,
        covariance=cov,
        bias_acc_ref=bias_acc.copy(),
        bias_gyro_ref=bias_gyro.copy(),
        J_R_bg=J_R_bg,
        J_v_ba=J_v_ba,
        J_v_bg=J_v_bg,
        J_p_ba=J_p_ba,
        J_p_bg=J_p_bg,
    )


def imu_residual(
    pose_i: Pose,
    vel_i: np.ndarray,
    pose_j: Pose,
    vel_j: np.ndarray,
    preint: ImuPreintegration,
    bias_acc=np.zeros(3),
    bias_gyro=np.zeros(3),
) -> np.ndarray:
    """9-vector [rotation-log, velocity, position] preintegration mismatch."""
    dR, dv, dp = preint.corrected(bias_acc, bias_gyro)
    Ri, Rj = pose_i.R, pose_j.R
    rel = Ri @ Rj.T
    r_R = log_so3(dR.T @ rel)
    r_v = Ri @ (np.asarray(vel_j, float) - np.asarray(vel_i, float)) - dv
    r_p = Ri @ (pose_j.c - pose_i.c - np.asarray(vel_i, float) * preint.dt) - dp
    return np.concatenate([r_R, r_v, r_p])


def _right_jacobian_inv(rotvec: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(rotvec)
    K = skew(rotvec)
    if angle < 1e-7:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    a2 = angle * angle
    coeff = 1.0 / a2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * K + coeff * (K @ K)


def imu_residual_jacobians(
    pose_i: Pose,
    vel_i: np.ndarray,
    pose_j: Pose,
    vel_j: np.ndarray,
    preint: ImuPreintegration,
    bias_acc=np.zeros(3),
    bias_gyro=np.zeros(3),
) -> dict[str, np.ndarray]:
    """Analytic Jacobians of :func:`imu_residual`.

    Perturbation conventions match the solver: rotations update as
    R <- Exp(theta) R, all vector states additively. Keys: theta_i,
    c_i, v_i, theta_j, c_j, v_j, ba, bg; each maps to a (9, 3) block.
    """
    vel_i = np.asarray(vel_i, dtype=float)
    vel_j = np.asarray(vel_j, dtype=float)
    dR, dv, dp = preint.corrected(bias_acc, bias_gyro)
    Ri, Rj = pose_i.R, pose_j.R
    Q = Ri @ Rj.T
    r_R = log_so3(dR.T @ Q)
    Jr_inv = _right_jacobian_inv(r_R)

    dbg = np.asarray(bias_gyro, dtype=float) - preint.bias_gyro_ref
    xi = preint.J_R_bg @ dbg
    G = so3_right_jacobian(xi) @ preint.J_R_bg

    J = {k: np.zeros((9, 3)) for k in ("theta_i", "c_i", "v_i", "theta_j", "c_j", "v_j", "ba", "bg")}

    # rotation block
    J["theta_i"][0:3] = Jr_inv @ Q.T
    J["theta_j"][0:3] = -Jr_inv
    J["bg"][0:3] = -Jr_inv @ exp_so3(-r_R) @ G

    # velocity block
    u_v = Ri @ (vel_j - vel_i)
    J["theta_i"][3:6] = -skew(u_v)
    J["v_i"][3:6] = -Ri
    J["v_j"][3:6] = Ri
    J["ba"][3:6] = -preint.J_v_ba
    J["bg"][3:6] = -preint.J_v_bg

    # position block
    u_p = Ri @ (pose_j.c - pose_i.c - vel_i * preint.dt)
    J["theta_i"][6:9] = -skew(u_p)
    J["c_i"][6:9] = -Ri
    J["c_j"][6:9] = Ri
    J["v_i"][6:9] = -Ri * preint.dt
    J["ba"][6:9] = -preint.J_p_ba
    J["bg"][6:9] = -preint.J_p_bg
    return J
