"""The joint trajectory problem and its residual/Jacobian assembly.

Five residual families enter one weighted least-squares cost:

* self-localization reprojection against fixed map points,
* visual-odometry reprojection against optimized landmarks,
* IMU preintegration factors between consecutive frames,
* planar (xy) RTK position priors,
* gravity-direction priors.

Each term is whitened by sqrt(w)/sigma, so only the ratio w/sigma^2
matters; both knobs are exposed because they are configured separately.
The gravity misalignment angle is locally reparameterized as the
2-vector tangent-plane error at the measured direction, which keeps the
Jacobian well defined at zero error. Reprojection terms optionally pass
through a Huber loss (scale = huber_scale * sigma, in pixels) applied by
IRLS square-root reweighting; the reported cost is the true robust cost.

State layout for the solver: per frame [rotation delta, center delta]
(6), then velocities (3 per frame), the shared accelerometer and gyro
biases (3 + 3), then landmark positions (3 each). Rotations update
multiplicatively as R <- Exp(theta) R.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..geom import CameraIntrinsics, Pose, exp_so3, skew, unit
from .imu import ImuPreintegration, imu_residual, imu_residual_jacobians

__all__ = [
    "FrameState",
    "ResidualWeights",
    "TrajectoryProblem",
    "build_residuals",
    "total_cost",
]


@dataclass(frozen=True)
class FrameState:
    pose: Pose
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(
            self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3)
        )


@dataclass(frozen=True)
class ResidualWeights:
    w_sl: float = 1.0
    w_vo: float = 1.0
    w_io: float = 1.0
    w_t: float = 1.0
    w_g: float = 1.0
    sigma_sl: float = 1.0  # px
    sigma_vo: float = 1.0  # px
    sigma_io: float = 1e-2
    sigma_t: float = 2e-2  # m
    sigma_g: float = 0.1  # degrees
    huber_scale: float = 2.0
    robust: bool = True

    def __post_init__(self):
        for name in ("sl", "vo", "io", "t", "g"):
            w = getattr(self, f"w_{name}")
            s = getattr(self, f"sigma_{name}")
            if w < 0:
                raise ValueError(f"w_{name} must be >= 0")
            if w > 0 and s <= 0:
                raise ValueError(f"sigma_{name} must be > 0 when w_{name} > 0")


@dataclass
class TrajectoryProblem:
    """Frames, geometry, and measurements of one query sequence."""

    frames: list
    timestamps: np.ndarray
    intrinsics: CameraIntrinsics
    map_points: dict  # point_id -> (3,) fixed, not optimized
    landmark_ids: list
    landmark_positions: np.ndarray  # (L, 3), optimized
    obs_sl: list  # (frame_idx, map_point_id, pixel)
    obs_vo: list  # (frame_idx, landmark_id, pixel)
    imu_segments: list  # F-1 ImuPreintegration, or [] when unused
    bias_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rtk_xy: Optional[np.ndarray] = None  # (F, 2)
    gravity_meas: Optional[np.ndarray] = None  # (F, 3) unit, camera frame
    imu_samples: Optional[list] = None  # raw (gyro, accel, dt) per segment

    def __post_init__(self):
        F = len(self.frames)
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(F)
        self.landmark_positions = np.asarray(
            self.landmark_positions, dtype=float
        ).reshape(len(self.landmark_ids), 3)
        self.bias_acc = np.asarray(self.bias_acc, dtype=float).reshape(3)
        self.bias_gyro = np.asarray(self.bias_gyro, dtype=float).reshape(3)
        if self.imu_segments and len(self.imu_segments) != F - 1:
            raise ValueError("need one IMU segment per consecutive frame pair")
        if self.rtk_xy is not None:
            self.rtk_xy = np.asarray(self.rtk_xy, dtype=float).reshape(F, 2)
        if self.gravity_meas is not None:
            self.gravity_meas = np.asarray(self.gravity_meas, dtype=float).reshape(F, 3)
        lm_set = set(self.landmark_ids)
        for fi, pid, _ in self.obs_sl:
            if not (0 <= fi < F) or pid not in self.map_points:
                raise ValueError(f"bad self-localization observation ({fi}, {pid})")
        for fi, lid, _ in self.obs_vo:
            if not (0 <= fi < F) or lid not in lm_set:
                raise ValueError(f"bad odometry observation ({fi}, {lid})")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def poses(self) -> list:
        return [f.pose for f in self.frames]


class _State:
    """Mutable array view of the optimized variables."""

    def __init__(self, problem: TrajectoryProblem):
        self.R = np.array([f.pose.R for f in problem.frames])
        self.c = np.array([f.pose.c for f in problem.frames])
        self.v = np.array([f.velocity for f in problem.frames])
        self.ba = problem.bias_acc.copy()
        self.bg = problem.bias_gyro.copy()
        self.X = problem.landmark_positions.copy()

    def copy(self) -> "_State":
        out = object.__new__(_State)
        out.R = self.R.copy()
        out.c = self.c.copy()
        out.v = self.v.copy()
        out.ba = self.ba.copy()
        out.bg = self.bg.copy()
        out.X = self.X.copy()
        return out

    def apply_step(self, delta: np.ndarray) -> "_State":
        F = len(self.R)
        L = len(self.X)
        out = self.copy()
        for i in range(F):
            th = delta[6 * i : 6 * i + 3]
            out.R[i] = exp_so3(th) @ self.R[i]
            out.c[i] = self.c[i] + delta[6 * i + 3 : 6 * i + 6]
        out.v = self.v + delta[6 * F : 9 * F].reshape(F, 3)
        out.ba = self.ba + delta[9 * F : 9 * F + 3]
        out.bg = self.bg + delta[9 * F + 3 : 9 * F + 6]
        if L:
            out.X = self.X + delta[9 * F + 6 :].reshape(L, 3)
        return out

    def n_params(self) -> int:
        return 9 * len(self.R) + 6 + 3 * len(self.X)

    def write_back(self, problem: TrajectoryProblem) -> TrajectoryProblem:
        frames = [
            FrameState(Pose(self.R[i], self.c[i]), self.v[i])
            for i in range(len(self.R))
        ]
        return replace(
            problem,
            frames=frames,
            landmark_positions=self.X.copy(),
            bias_acc=self.ba.copy(),
            bias_gyro=self.bg.copy(),
        )


def _tangent_basis(g: np.ndarray) -> np.ndarray:
    """(3,2) orthonormal basis of the plane normal to unit vector g."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(g[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = unit(np.cross(g, helper))
    e2 = np.cross(g, e1)
    return np.column_stack([e1, e2])


class _Assembler:
    """Evaluates residuals, the sparse Jacobian, and the robust cost."""

    def __init__(self, problem: TrajectoryProblem, weights: ResidualWeights):
        self.problem = problem
        self.weights = weights
        self.F = problem.n_frames
        self.L = len(problem.landmark_ids)
        self.lm_index = {lid: k for k, lid in enumerate(problem.landmark_ids)}
        self.off_v = 6 * self.F
        self.off_ba = 9 * self.F
        self.off_bg = 9 * self.F + 3
        self.off_X = 9 * self.F + 6
        if problem.gravity_meas is not None:
            self.g_bases = [_tangent_basis(unit(g)) for g in problem.gravity_meas]

    def assemble(self, st: _State):
        w = self.weights
        intr = self.problem.intrinsics
        rows_r: list[np.ndarray] = []
        trip_r: list[int] = []
        trip_c: list[int] = []
        trip_v: list[float] = []
        row0 = 0
        cost = 0.0
        dropped = 0

        def add_block(r0, c0, block):
            h, bw = block.shape
            rr, cc = np.meshgrid(np.arange(r0, r0 + h), np.arange(c0, c0 + bw), indexing="ij")
            trip_r.extend(rr.ravel())
            trip_c.extend(cc.ravel())
            trip_v.extend(block.ravel())

        def reprojection_terms(observations, weight, sigma, with_landmarks):
            nonlocal row0, cost, dropped
            if weight <= 0:
                return
            white = np.sqrt(weight) / sigma
            delta = w.huber_scale * sigma
            for fi, pid, pixel in observations:
                if with_landmarks:
                    X = st.X[self.lm_index[pid]]
                else:
                    X = self.problem.map_points[pid]
                pc = st.R[fi] @ (X - st.c[fi])
                if pc[2] <= 1e-9:
                    dropped += 1
                    continue
                z = pc[2]
                u = intr.fx * pc[0] / z + intr.cx
                v = intr.fy * pc[1] / z + intr.cy
                r = np.array([u - pixel[0], v - pixel[1]])
                s = float(np.linalg.norm(r))
                if w.robust and s > delta:
                    omega = delta / s
                    cost += weight / sigma**2 * delta * (2.0 * s - delta)
                else:
                    omega = 1.0
                    cost += weight / sigma**2 * s * s
                scale = white * np.sqrt(omega)
                Jp = np.array(
                    [
                        [intr.fx / z, 0.0, -intr.fx * pc[0] / (z * z)],
                        [0.0, intr.fy / z, -intr.fy * pc[1] / (z * z)],
                    ]
                )
                rows_r.append(scale * r)
                add_block(row0, 6 * fi, scale * (Jp @ (-skew(pc))))
                add_block(row0, 6 * fi + 3, scale * (Jp @ (-st.R[fi])))
                if with_landmarks:
                    add_block(
                        row0,
                        self.off_X + 3 * self.lm_index[pid],
                        scale * (Jp @ st.R[fi]),
                    )
                row0 += 2

        reprojection_terms(self.problem.obs_sl, w.w_sl, w.sigma_sl, False)
        reprojection_terms(self.problem.obs_vo, w.w_vo, w.sigma_vo, True)

        if w.w_io > 0 and self.problem.imu_segments:
            white = np.sqrt(w.w_io) / w.sigma_io
            for i, pre in enumerate(self.problem.imu_segments):
                pose_i = Pose(st.R[i], st.c[i])
                pose_j = Pose(st.R[i + 1], st.c[i + 1])
                r = imu_residual(pose_i, st.v[i], pose_j, st.v[i + 1], pre, st.ba, st.bg)
                J = imu_residual_jacobians(
                    pose_i, st.v[i], pose_j, st.v[i + 1], pre, st.ba, st.bg
                )
                cost += w.w_io / w.sigma_io**2 * float(r @ r)
                rows_r.append(white * r)
                add_block(row0, 6 * i, white * J["theta_i"])
                add_block(row0, 6 * i + 3, white * J["c_i"])
                add_block(row0, 6 * (i + 1), white * J["theta_j"])
                add_block(row0, 6 * (i + 1) + 3, white * J["c_j"])
                add_block(row0, self.off_v + 3 * i, white * J["v_i"])
                add_block(row0, self.off_v + 3 * (i + 1), white * J["v_j"])
                add_block(row0, self.off_ba, white * J["ba"])
                add_block(row0, self.off_bg, white * J["bg"])
                row0 += 9

        if w.w_t > 0 and self.problem.rtk_xy is not None:
            white = np.sqrt(w.w_t) / w.sigma_t
            Jc = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            for i in range(self.F):
                r = st.c[i][:2] - self.problem.rtk_xy[i]
                cost += w.w_t / w.sigma_t**2 * float(r @ r)
                rows_r.append(white * r)
                add_block(row0, 6 * i + 3, white * Jc)
                row0 += 2

        if w.w_g > 0 and self.problem.gravity_meas is not None:
            sigma_rad = np.radians(w.sigma_g)
            white = np.sqrt(w.w_g) / sigma_rad
            down = np.array([0.0, 0.0, -1.0])
            for i in range(self.F):
                B = self.g_bases[i]
                g_state = st.R[i] @ down
                r = B.T @ g_state
                cost += w.w_g / sigma_rad**2 * float(r @ r)
                rows_r.append(white * r)
                add_block(row0, 6 * i, white * (-B.T @ skew(g_state)))
                row0 += 2

        residual = np.concatenate(rows_r) if rows_r else np.zeros(0)
        J = sp.coo_matrix(
            (trip_v, (trip_r, trip_c)), shape=(row0, st.n_params())
        ).tocsr()
        return residual, J, cost, {"rows": row0, "dropped": dropped}


def build_residuals(problem: TrajectoryProblem, weights: ResidualWeights):
    """Whitened residual vector, sparse Jacobian, robust cost, and info.

    Evaluated at the problem's current states. Observations that fall
    behind their camera are dropped and counted in ``info['dropped']``.
    """
    asm = _Assembler(problem, weights)
    r, J, cost, info = asm.assemble(_State(problem))
    info["cost"] = cost
    return r, J, info


def total_cost(problem: TrajectoryProblem, weights: ResidualWeights) -> float:
    return build_residuals(problem, weights)[2]["cost"]
