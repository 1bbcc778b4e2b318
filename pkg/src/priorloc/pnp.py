"""Gravity-gated locally-optimized RANSAC over P3P minimal solutions.

Each minimal sample yields up to four pose hypotheses. With the gravity
gate enabled, any hypothesis whose gravity direction deviates from the
sensor prior's by at least ``tau_eps`` degrees is rejected before inlier
counting; the report keeps separate counts of gated and scored
hypotheses. A new best hypothesis triggers one local-optimization round
(damped least-squares refinement on its inliers).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .geom import (
    CameraIntrinsics,
    Pose,
    angular_diff_deg,
    exp_so3,
    gravity_dir,
    project,
    skew,
)

__all__ = [
    "Correspondence2D3D",
    "DegenerateSampleError",
    "RansacConfig",
    "RansacReport",
    "RefineInfo",
    "gravity_residual",
    "lo_ransac",
    "p3p_solve",
    "refine_pose",
]


class DegenerateSampleError(ValueError):
    """Raised for P3P samples with collinear points or coincident pixels."""


@dataclass(frozen=True)
class Correspondence2D3D:
    pixel: np.ndarray
    point: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pixel", np.asarray(self.pixel, dtype=float).reshape(2))
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(3))


@dataclass(frozen=True)
class RansacConfig:
    inlier_px: float = 5.0
    max_iters: int = 10000
    confidence: float = 0.9999
    tau_eps: float = 2.0
    gravity_gate: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.inlier_px <= 0:
            raise ValueError("inlier_px must be > 0")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must be in (0, 1)")
        if self.tau_eps <= 0:
            raise ValueError("tau_eps must be > 0")


@dataclass
class RansacReport:
    pose: Optional[Pose]
    inliers: np.ndarray
    success: bool
    iterations: int
    hypotheses_scored: int
    hypotheses_gated: int
    lo_rounds: int
    wall_time: float
    message: str = ""


@dataclass
class RefineInfo:
    converged: bool
    iterations: int
    initial_cost: float
    final_cost: float
    cost_history: list


def bearing_vectors(pixels: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Unit camera-frame rays through the given pixels."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    x = (pixels[:, 0] - intrinsics.cx) / intrinsics.fx
    y = (pixels[:, 1] - intrinsics.cy) / intrinsics.fy
    f = np.column_stack([x, y, np.ones(len(pixels))])
    return f / np.linalg.norm(f, axis=1, keepdims=True)


def _check_sample(pixels: np.ndarray, points: np.ndarray) -> bool:
    d01 = np.linalg.norm(pixels[0] - pixels[1])
    d02 = np.linalg.norm(pixels[0] - pixels[2])
    d12 = np.linalg.norm(pixels[1] - pixels[2])
    if min(d01, d02, d12) < 1e-6:
        return False
    scale = max(np.linalg.norm(points[1] - points[0]), np.linalg.norm(points[2] - points[0]))
    if scale < 1e-12:
        return False
    area = np.linalg.norm(np.cross(points[1] - points[0], points[2] - points[0]))
    return area >= 1e-9 * scale * scale


def p3p_solve(
    pixels: np.ndarray, points: np.ndarray, intrinsics: CameraIntrinsics
) -> list[Pose]:
    """All real P3P solutions for three 2D-3D correspondences.

    Every returned pose reprojects the three inputs to within 1e-6 px.
    Raises :class:`DegenerateSampleError` on collinear points or
    coincident pixels.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(3, 2)
    points = np.asarray(points, dtype=float).reshape(3, 3)
    if not _check_sample(pixels, points):
        raise DegenerateSampleError("collinear points or coincident pixels")
    f = bearing_vectors(pixels, intrinsics)
    Rs, ts = kernels.p3p_solve(f, points)
    out = []
    for R, t in zip(Rs, ts):
        pose = Pose.from_Rt(R, t)
        uv, ok = project(pose, intrinsics, points)
        if bool(np.all(ok)) and float(np.abs(uv - pixels).max()) <= 1e-6:
            out.append(pose)
    return out


def gravity_residual(hypothesis: Pose, sensor: Pose) -> float:
    """Angle in degrees between the two poses' gravity directions."""
    return angular_diff_deg(gravity_dir(sensor), gravity_dir(hypothesis))


def refine_pose(
    pose: Pose,
    pixels: np.ndarray,
    points: np.ndarray,
    intrinsics: CameraIntrinsics,
    max_iters: int = 50,
) -> tuple[Pose, RefineInfo]:
    """Damped least-squares (LM) refinement of a pose on 2D-3D matches.

    Minimizes the total squared reprojection error over the six pose
    parameters. The cost never increases across accepted steps; if the
    iteration budget runs out the best iterate is returned with
    ``converged=False``.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pixels) < 4:
        raise ValueError("refinement needs at least 4 correspondences")

    def cost_and_system(p: Pose):
        pc = p.world_to_camera(points)
        z = pc[:, 2]
        valid = z > 1e-9
        u = intrinsics.fx * pc[:, 0] / np.where(valid, z, 1.0) + intrinsics.cx
        v = intrinsics.fy * pc[:, 1] / np.where(valid, z, 1.0) + intrinsics.cy
        r = np.column_stack([u - pixels[:, 0], v - pixels[:, 1]])[valid]
        cost = float(np.sum(r * r))
        JtJ = np.zeros((6, 6))
        Jtr = np.zeros(6)
        pcv = pc[valid]
        for i in range(len(pcv)):
            x, y, zz = pcv[i]
            Jp = np.array(
                [
                    [intrinsics.fx / zz, 0.0, -intrinsics.fx * x / (zz * zz)],
                    [0.0, intrinsics.fy / zz, -intrinsics.fy * y / (zz * zz)],
                ]
            )
            Ji = np.hstack([Jp @ (-skew(pcv[i])), Jp @ (-p.R)])
            JtJ += Ji.T @ Ji
            Jtr += Ji.T @ r[i]
        return cost, JtJ, Jtr

    cur = pose
    cost, JtJ, Jtr = cost_and_system(cur)
    history = [cost]
    lam = 1e-6
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        if np.max(np.abs(Jtr)) < 1e-12:
            converged = True
            break
        accepted = False
        for _ in range(12):
            H = JtJ + lam * np.diag(np.maximum(np.diag(JtJ), 1e-12))
            try:
                delta = np.linalg.solve(H, -Jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = Pose(exp_so3(delta[:3]) @ cur.R, cur.c + delta[3:])
            new_cost, new_JtJ, new_Jtr = cost_and_system(cand)
            if new_cost < cost:
                rel = (cost - new_cost) / max(cost, 1e-300)
                cur, cost, JtJ, Jtr = cand, new_cost, new_JtJ, new_Jtr
                history.append(cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel < 1e-12 or np.linalg.norm(delta) < 1e-12:
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            converged = True  # no decreasing step exists at this scale
            break
        if converged:
            break
    return cur, RefineInfo(converged, it, history[0], cost, history)


def lo_ransac(
    matches: list[Correspondence2D3D],
    intrinsics: CameraIntrinsics,
    sensor_prior: Optional[Pose],
    cfg: RansacConfig,
) -> RansacReport:
    """Robust pose estimation with optional gravity gating.

    Deterministic for a fixed seed. Fails (success=False) when no
    hypothesis reaches 4 inliers.
    """
    t_start = time.perf_counter()
    if len(matches) < 3:
        raise ValueError("lo_ransac needs at least 3 matches")
    if cfg.gravity_gate and sensor_prior is None:
        raise ValueError("gravity gate enabled but no sensor prior given")

    pixels = np.array([m.pixel for m in matches])
    points = np.array([m.point for m in matches])
    n = len(matches)
    bearings = bearing_vectors(pixels, intrinsics)
    sensor_gravity = gravity_dir(sensor_prior) if sensor_prior is not None else None
    cos_tau = np.cos(np.radians(cfg.tau_eps))
    world_down_neg = np.array([0.0, 0.0, -1.0])

    rng = np.random.default_rng(cfg.seed)
    best_count = 0
    best_pose: Optional[Pose] = None
    best_mask: Optional[np.ndarray] = None
    scored = 0
    gated = 0
    lo_rounds = 0
    needed = cfg.max_iters
    it = 0

    def adaptive_bound(count: int) -> int:
        w = count / n
        p_good = w**3
        if p_good >= 1.0:
            return 1
        if p_good <= 0.0:
            return cfg.max_iters
        bound = np.log(1.0 - cfg.confidence) / np.log(1.0 - p_good)
        return int(min(np.ceil(bound), cfg.max_iters))

    def score_at(pose: Pose, threshold: float) -> np.ndarray:
        return kernels.score_pose(
            pose.R,
            pose.t,
            intrinsics.fx,
            intrinsics.fy,
            intrinsics.cx,
            intrinsics.cy,
            points,
            pixels,
            threshold,
        )

    def local_optimize(pose: Pose, mask: np.ndarray):
        """One LO round: refine on inliers over an annealed threshold.

        The refinement repeats on progressively tighter consensus bands
        so borderline matches stop biasing the model; the returned mask
        is always evaluated at the configured threshold.
        """
        nonlocal lo_rounds
        lo_rounds += 1
        best_pose, best_mask = pose, mask
        work_pose = pose
        work_mask = mask
        for factor in (1.0, 0.7, 0.5, 0.35, 0.25, 0.18):
            if factor != 1.0:
                tighter = score_at(work_pose, max(factor * cfg.inlier_px, 0.25))
                if int(tighter.sum()) < max(8, int(0.25 * mask.sum())):
                    break
                work_mask = tighter
            idx = np.nonzero(work_mask)[0]
            if len(idx) < 6:
                break
            work_pose, _ = refine_pose(
                work_pose, pixels[idx], points[idx], intrinsics
            )
            full_mask = score_at(work_pose, cfg.inlier_px)
            if int(full_mask.sum()) >= int(best_mask.sum()):
                best_pose, best_mask = work_pose, full_mask
        return best_pose, best_mask

    while it < needed and it < cfg.max_iters:
        it += 1
        sample = rng.choice(n, size=3, replace=False)
        if not _check_sample(pixels[sample], points[sample]):
            continue
        Rs, ts = kernels.p3p_solve(bearings[sample], points[sample])
        for R, t in zip(Rs, ts):
            if cfg.gravity_gate:
                hyp_gravity = R @ world_down_neg
                if float(hyp_gravity @ sensor_gravity) < cos_tau:
                    gated += 1
                    continue
            mask = kernels.score_pose(
                R,
                t,
                intrinsics.fx,
                intrinsics.fy,
                intrinsics.cx,
                intrinsics.cy,
                points,
                pixels,
                cfg.inlier_px,
            )
            scored += 1
            count = int(mask.sum())
            if count > best_count:
                best_count = count
                best_pose = Pose.from_Rt(R, t)
                best_mask = mask
                if count >= 4:
                    best_pose, best_mask = local_optimize(best_pose, best_mask)
                    best_count = int(best_mask.sum())
                needed = adaptive_bound(best_count)

    success = best_count >= 4 and best_pose is not None
    if success:
        best_pose, best_mask = local_optimize(best_pose, best_mask)
        best_count = int(best_mask.sum())
    inliers = np.nonzero(best_mask)[0] if best_mask is not None else np.zeros(0, dtype=int)
    return RansacReport(
        pose=best_pose if success else None,
        inliers=inliers if success else np.zeros(0, dtype=int),
        success=success,
        iterations=it,
        hypotheses_scored=scored,
        hypotheses_gated=gated,
        lo_rounds=lo_rounds,
        wall_time=time.perf_counter() - t_start,
        message="" if success else f"no hypothesis reached 4 inliers ({n} matches)",
    )
