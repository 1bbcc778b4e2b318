"""Closed-form rigid alignment of two metric point sets, with an ICP loop.

Both maps are metric, so scale stays fixed at one; only rotation and
translation are estimated (Kabsch/Arun SVD solution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["AlignResult", "icp_align", "rigid_align"]


@dataclass(frozen=True)
class AlignResult:
    """target ~ R @ source + t with the reported correspondence RMSE."""

    R: np.ndarray
    t: np.ndarray
    rmse: float
    iterations: int

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.t


class DegenerateConfigurationError(ValueError):
    """Raised when the correspondences do not pin down a rigid transform."""


def _kabsch(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sc = source.mean(axis=0)
    tc = target.mean(axis=0)
    H = (source - sc).T @ (target - tc)
    U, S, Vt = np.linalg.svd(H)
    # rank check catches collinear/degenerate correspondence sets
    scale = S[0] if S[0] > 0 else 1.0
    if S[1] / scale < 1e-9:
        raise DegenerateConfigurationError("correspondences are (near-)collinear")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = tc - R @ sc
    return R, t


def _rmse(source, target, R, t) -> float:
    d = target - (source @ R.T + t)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def rigid_align(source, target, correspondences=None) -> AlignResult:
    """Least-squares rigid transform between corresponding points.

    With ``correspondences`` (pairs of indices into source/target) or
    equal-length point sets, this is the closed-form Kabsch solution.
    Without correspondences the sets are registered by ICP
    (:func:`icp_align`). At least 3 non-collinear pairs are required.
    """
    source = np.asarray(source, dtype=float).reshape(-1, 3)
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    if correspondences is not None:
        pairs = np.asarray(correspondences, dtype=int).reshape(-1, 2)
        src = source[pairs[:, 0]]
        tgt = target[pairs[:, 1]]
    else:
        if len(source) != len(target):
            return icp_align(source, target)
        src, tgt = source, target
    if len(src) < 3:
        raise DegenerateConfigurationError("need at least 3 correspondences")
    R, t = _kabsch(src, tgt)
    return AlignResult(R, t, _rmse(src, tgt, R, t), iterations=1)


def icp_align(
    source,
    target,
    max_iters: int = 100,
    tol: float = 1e-6,
    init: AlignResult | None = None,
) -> AlignResult:
    """Point-to-point ICP: alternate nearest-neighbor matching and Kabsch.

    Iterates until the correspondence RMSE changes by less than ``tol``
    meters. A decent initialization keeps it out of local minima.
    """
    source = np.asarray(source, dtype=float).reshape(-1, 3)
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(source) < 3 or len(target) < 3:
        raise DegenerateConfigurationError("need at least 3 points per set")
    R = init.R if init is not None else np.eye(3)
    t = init.t if init is not None else np.zeros(3)
    tree = cKDTree(target)
    prev_rmse = np.inf
    rmse = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        moved = source @ R.T + t
        _, nn = tree.query(moved)
        R, t = _kabsch(source, target[nn])
        rmse = _rmse(source, target[nn], R, t)
        if abs(prev_rmse - rmse) < tol:
            break
        prev_rmse = rmse
    return AlignResult(R, t, rmse, iterations=it)
