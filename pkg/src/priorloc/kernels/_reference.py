"""Pure-numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available; it is also the reference the extension is tested against.
All functions take/return float64 arrays and mirror the extension's
signatures exactly.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

# Depth threshold shared with geom.project: smaller depths count as behind.
_MIN_DEPTH = 1e-9


def p3p_solve(bearings: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimal perspective-3-point solver (Grunert's distance formulation).

    ``bearings``: (3,3) unit rays in the camera frame, one per row.
    ``points``:   (3,3) world points, one per row.
    Returns (R, t) stacks of shape (n,3,3) and (n,3) with n <= 4 and
    x_cam = R @ x_world + t. Degenerate inputs yield n = 0.
    """
    f1, f2, f3 = np.asarray(bearings, dtype=float)
    X1, X2, X3 = np.asarray(points, dtype=float)

    a = np.linalg.norm(X2 - X3)
    b = np.linalg.norm(X1 - X3)
    c = np.linalg.norm(X1 - X2)
    if min(a, b, c) < 1e-12:
        return np.empty((0, 3, 3)), np.empty((0, 3))
    # collinear 3D points leave the triad (and the pose) undetermined
    area2 = np.linalg.norm(np.cross(X2 - X1, X3 - X1))
    if area2 < 1e-12 * max(a, b, c) ** 2:
        return np.empty((0, 3, 3)), np.empty((0, 3))

    cos_al = float(np.dot(f2, f3))
    cos_be = float(np.dot(f1, f3))
    cos_ga = float(np.dot(f1, f2))

    A = (a * a) / (b * b)
    E = (c * c) / (b * b)
    q = A - E

    # u = N(v) / D(v) after eliminating the first camera-point distance
    N = np.array([q - 1.0, -2.0 * q * cos_be, q + 1.0])
    D = np.array([-2.0 * cos_al, 2.0 * cos_ga])
    W = np.array([-E, 2.0 * E * cos_be, 1.0 - E])

    poly = np.convolve(N, N)
    poly = poly - 2.0 * cos_ga * np.concatenate(([0.0], np.convolve(N, D)))
    poly = poly + np.convolve(np.convolve(D, D), W)

    roots = _real_roots(poly)

    Rs, ts = [], []
    for v in roots:
        if v <= 0.0:
            continue
        denom = D[0] * v + D[1]
        if abs(denom) < 1e-12:
            continue
        u = (N[0] * v * v + N[1] * v + N[2]) / denom
        if u <= 0.0:
            continue
        s1sq = 1.0 + v * v - 2.0 * v * cos_be
        if s1sq <= 0.0:
            continue
        s1 = b / np.sqrt(s1sq)
        s = _polish_distances(
            np.array([s1, u * s1, v * s1]), a, b, c, cos_al, cos_be, cos_ga
        )
        if np.any(s <= 0.0):
            continue
        Y1, Y2, Y3 = s[0] * f1, s[1] * f2, s[2] * f3
        Rt = _triad_transform(X1, X2, X3, Y1, Y2, Y3)
        if Rt is None:
            continue
        R, t = Rt
        # keep only geometrically consistent solutions
        ok = True
        for f, X in ((f1, X1), (f2, X2), (f3, X3)):
            y = R @ X + t
            ny = np.linalg.norm(y)
            if ny < _MIN_DEPTH or 1.0 - np.dot(f, y) / ny > 1e-10:
                ok = False
                break
        if ok:
            Rs.append(R)
            ts.append(t)
    if not Rs:
        return np.empty((0, 3, 3)), np.empty((0, 3))
    return np.stack(Rs), np.stack(ts)


def _real_roots(poly: np.ndarray) -> list[float]:
    """Real, Newton-polished, deduplicated roots of a quartic (or lower)."""
    poly = np.asarray(poly, dtype=float)
    lead = np.max(np.abs(poly))
    if lead == 0.0:
        return []
    poly = poly / lead
    poly = np.trim_zeros(poly, "f")
    if len(poly) <= 1:
        return []
    roots = np.roots(poly)
    deriv = np.polyder(poly)
    out: list[float] = []
    for r in roots:
        if abs(r.imag) > 1e-6 * (1.0 + abs(r.real)):
            continue
        v = float(r.real)
        for _ in range(3):
            fv = np.polyval(poly, v)
            dv = np.polyval(deriv, v)
            if dv == 0.0:
                break
            v -= fv / dv
        if any(abs(v - w) <= 1e-9 * (1.0 + abs(v)) for w in out):
            continue
        out.append(v)
    return out


def _polish_distances(s, a, b, c, cos_al, cos_be, cos_ga):
    """Newton iterations on the law-of-cosines system for the distances.

    The quartic's coefficients limit root accuracy near double roots;
    refining the distances against the exact constraints restores full
    precision.
    """
    for _ in range(3):
        s1, s2, s3 = s
        g = np.array(
            [
                s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * cos_al - a * a,
                s1 * s1 + s3 * s3 - 2.0 * s1 * s3 * cos_be - b * b,
                s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * cos_ga - c * c,
            ]
        )
        J = 2.0 * np.array(
            [
                [0.0, s2 - s3 * cos_al, s3 - s2 * cos_al],
                [s1 - s3 * cos_be, 0.0, s3 - s1 * cos_be],
                [s1 - s2 * cos_ga, s2 - s1 * cos_ga, 0.0],
            ]
        )
        try:
            step = np.linalg.solve(J, g)
        except np.linalg.LinAlgError:
            break
        s = s - step
    return s


def _triad_transform(X1, X2, X3, Y1, Y2, Y3):
    """Rigid transform mapping the world triangle onto the camera triangle."""
    ex = _orthonormal_triad(X1, X2, X3)
    ey = _orthonormal_triad(Y1, Y2, Y3)
    if ex is None or ey is None:
        return None
    R = ey @ ex.T
    t = Y1 - R @ X1
    return R, t


def _orthonormal_triad(P1, P2, P3):
    e1 = P2 - P1
    n1 = np.linalg.norm(e1)
    if n1 < 1e-12:
        return None
    e1 = e1 / n1
    w = P3 - P1
    e2 = w - np.dot(w, e1) * e1
    n2 = np.linalg.norm(e2)
    if n2 < 1e-12:
        return None
    e2 = e2 / n2
    return np.column_stack([e1, e2, np.cross(e1, e2)])


def score_pose(
    R: np.ndarray,
    t: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    points: np.ndarray,
    pixels: np.ndarray,
    threshold: float,
) -> np.ndarray:
    """Reprojection inlier mask (uint8) of a pose over 2D-3D matches.

    A match is an inlier when its camera-frame depth exceeds the shared
    behind-camera threshold and its reprojection error is < ``threshold``
    pixels (Euclidean).
    """
    pc = np.asarray(points, dtype=float) @ np.asarray(R, dtype=float).T + np.asarray(
        t, dtype=float
    )
    z = pc[:, 2]
    in_front = z > _MIN_DEPTH
    safe_z = np.where(in_front, z, 1.0)
    du = fx * pc[:, 0] / safe_z + cx - pixels[:, 0]
    dv = fy * pc[:, 1] / safe_z + cy - pixels[:, 1]
    err2 = du * du + dv * dv
    return (in_front & (err2 < threshold * threshold)).astype(np.uint8)


def bilinear_sample(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a (H, W, C) grid at float coordinates.

    ``x`` indexes columns, ``y`` rows; samples are border-clamped.
    """
    grid = np.asarray(grid, dtype=float)
    H, W, _ = grid.shape
    x = np.clip(np.asarray(x, dtype=float), 0.0, W - 1.0)
    y = np.clip(np.asarray(y, dtype=float), 0.0, H - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (x - x0)[:, None]
    wy = (y - y0)[:, None]
    top = grid[y0, x0] * (1.0 - wx) + grid[y0, x1] * wx
    bot = grid[y1, x0] * (1.0 - wx) + grid[y1, x1] * wx
    return top * (1.0 - wy) + bot * wy
