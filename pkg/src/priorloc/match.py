"""Direct 2D-3D matching: track aggregation, coarse dual-softmax matching,
and sub-pixel refinement.

Feature grids follow the fixed strides 8 (coarse) and 2 (fine). A grid
cell (row r, col c) at stride s covers the pixel block starting at
(c*s, r*s) and its center sits at ((c+0.5)*s, (r+0.5)*s); sampling a grid
at pixel (u, v) therefore reads grid coordinates (u/s - 0.5, v/s - 0.5).

Learned descriptor transforms (the attention stages of the original
design) are a pluggable seam: every matching function accepts a
``transform`` callable applied to both descriptor sides, identity by
default. ``l2_normalize`` is provided as a ready-made transform.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geom import CameraIntrinsics, Pose, project

__all__ = [
    "AggregatedSubMap",
    "COARSE_STRIDE",
    "FINE_STRIDE",
    "FeatureMaps",
    "Match",
    "MatchConfig",
    "MatchSet",
    "SubMap",
    "SubMapPoint",
    "aggregate",
    "coarse_match",
    "dual_softmax",
    "fine_refine",
    "l2_normalize",
    "load_feature_maps",
    "load_submap",
    "save_feature_maps",
    "save_submap",
]

COARSE_STRIDE = 8
FINE_STRIDE = 2

_FM_MAGIC = b"SLFM"
_SM_MAGIC = b"SLSM"
_SM_VERSION = 1


def l2_normalize(desc: np.ndarray) -> np.ndarray:
    """Row-normalize descriptors; usable as a descriptor transform."""
    desc = np.asarray(desc, dtype=float)
    n = np.linalg.norm(desc, axis=-1, keepdims=True)
    return desc / np.maximum(n, 1e-12)


@dataclass(frozen=True)
class FeatureMaps:
    """Coarse and fine dense descriptor grids of one image."""

    coarse: np.ndarray  # (H/8, W/8, C_c)
    fine: np.ndarray  # (H/2, W/2, C_f)
    height: int
    width: int

    def __post_init__(self):
        if self.height % COARSE_STRIDE or self.width % COARSE_STRIDE:
            raise ValueError("image size must be divisible by the coarse stride")
        hc, wc = self.height // COARSE_STRIDE, self.width // COARSE_STRIDE
        hf, wf = self.height // FINE_STRIDE, self.width // FINE_STRIDE
        if self.coarse.shape[:2] != (hc, wc):
            raise ValueError(f"coarse grid shape {self.coarse.shape} != ({hc},{wc},C)")
        if self.fine.shape[:2] != (hf, wf):
            raise ValueError(f"fine grid shape {self.fine.shape} != ({hf},{wf},C)")

    def sample_coarse(self, pixels: np.ndarray) -> np.ndarray:
        return _sample(self.coarse, pixels, COARSE_STRIDE)

    def sample_fine(self, pixels: np.ndarray) -> np.ndarray:
        return _sample(self.fine, pixels, FINE_STRIDE)


def _sample(grid: np.ndarray, pixels: np.ndarray, stride: int) -> np.ndarray:
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    gx = pixels[:, 0] / stride - 0.5
    gy = pixels[:, 1] / stride - 0.5
    return kernels.bilinear_sample(np.ascontiguousarray(grid, dtype=float), gx, gy)


@dataclass(frozen=True)
class SubMapPoint:
    point_id: int
    position: np.ndarray
    track: tuple  # ((image_id, pixel (2,)), ...)


@dataclass(frozen=True)
class SubMap:
    """Covisible 3D points with their observation tracks."""

    points: tuple

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class AggregatedSubMap:
    """Submap with per-point pooled coarse/fine descriptors, array form."""

    point_ids: np.ndarray  # (M,)
    positions: np.ndarray  # (M, 3)
    coarse: np.ndarray  # (M, C_c)
    fine: np.ndarray  # (M, C_f)

    def __len__(self) -> int:
        return len(self.point_ids)


@dataclass(frozen=True)
class MatchConfig:
    temperature: float = 0.1
    theta: float = 0.05  # confidence threshold; 0.005 suits night-time scenes
    window: int = 5

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not (0.0 <= self.theta <= 1.0):
            raise ValueError("theta must be in [0, 1]")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")


@dataclass(frozen=True)
class Match:
    point_id: int
    coarse_cell: int
    refined_px: np.ndarray
    confidence: float


@dataclass(frozen=True)
class MatchSet:
    matches: tuple

    def __len__(self) -> int:
        return len(self.matches)

    def pixels(self) -> np.ndarray:
        return np.array([m.refined_px for m in self.matches]).reshape(-1, 2)

    def point_ids(self) -> np.ndarray:
        return np.array([m.point_id for m in self.matches], dtype=int)


def aggregate(
    submap: SubMap,
    maps: dict[str, FeatureMaps],
    cameras: dict[str, tuple[Pose, CameraIntrinsics]] | None = None,
) -> tuple[AggregatedSubMap, list[int]]:
    """Average-pool per-track bilinear samples into 3D descriptors.

    With ``cameras`` given, each point is reprojected into every track
    image and sampled there; otherwise the stored track pixels are used.
    Track entries that fall outside their image (or behind the camera)
    are skipped; points with no usable entry are excluded and returned
    in the second element.
    """
    cdim = next(iter(maps.values())).coarse.shape[2] if maps else 0
    fdim = next(iter(maps.values())).fine.shape[2] if maps else 0
    n_pts = len(submap.points)
    acc_c = np.zeros((n_pts, cdim))
    acc_f = np.zeros((n_pts, fdim))
    counts = np.zeros(n_pts, dtype=int)

    # group sample requests by image so each grid is sampled in one batch
    requests: dict[str, list] = {}
    for row, p in enumerate(submap.points):
        for image_id, pixel in p.track:
            if image_id in maps:
                requests.setdefault(image_id, []).append((row, pixel))

    for image_id in sorted(requests):
        fm = maps[image_id]
        rows = np.array([r for r, _ in requests[image_id]], dtype=int)
        if cameras is not None and image_id in cameras:
            pose, intr = cameras[image_id]
            pts3d = np.array([submap.points[r].position for r in rows], dtype=float)
            uv, ok = project(pose, intr, pts3d)
            pixels = uv
            valid = np.asarray(ok, dtype=bool)
        else:
            pixels = np.array([px for _, px in requests[image_id]], dtype=float)
            valid = np.ones(len(rows), dtype=bool)
        valid &= (
            (pixels[:, 0] >= 0.0)
            & (pixels[:, 0] <= fm.width - 1)
            & (pixels[:, 1] >= 0.0)
            & (pixels[:, 1] <= fm.height - 1)
        )
        if not valid.any():
            continue
        rows = rows[valid]
        pixels = pixels[valid]
        np.add.at(acc_c, rows, fm.sample_coarse(pixels))
        np.add.at(acc_f, rows, fm.sample_fine(pixels))
        np.add.at(counts, rows, 1)

    keep = counts > 0
    excluded = [p.point_id for p, k in zip(submap.points, keep) if not k]
    ids = np.array([p.point_id for p, k in zip(submap.points, keep) if k], dtype=int)
    positions = (
        np.array([p.position for p, k in zip(submap.points, keep) if k], dtype=float)
        if keep.any()
        else np.zeros((0, 3))
    )
    denom = counts[keep][:, None] if keep.any() else np.zeros((0, 1))
    return (
        AggregatedSubMap(ids, positions, acc_c[keep] / np.maximum(denom, 1), acc_f[keep] / np.maximum(denom, 1)),
        excluded,
    )


def dual_softmax(correlation: np.ndarray) -> np.ndarray:
    """Elementwise product of row-wise and column-wise softmaxes.

    The caller applies any temperature scaling to the correlations first,
    so this stays a pure matrix operation.
    """
    C = np.asarray(correlation, dtype=float)
    row = np.exp(C - C.max(axis=1, keepdims=True))
    row /= row.sum(axis=1, keepdims=True)
    col = np.exp(C - C.max(axis=0, keepdims=True))
    col /= col.sum(axis=0, keepdims=True)
    return row * col


def coarse_match(
    query_coarse: np.ndarray,
    submap_coarse: np.ndarray,
    cfg: MatchConfig,
    transform=None,
) -> list[tuple[int, int, float]]:
    """Mutual-nearest-neighbor matches above the confidence threshold.

    ``query_coarse``: (N, C) flattened grid descriptors; ``submap_coarse``:
    (M, C) per-point descriptors. Returns (cell, point_index, probability)
    triples sorted by cell. Ties inside an argmax resolve to the lowest
    index. Zero matches is a valid result.
    """
    q = np.asarray(query_coarse, dtype=float)
    s = np.asarray(submap_coarse, dtype=float)
    if transform is not None:
        q = transform(q)
        s = transform(s)
    if q.shape[0] == 0 or s.shape[0] == 0:
        return []
    P = dual_softmax((q @ s.T) / cfg.temperature)
    best_point = P.argmax(axis=1)  # first max wins: lowest point index
    best_cell = P.argmax(axis=0)
    out = []
    for i in range(P.shape[0]):
        j = best_point[i]
        if best_cell[j] == i and P[i, j] >= cfg.theta:
            out.append((i, int(j), float(P[i, j])))
    return out


def fine_refine(
    coarse_cell: int,
    query_fine: np.ndarray,
    point_fine_desc: np.ndarray,
    cfg: MatchConfig,
    image_size: tuple[int, int],
    transform=None,
    center_px=None,
) -> tuple[np.ndarray, float]:
    """Refine a coarse cell to a sub-pixel position via heatmap expectation.

    A w x w window of fine-grid cells is cropped around the coarse cell
    center (shifted, not padded, at borders), the point descriptor is
    correlated with every cell, and the softmax heatmap's 2D expectation
    is returned in full-image pixel coordinates together with the peak
    probability. Passing ``center_px`` re-centers the window there
    instead (used for iterated refinement passes).
    """
    height, width = image_size
    gh, gw = query_fine.shape[:2]
    cells_w = width // COARSE_STRIDE
    r, c = divmod(int(coarse_cell), cells_w)

    ratio = COARSE_STRIDE // FINE_STRIDE
    # fine-grid coords of the window center
    if center_px is None:
        gx = (c + 0.5) * ratio - 0.5
        gy = (r + 0.5) * ratio - 0.5
    else:
        gx = center_px[0] / FINE_STRIDE - 0.5
        gy = center_px[1] / FINE_STRIDE - 0.5
    half = cfg.window // 2
    cx = int(np.floor(gx + 0.5))
    cy = int(np.floor(gy + 0.5))
    x0 = min(max(cx - half, 0), max(gw - cfg.window, 0))
    y0 = min(max(cy - half, 0), max(gh - cfg.window, 0))
    x1 = min(x0 + cfg.window, gw)
    y1 = min(y0 + cfg.window, gh)

    window = np.asarray(query_fine, dtype=float)[y0:y1, x0:x1]
    wh, ww = window.shape[:2]
    cells = window.reshape(wh * ww, -1)
    desc = np.asarray(point_fine_desc, dtype=float)
    if transform is not None:
        cells = transform(cells)
        desc = transform(desc.reshape(1, -1))[0]

    scores = cells @ desc / cfg.temperature
    scores -= scores.max()
    p = np.exp(scores)
    p /= p.sum()

    ys, xs = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
    u = (xs.ravel() + 0.5) * FINE_STRIDE
    v = (ys.ravel() + 0.5) * FINE_STRIDE
    refined = np.array([float(p @ u), float(p @ v)])
    return refined, float(p.max())


def save_feature_maps(path, fm: FeatureMaps) -> None:
    """SLFM: magic, H, W, C_c, C_f, then float32 row-major grids."""
    with open(path, "wb") as f:
        f.write(_FM_MAGIC)
        f.write(
            struct.pack(
                "<IIII", fm.height, fm.width, fm.coarse.shape[2], fm.fine.shape[2]
            )
        )
        f.write(np.ascontiguousarray(fm.coarse, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(fm.fine, dtype="<f4").tobytes())


def load_feature_maps(path) -> FeatureMaps:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _FM_MAGIC:
            raise ValueError(f"not a feature map file (magic {magic!r})")
        H, W, cc, cf = struct.unpack("<IIII", f.read(16))
        hc, wc = H // COARSE_STRIDE, W // COARSE_STRIDE
        hf, wf = H // FINE_STRIDE, W // FINE_STRIDE
        coarse = np.frombuffer(f.read(4 * hc * wc * cc), dtype="<f4").reshape(
            hc, wc, cc
        )
        fine = np.frombuffer(f.read(4 * hf * wf * cf), dtype="<f4").reshape(hf, wf, cf)
    return FeatureMaps(coarse.astype(float), fine.astype(float), H, W)


def save_submap(path, submap: SubMap) -> None:
    with open(path, "wb") as f:
        f.write(_SM_MAGIC)
        f.write(struct.pack("<II", _SM_VERSION, len(submap.points)))
        for p in submap.points:
            f.write(struct.pack("<I", p.point_id))
            f.write(struct.pack("<3d", *np.asarray(p.position, dtype=float)))
            f.write(struct.pack("<I", len(p.track)))
            for image_id, pixel in p.track:
                ident = image_id.encode("utf-8")
                f.write(struct.pack("<H", len(ident)))
                f.write(ident)
                f.write(struct.pack("<2d", float(pixel[0]), float(pixel[1])))


def load_submap(path) -> SubMap:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _SM_MAGIC:
            raise ValueError(f"not a submap file (magic {magic!r})")
        version, count = struct.unpack("<II", f.read(8))
        if version != _SM_VERSION:
            raise ValueError(f"unsupported submap version {version}")
        points = []
        for _ in range(count):
            (pid,) = struct.unpack("<I", f.read(4))
            pos = np.array(struct.unpack("<3d", f.read(24)))
            (tlen,) = struct.unpack("<I", f.read(4))
            track = []
            for _ in range(tlen):
                (id_len,) = struct.unpack("<H", f.read(2))
                image_id = f.read(id_len).decode("utf-8")
                px = np.array(struct.unpack("<2d", f.read(16)))
                track.append((image_id, px))
            points.append(SubMapPoint(pid, pos, tuple(track)))
    return SubMap(tuple(points))


def dump_submap_text(path, submap: SubMap) -> None:
    with open(path, "w") as f:
        f.write(f"# SLSM dump: {len(submap.points)} points\n")
        for p in submap.points:
            f.write(
                f"{p.point_id} ({p.position[0]:.3f},{p.position[1]:.3f},{p.position[2]:.3f}) "
                f"track={len(p.track)}\n"
            )
