"""Synthetic localization scenes.

The world is a sphere of 3D points watched by cameras on a surrounding
ring. Descriptor grids are rendered by intersecting each grid cell's ray
with the sphere and evaluating a smooth random-Fourier descriptor field
at the hit point, so an uncorrupted query matches its map almost
perfectly and corruption degrades matching smoothly. Ground truth is
written to a separate file that the localization pipeline never reads.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geom import CameraIntrinsics, Pose, exp_so3, project, rot_z, unit
from ..match import (
    COARSE_STRIDE,
    FINE_STRIDE,
    FeatureMaps,
    SubMap,
    SubMapPoint,
    dump_submap_text,
    save_feature_maps,
    save_submap,
)
from ..retrieval import DescriptorIndex, IndexEntry, dump_index_text, save_index
from ..sensors import SensorNoiseModel, exact_reading, perturb, save_sensor_log
from ..geom import quat_from_matrix

__all__ = ["SceneSpec", "generate_scene", "load_scene_meta", "load_gt_poses"]

_DOWN = np.array([0.0, 0.0, -1.0])

# descriptor-field tuning, in meters on the scene surface: the coarse
# field must decorrelate across one coarse cell, the fine field must stay
# bilinear-interpolable at the fine-grid spacing while its gain keeps the
# refinement softmax peak near one pixel wide
_COARSE_SCALE = 0.8
_FINE_SCALE = 0.3
_FINE_GAIN = 1.5
# minimum cosine between surface normal and view direction; grazing
# points alias in the rendered grids
_MIN_FACING = 0.30


@dataclass(frozen=True)
class SceneSpec:
    n_points: int = 620
    n_refs: int = 48
    n_queries: int = 50
    extent: float = 60.0
    c_coarse: int = 24
    c_fine: int = 16
    noise: SensorNoiseModel = SensorNoiseModel(gps_sigma_xy=3.0, compass_sigma=10.0, gravity_sigma=0.5)
    outlier_fraction: float = 0.0
    descriptor_corruption: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_points, self.n_refs) < 1 or self.n_queries < 0:
            raise ValueError("counts must be >= 1 (queries may be 0)")
        if self.extent <= 0:
            raise ValueError("extent must be > 0")
        if not (0.0 <= self.outlier_fraction < 1.0):
            raise ValueError("outlier_fraction must be in [0, 1)")
        if not (0.0 <= self.descriptor_corruption <= 1.0):
            raise ValueError("descriptor_corruption must be in [0, 1]")


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(260.0, 260.0, 128.0, 96.0, 256, 192)


class _FourierField:
    """Smooth descriptor field over 3D space, rows normalized to ``gain``.

    The length scale sets how fast descriptors decorrelate with 3D
    distance; the gain sharpens correlation-softmax peaks downstream
    without touching the matcher's temperature.
    """

    def __init__(self, dim: int, length_scale: float, center, seed: int, gain: float = 1.0):
        rng = np.random.default_rng(seed)
        self.omega = rng.normal(0.0, 1.0 / length_scale, size=(dim, 3))
        self.phase = rng.uniform(0.0, 2.0 * np.pi, size=dim)
        self.center = np.asarray(center, dtype=float)
        self.gain = gain

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.cos((points - self.center) @ self.omega.T + self.phase)
        return self.gain * vals / np.linalg.norm(vals, axis=1, keepdims=True)


def _look_at(position: np.ndarray, target: np.ndarray, roll_rad: float = 0.0) -> Pose:
    z = unit(target - position)
    x = np.cross(_DOWN, z)
    if np.linalg.norm(x) < 1e-9:  # looking straight up/down
        x = np.array([1.0, 0.0, 0.0])
    x = unit(x)
    y = np.cross(z, x)
    R_cw = np.column_stack([x, y, z]).T
    if roll_rad:
        R_cw = rot_z(roll_rad) @ R_cw  # roll about the camera's own axis
    return Pose(R_cw, position)


def _ray_sphere_points(
    pose: Pose, intr: CameraIntrinsics, stride: int, center, radius: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell surface point and hit mask; misses return backdrop points.

    Rays that miss the sphere sample a far backdrop along the ray
    direction instead of a silhouette extension: silhouette lookalikes
    would otherwise fabricate near-rim correspondences.
    """
    gh, gw = intr.height // stride, intr.width // stride
    jj, ii = np.meshgrid(np.arange(gw), np.arange(gh))
    u = (jj.ravel() + 0.5) * stride
    v = (ii.ravel() + 0.5) * stride
    d_cam = np.column_stack(
        [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(u.size)]
    )
    d_world = d_cam @ pose.R  # R_wc @ d
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    oc = pose.c - center
    b = d_world @ oc
    disc = b * b - (oc @ oc - radius * radius)
    hit = disc >= 0.0
    t = np.where(hit, -b - np.sqrt(np.maximum(disc, 0.0)), 0.0)
    hit &= t > 1e-6
    pts = pose.c + t[:, None] * d_world
    pts[~hit] = center + 20.0 * radius * d_world[~hit]
    return pts.reshape(gh, gw, 3), hit.reshape(gh, gw)


def _render_maps(
    pose: Pose,
    intr: CameraIntrinsics,
    coarse_field: _FourierField,
    fine_field: _FourierField,
    bg_coarse: _FourierField,
    bg_fine: _FourierField,
    center,
    radius: float,
) -> FeatureMaps:
    def render(stride, field, bg_field):
        pts, hit = _ray_sphere_points(pose, intr, stride, center, radius)
        vals = field(pts.reshape(-1, 3))
        miss = ~hit.ravel()
        if miss.any():
            vals[miss] = bg_field(pts.reshape(-1, 3)[miss])
        return vals.reshape(pts.shape[0], pts.shape[1], -1)

    coarse = render(COARSE_STRIDE, coarse_field, bg_coarse)
    fine = render(FINE_STRIDE, fine_field, bg_fine)
    return FeatureMaps(coarse, fine, intr.height, intr.width)


def _corrupt(fm: FeatureMaps, amount: float, rng: np.random.Generator) -> FeatureMaps:
    """Blend query grids with seeded noise to mimic an appearance gap.

    The noise is mostly an image-wide descriptor shift (one random
    direction per query), which wrecks pooled global descriptors the way
    a day/night gap wrecks retrieval, while correlation softmaxes cancel
    much of a constant shift so local matching degrades gradually. A
    smaller per-cell component adds local damage on top.
    """
    if amount <= 0.0:
        return fm
    a_img = np.sqrt(0.85)
    a_cell = np.sqrt(0.15)

    def blend(grid):
        img_noise = rng.normal(size=grid.shape[2])
        img_noise /= np.linalg.norm(img_noise)
        cell_noise = rng.normal(size=grid.shape)
        cell_noise /= np.linalg.norm(cell_noise, axis=2, keepdims=True)
        scale = np.linalg.norm(grid, axis=2, keepdims=True)
        return (1.0 - amount) * grid + amount * scale * (
            a_img * img_noise + a_cell * cell_noise
        )

    return FeatureMaps(blend(fm.coarse), blend(fm.fine), fm.height, fm.width)


def _global_descriptor(fm: FeatureMaps) -> np.ndarray:
    mean = fm.coarse.reshape(-1, fm.coarse.shape[2]).mean(axis=0)
    return mean / np.linalg.norm(mean)


def generate_scene(spec: SceneSpec, out_dir) -> None:
    """Write a complete dataset; byte-identical for a fixed spec."""
    out = Path(out_dir)
    (out / "featmaps").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    intr = default_intrinsics()

    center = np.array([spec.extent / 2.0, spec.extent / 2.0, 6.0])
    radius = spec.extent / 5.0
    ring = radius + 0.2333 * spec.extent

    coarse_field = _FourierField(spec.c_coarse, _COARSE_SCALE, center, spec.seed * 31 + 1)
    fine_field = _FourierField(spec.c_fine, _FINE_SCALE, center, spec.seed * 31 + 2, gain=_FINE_GAIN)
    # independent background ("sky") fields for rays that miss the scene
    bg_coarse = _FourierField(spec.c_coarse, 40.0, center, spec.seed * 31 + 3)
    bg_fine = _FourierField(spec.c_fine, 15.0, center, spec.seed * 31 + 4, gain=_FINE_GAIN)

    # minimum point separation: near-duplicate points split the
    # dual-softmax mass between lookalike descriptors and starve matching
    min_sep = 0.85 * _COARSE_SCALE
    buf = np.empty((spec.n_points, 3))
    n_points = 0
    attempts = 0
    while n_points < spec.n_points and attempts < 200 * spec.n_points:
        attempts += 1
        v = rng.normal(size=3)
        p = center + radius * v / np.linalg.norm(v)
        if n_points == 0 or np.min(
            np.sum((buf[:n_points] - p) ** 2, axis=1)
        ) >= min_sep * min_sep:
            buf[n_points] = p
            n_points += 1
    points = buf[:n_points].copy()

    # decoy surface locations for outlier-corrupted points
    n_out = int(round(spec.outlier_fraction * n_points))
    outlier_ids = set(rng.choice(n_points, size=n_out, replace=False).tolist())
    decoy_dirs = rng.normal(size=(n_points, 3))
    decoy_dirs /= np.linalg.norm(decoy_dirs, axis=1, keepdims=True)
    decoys = center + radius * decoy_dirs

    def ref_pose(k: int) -> Pose:
        ang = 2.0 * np.pi * k / spec.n_refs
        pos = center + np.array([ring * np.cos(ang), ring * np.sin(ang), 0.0])
        pos[2] = rng.uniform(1.0, 3.0)
        target = center + rng.normal(0.0, 1.5, 3)
        return _look_at(pos, target, rng.normal(0.0, np.radians(3.0)))

    def query_pose() -> Pose:
        # queries wander near the mapped ring, like a revisit of the
        # original capture path
        ang = rng.uniform(0.0, 2.0 * np.pi)
        r = ring + rng.uniform(-1.5, 1.5)
        pos = center + np.array([r * np.cos(ang), r * np.sin(ang), 0.0])
        pos[2] = rng.uniform(1.0, 3.0)
        target = center + rng.normal(0.0, 2.0, 3)
        return _look_at(pos, target, rng.normal(0.0, np.radians(5.0)))

    ref_ids = [f"r{k:03d}" for k in range(spec.n_refs)]
    ref_poses = {rid: ref_pose(k) for k, rid in enumerate(ref_ids)}
    query_ids = [f"q{k:03d}" for k in range(spec.n_queries)]
    query_poses = {qid: query_pose() for qid in query_ids}

    def visible(pose: Pose, pts: np.ndarray) -> np.ndarray:
        uv, ok = project(pose, intr, pts)
        depth = pose.world_to_camera(pts)[:, 2]
        normals = (pts - center) / radius
        to_cam = pose.c - pts
        to_cam = to_cam / np.linalg.norm(to_cam, axis=1, keepdims=True)
        facing = np.sum(normals * to_cam, axis=1) > _MIN_FACING
        return ok & facing & (depth > 2.0) & intr.contains(uv, margin=1.0)

    # where matching should later find each point: its decoy for outliers
    effective = points.copy()
    for pid in outlier_ids:
        effective[pid] = decoys[pid]

    observed: dict[str, list[int]] = {rid: [] for rid in ref_ids}
    tracks: dict[int, list] = {pid: [] for pid in range(n_points)}
    for rid in ref_ids:
        pose = ref_poses[rid]
        vis = visible(pose, effective)
        uv, _ = project(pose, intr, effective)
        for pid in np.nonzero(vis)[0]:
            observed[rid].append(int(pid))
            tracks[int(pid)].append((rid, uv[pid].copy()))

    entries = []
    for rid in ref_ids:
        pose = ref_poses[rid]
        fm = _render_maps(pose, intr, coarse_field, fine_field, bg_coarse, bg_fine, center, radius)
        save_feature_maps(out / "featmaps" / f"{rid}.slfm", fm)
        entries.append(
            IndexEntry(rid, pose, _global_descriptor(fm), tuple(observed[rid]))
        )
    index = DescriptorIndex(entries)
    save_index(out / "index.sldx", index)
    dump_index_text(out / "index_debug.txt", index)

    submap = SubMap(
        tuple(
            SubMapPoint(pid, points[pid], tuple(tracks[pid]))
            for pid in range(n_points)
            if tracks[pid]
        )
    )
    save_submap(out / "submap.slsm", submap)
    dump_submap_text(out / "submap_debug.txt", submap)

    readings = {}
    for qi, qid in enumerate(query_ids):
        pose = query_poses[qid]
        fm = _render_maps(pose, intr, coarse_field, fine_field, bg_coarse, bg_fine, center, radius)
        q_rng = np.random.default_rng(spec.seed * 10007 + 541 * qi + 7)
        fm = _corrupt(fm, spec.descriptor_corruption, q_rng)
        save_feature_maps(out / "featmaps" / f"{qid}.slfm", fm)
        clean = exact_reading(pose, with_alt=False)
        readings[qid] = perturb(clean, spec.noise, q_rng)
    save_sensor_log(out / "sensors.jsonl", readings)

    with open(out / "queries.txt", "w") as f:
        for qid in query_ids:
            f.write(qid + "\n")

    with open(out / "gt_poses.csv", "w") as f:
        f.write("query_id,qw,qx,qy,qz,cx,cy,cz\n")
        for qid in query_ids:
            pose = query_poses[qid]
            q = quat_from_matrix(pose.R)
            f.write(
                f"{qid},{q[0]:.12f},{q[1]:.12f},{q[2]:.12f},{q[3]:.12f},"
                f"{pose.c[0]:.9f},{pose.c[1]:.9f},{pose.c[2]:.9f}\n"
            )

    meta = configparser.ConfigParser()
    meta["scene"] = {
        "n_points": str(spec.n_points),
        "n_refs": str(spec.n_refs),
        "n_queries": str(spec.n_queries),
        "extent": repr(spec.extent),
        "c_coarse": str(spec.c_coarse),
        "c_fine": str(spec.c_fine),
        "outlier_fraction": repr(spec.outlier_fraction),
        "descriptor_corruption": repr(spec.descriptor_corruption),
        "seed": str(spec.seed),
    }
    meta["noise"] = {
        "gps_sigma_xy": repr(spec.noise.gps_sigma_xy),
        "compass_sigma": repr(spec.noise.compass_sigma),
        "gravity_sigma": repr(spec.noise.gravity_sigma),
        "seed": str(spec.noise.seed),
    }
    meta["camera"] = {
        "fx": repr(intr.fx),
        "fy": repr(intr.fy),
        "cx": repr(intr.cx),
        "cy": repr(intr.cy),
        "width": str(intr.width),
        "height": str(intr.height),
    }
    with open(out / "scene.ini", "w") as f:
        meta.write(f)


def load_scene_meta(dataset_dir) -> tuple[SceneSpec, CameraIntrinsics]:
    parser = configparser.ConfigParser()
    read = parser.read(str(Path(dataset_dir) / "scene.ini"))
    if not read:
        raise FileNotFoundError(f"no scene.ini under {dataset_dir}")
    s = parser["scene"]
    n = parser["noise"]
    c = parser["camera"]
    spec = SceneSpec(
        n_points=s.getint("n_points"),
        n_refs=s.getint("n_refs"),
        n_queries=s.getint("n_queries"),
        extent=s.getfloat("extent"),
        c_coarse=s.getint("c_coarse"),
        c_fine=s.getint("c_fine"),
        noise=SensorNoiseModel(
            gps_sigma_xy=n.getfloat("gps_sigma_xy"),
            compass_sigma=n.getfloat("compass_sigma"),
            gravity_sigma=n.getfloat("gravity_sigma"),
            seed=n.getint("seed"),
        ),
        outlier_fraction=s.getfloat("outlier_fraction"),
        descriptor_corruption=s.getfloat("descriptor_corruption"),
        seed=s.getint("seed"),
    )
    intr = CameraIntrinsics(
        c.getfloat("fx"),
        c.getfloat("fy"),
        c.getfloat("cx"),
        c.getfloat("cy"),
        c.getint("width"),
        c.getint("height"),
    )
    return spec, intr


def load_gt_poses(dataset_dir) -> dict[str, Pose]:
    from ..geom import matrix_from_quat

    path = Path(dataset_dir) / "gt_poses.csv"
    poses = {}
    with open(path) as f:
        header = f.readline()
        for line in f:
            parts = line.strip().split(",")
            if len(parts) < 8:
                continue
            qid = parts[0]
            qw, qx, qy, qz, cx, cy, cz = (float(v) for v in parts[1:8])
            poses[qid] = Pose(matrix_from_quat([qw, qx, qy, qz]), np.array([cx, cy, cz]))
    return poses
