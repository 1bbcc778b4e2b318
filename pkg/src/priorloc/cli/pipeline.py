"""End-to-end localization over a generated (or compatible) dataset.

Per query: sensor prior -> candidate filter -> descriptor top-k ->
track aggregation over the retrieved references -> coarse/fine 2D-3D
matching -> gravity-gated LO-RANSAC. Results are written to
``results.csv`` (fully deterministic for fixed seeds) and wall-clock
stage timings to ``timings.csv`` (excluded from the deterministic
surface on purpose).
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter

import numpy as np

from ..geom import CameraIntrinsics, Pose, quat_from_matrix
from ..match import (
    FeatureMaps,
    MatchConfig,
    SubMap,
    SubMapPoint,
    aggregate,
    coarse_match,
    fine_refine,
    load_feature_maps,
    load_submap,
)
from .. import kernels
from ..pnp import Correspondence2D3D, RansacConfig, lo_ransac, refine_pose
from ..retrieval import DescriptorIndex, filter_candidates, load_index, top_k
from ..sensors import load_sensor_log, prior_pose
from .config import PipelineConfig
from .scene import load_scene_meta

__all__ = ["QueryResult", "localize_dataset", "localize_query"]

RESULT_FIELDS = [
    "query_id",
    "status",
    "reason",
    "tx",
    "ty",
    "tz",
    "qw",
    "qx",
    "qy",
    "qz",
    "n_candidates",
    "fallback",
    "retrieved",
    "n_matches",
    "n_inliers",
    "iterations",
    "hypotheses_scored",
    "hypotheses_gated",
]


@dataclass
class QueryResult:
    query_id: str
    status: str
    reason: str
    pose: Pose | None
    n_candidates: int
    fallback: bool
    retrieved: list
    n_matches: int
    n_inliers: int
    iterations: int
    hypotheses_scored: int
    hypotheses_gated: int
    t_retrieval: float
    t_match: float
    t_pnp: float

    def csv_row(self) -> dict:
        if self.pose is not None:
            q = quat_from_matrix(self.pose.R)
            pose_vals = [
                f"{self.pose.c[0]:.9f}",
                f"{self.pose.c[1]:.9f}",
                f"{self.pose.c[2]:.9f}",
                f"{q[0]:.12f}",
                f"{q[1]:.12f}",
                f"{q[2]:.12f}",
                f"{q[3]:.12f}",
            ]
        else:
            pose_vals = [""] * 7
        return dict(
            zip(
                RESULT_FIELDS,
                [
                    self.query_id,
                    self.status,
                    self.reason,
                    *pose_vals,
                    str(self.n_candidates),
                    str(int(self.fallback)),
                    ";".join(self.retrieved),
                    str(self.n_matches),
                    str(self.n_inliers),
                    str(self.iterations),
                    str(self.hypotheses_scored),
                    str(self.hypotheses_gated),
                ],
            )
        )


class _Dataset:
    def __init__(self, root):
        self.root = Path(root)
        self.spec, self.intrinsics = load_scene_meta(self.root)
        self.index: DescriptorIndex = load_index(self.root / "index.sldx")
        self.submap: SubMap = load_submap(self.root / "submap.slsm")
        self.readings = load_sensor_log(self.root / "sensors.jsonl")
        with open(self.root / "queries.txt") as f:
            self.query_ids = [line.strip() for line in f if line.strip()]
        self.default_alt = float(
            np.median([e.pose.c[2] for e in self.index.entries])
        )
        self._maps: dict[str, FeatureMaps] = {}
        self._point_track = {p.point_id: p for p in self.submap.points}

    def feature_maps(self, image_id: str) -> FeatureMaps:
        fm = self._maps.get(image_id)
        if fm is None:
            fm = load_feature_maps(self.root / "featmaps" / f"{image_id}.slfm")
            self._maps[image_id] = fm
        return fm

    def covisible_submap(self, retrieved: list) -> SubMap:
        keep = set(retrieved)
        pids = sorted(
            {pid for rid in retrieved for pid in self.index[rid].observed_point_ids}
        )
        points = []
        for pid in pids:
            p = self._point_track.get(pid)
            if p is None:
                continue
            track = tuple(t for t in p.track if t[0] in keep)
            if track:
                points.append(SubMapPoint(p.point_id, p.position, track))
        return SubMap(tuple(points))


def _query_seed(base_seed: int, query_index: int) -> int:
    return (base_seed * 1000003 + 7919 * query_index + 17) % (2**31 - 1)


def _tight_refine(pose, matches, intr, inlier_px: float):
    """Second refinement stage on a tighter inlier band.

    The robust estimate keeps everything under the RANSAC threshold;
    re-refining on the best-aligned subset stops borderline matches from
    biasing the final least squares.
    """
    pts = np.array([m.point for m in matches])
    pxs = np.array([m.pixel for m in matches])
    tight = max(0.4 * inlier_px, 0.75)
    mask = kernels.score_pose(
        pose.R, pose.t, intr.fx, intr.fy, intr.cx, intr.cy, pts, pxs, tight
    ).astype(bool)
    if mask.sum() < 10:
        return pose
    refined, _ = refine_pose(pose, pxs[mask], pts[mask], intr)
    kept = kernels.score_pose(
        refined.R, refined.t, intr.fx, intr.fy, intr.cx, intr.cy, pts, pxs, tight
    )
    return refined if int(kept.sum()) >= int(mask.sum()) else pose


def localize_query(ds: _Dataset, qid: str, q_index: int, cfg: PipelineConfig) -> QueryResult:
    intr = ds.intrinsics
    reading = ds.readings[qid]

    t0 = perf_counter()
    prior = prior_pose(reading, default_alt=ds.default_alt)
    fallback = False
    if cfg.use_prior:
        candidates = filter_candidates(ds.index, prior, cfg.retrieval)
        if not candidates:
            candidates = set(ds.index.image_ids)
            fallback = True
    else:
        candidates = set(ds.index.image_ids)
    n_candidates = len(candidates)

    qfm = ds.feature_maps(qid)
    cdim = qfm.coarse.shape[2]
    global_desc = qfm.coarse.reshape(-1, cdim).mean(axis=0)
    global_desc = global_desc / np.linalg.norm(global_desc)
    retrieved = top_k(ds.index, candidates, global_desc, cfg.retrieval.k)
    t_retrieval = perf_counter() - t0

    def failed(reason, n_matches=0):
        return QueryResult(
            qid, "failed", reason, None, n_candidates, fallback, retrieved,
            n_matches, 0, 0, 0, 0, t_retrieval, perf_counter() - t1, 0.0,
        )

    t1 = perf_counter()
    sub = ds.covisible_submap(retrieved)
    if len(sub) == 0:
        return failed("match: empty covisible submap")
    maps = {rid: ds.feature_maps(rid) for rid in retrieved}
    cameras = {rid: (ds.index[rid].pose, intr) for rid in retrieved}
    agg, _excluded = aggregate(sub, maps, cameras)
    if len(agg) == 0:
        return failed("match: no aggregatable points")

    flat_coarse = qfm.coarse.reshape(-1, cdim)
    pairs = coarse_match(flat_coarse, agg.coarse, cfg.match)
    if not pairs:
        return failed("match: zero coarse correspondences")
    matches = []
    for cell, j, p in pairs:
        refined, _peak = fine_refine(
            cell, qfm.fine, agg.fine[j], cfg.match, (qfm.height, qfm.width)
        )
        # second pass re-centered on the first estimate recovers matches
        # whose true position fell at or beyond the first window's edge
        refined, _peak = fine_refine(
            cell,
            qfm.fine,
            agg.fine[j],
            cfg.match,
            (qfm.height, qfm.width),
            center_px=refined,
        )
        matches.append(Correspondence2D3D(refined, agg.positions[j], p))
    t_match = perf_counter() - t1

    t2 = perf_counter()
    if len(matches) < 3:
        return QueryResult(
            qid, "failed", "pnp: fewer than 3 matches", None, n_candidates,
            fallback, retrieved, len(matches), 0, 0, 0, 0,
            t_retrieval, t_match, 0.0,
        )
    ransac_cfg = RansacConfig(
        inlier_px=cfg.pnp.inlier_px,
        max_iters=cfg.pnp.max_iters,
        confidence=cfg.pnp.confidence,
        tau_eps=cfg.pnp.tau_eps,
        gravity_gate=cfg.pnp.gravity_gate,
        seed=_query_seed(cfg.pnp.seed, q_index),
    )
    report = lo_ransac(matches, intr, prior, ransac_cfg)
    pose = report.pose
    if report.success:
        pose = _tight_refine(pose, matches, intr, cfg.pnp.inlier_px)
    t_pnp = perf_counter() - t2

    status = "ok" if report.success else "failed"
    reason = "" if report.success else f"pnp: {report.message}"
    return QueryResult(
        qid, status, reason, pose, n_candidates, fallback, retrieved,
        len(matches), len(report.inliers), report.iterations,
        report.hypotheses_scored, report.hypotheses_gated,
        t_retrieval, t_match, t_pnp,
    )


def localize_dataset(
    dataset_dir, out_dir, cfg: PipelineConfig, workers: int = 1
) -> dict:
    """Run the pipeline over every query; returns a small summary."""
    ds = _Dataset(dataset_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    jobs = list(enumerate(ds.query_ids))
    if workers > 1:
        # preload the map cache to keep worker file access read-only
        for rid in ds.index.image_ids:
            ds.feature_maps(rid)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda job: localize_query(ds, job[1], job[0], cfg), jobs)
            )
    else:
        results = [localize_query(ds, qid, qi, cfg) for qi, qid in jobs]
    results.sort(key=lambda r: r.query_id)

    with open(out / "results.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_FIELDS)
        writer.writeheader()
        for r in results:
            writer.writerow(r.csv_row())
    with open(out / "timings.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["query_id", "retrieval_ms", "match_ms", "pnp_ms", "total_ms"])
        for r in results:
            total = (r.t_retrieval + r.t_match + r.t_pnp) * 1e3
            writer.writerow(
                [
                    r.query_id,
                    f"{r.t_retrieval * 1e3:.3f}",
                    f"{r.t_match * 1e3:.3f}",
                    f"{r.t_pnp * 1e3:.3f}",
                    f"{total:.3f}",
                ]
            )
    n_ok = sum(1 for r in results if r.status == "ok")
    return {
        "n_queries": len(results),
        "n_ok": n_ok,
        "n_failed": len(results) - n_ok,
        "n_fallback": sum(1 for r in results if r.fallback),
    }
