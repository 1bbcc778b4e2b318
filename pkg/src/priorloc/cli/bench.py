"""Timing benchmarks: compiled vs pure-python kernels, and pipeline stages.

Each measurement excludes a warm-up run. Kernel rows compare every
available backend on identical inputs; the RANSAC row runs the full
robust estimator through each backend.
"""

from __future__ import annotations

import csv
from pathlib import Path
from time import perf_counter

import numpy as np

from .. import kernels
from ..geom import CameraIntrinsics, Pose, project, random_rotation
from ..pnp import Correspondence2D3D, RansacConfig, lo_ransac
from ..sensors import exact_reading, prior_pose

__all__ = ["run_benchmarks"]


def _time(fn, repeats: int) -> float:
    fn()  # warm-up, excluded
    t0 = perf_counter()
    for _ in range(repeats):
        fn()
    return (perf_counter() - t0) / repeats


def _ransac_problem(seed=0, n=300, outlier_frac=0.7):
    rng = np.random.default_rng(seed)
    intr = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    pose = Pose(random_rotation(rng), rng.normal(size=3) * 5)
    pc = np.column_stack(
        [rng.uniform(-3, 3, n), rng.uniform(-2, 2, n), rng.uniform(4, 25, n)]
    )
    pts = pose.camera_to_world(pc)
    uv, _ = project(pose, intr, pts)
    n_out = int(n * outlier_frac)
    idx = rng.choice(n, n_out, replace=False)
    uv[idx] = np.column_stack([rng.uniform(0, 639, n_out), rng.uniform(0, 479, n_out)])
    matches = [Correspondence2D3D(uv[i], pts[i]) for i in range(n)]
    return matches, intr, prior_pose(exact_reading(pose))


def run_benchmarks(dataset_dir=None, out_csv=None, quick=False) -> list:
    """Benchmark all kernel backends; returns and prints the rows."""
    reps_kernel = 200 if quick else 2000
    reps_ransac = 2 if quick else 10

    rng = np.random.default_rng(42)
    pose = Pose(random_rotation(rng), rng.normal(size=3) * 5)
    Yc = rng.normal(size=(3, 3)) * 3 + np.array([0, 0, 10.0])
    Xw = pose.camera_to_world(Yc)
    f = Yc / np.linalg.norm(Yc, axis=1, keepdims=True)
    pts = rng.normal(size=(500, 3)) * 5 + np.array([0, 0, 15.0])
    px = rng.uniform(0, 640, size=(500, 2))
    grid = rng.normal(size=(96, 128, 12))
    gx = rng.uniform(0, 127, size=1000)
    gy = rng.uniform(0, 95, size=1000)
    matches, intr, prior = _ransac_problem()

    rows = []
    for name in sorted(kernels.available_backends()):
        be = kernels.get_backend(name)
        rows.append(
            (
                name,
                "p3p_solve",
                1e6 * _time(lambda: be.p3p_solve(f, Xw), reps_kernel),
                "us/solve",
            )
        )
        rows.append(
            (
                name,
                "score_pose(n=500)",
                1e6
                * _time(
                    lambda: be.score_pose(
                        pose.R, pose.t, 500.0, 500.0, 320.0, 240.0, pts, px, 5.0
                    ),
                    reps_kernel,
                ),
                "us/call",
            )
        )
        rows.append(
            (
                name,
                "bilinear(n=1000)",
                1e6 * _time(lambda: be.bilinear_sample(grid, gx, gy), reps_kernel),
                "us/call",
            )
        )
        with kernels.use_backend(name):
            rows.append(
                (
                    name,
                    "lo_ransac(300 matches, 70% outliers)",
                    1e3
                    * _time(
                        lambda: lo_ransac(
                            matches, intr, prior, RansacConfig(seed=1)
                        ),
                        reps_ransac,
                    ),
                    "ms/run",
                )
            )

    if dataset_dir is not None:
        from .config import PipelineConfig
        from .pipeline import _Dataset, localize_query

        ds = _Dataset(dataset_dir)
        cfg = PipelineConfig()
        n = min(len(ds.query_ids), 3 if quick else 10)
        localize_query(ds, ds.query_ids[0], 0, cfg)  # warm-up (loads maps)
        stage_sums = np.zeros(3)
        for qi in range(n):
            r = localize_query(ds, ds.query_ids[qi], qi, cfg)
            stage_sums += [r.t_retrieval, r.t_match, r.t_pnp]
        for stage, total in zip(("retrieval", "match", "pnp"), stage_sums):
            rows.append(("pipeline", stage, 1e3 * total / n, "ms/query"))

    width = max(len(r[1]) for r in rows) + 2
    print(f"{'backend':<10}{'operation':<{width}}{'time':>12}  unit")
    for name, op, val, unit in rows:
        print(f"{name:<10}{op:<{width}}{val:>12.2f}  {unit}")
    names = {r[0] for r in rows}
    if "native" in names and "python" in names:
        for op in {r[1] for r in rows if r[0] == "native"}:
            tn = next(r[2] for r in rows if r[0] == "native" and r[1] == op)
            tp = next((r[2] for r in rows if r[0] == "python" and r[1] == op), None)
            if tp:
                print(f"speedup {op}: {tp / tn:.1f}x")

    if out_csv is not None:
        with open(out_csv, "w", newline="") as fcsv:
            w = csv.writer(fcsv)
            w.writerow(["backend", "operation", "time", "unit"])
            for r in rows:
                w.writerow([r[0], r[1], f"{r[2]:.3f}", r[3]])
    return rows
