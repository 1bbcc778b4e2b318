"""Evaluation of localization runs: recall tables, retrieval metrics,
timing summaries, and plot-data series.

Localization recall at (meters, degrees) bins counts failed queries as
misses. Retrieval correctness follows the benchmark rule: a reference is
correct within 10 m of the query position and 30 degrees of its
principal axis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geom import Pose, matrix_from_quat, pose_error
from ..retrieval import correctness_labels, load_index, retrieval_metrics
from .scene import load_gt_poses

__all__ = ["EvalThresholds", "EvalDataError", "evaluate_run"]

DEFAULT_BINS = ((0.25, 2.0), (0.5, 5.0), (1.0, 10.0))


class EvalDataError(ValueError):
    """Results reference queries with no ground truth (hard error)."""


@dataclass(frozen=True)
class EvalThresholds:
    bins: tuple = DEFAULT_BINS

    def __post_init__(self):
        prev = (0.0, 0.0)
        for b in self.bins:
            if not (b[0] > prev[0] and b[1] > prev[1]):
                raise ValueError("bins must increase strictly in both components")
            prev = b


def _read_results(path):
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            pose = None
            if rec["status"] == "ok" and rec["tx"]:
                q = [float(rec[k]) for k in ("qw", "qx", "qy", "qz")]
                c = np.array([float(rec[k]) for k in ("tx", "ty", "tz")])
                pose = Pose(matrix_from_quat(q), c)
            retrieved = rec.get("retrieved", "")
            rows.append(
                {
                    "query_id": rec["query_id"],
                    "status": rec["status"],
                    "pose": pose,
                    "retrieved": retrieved.split(";") if retrieved else [],
                }
            )
    return rows


def _recall_at(errors, n_total, t_thr, r_thr) -> float:
    if n_total == 0:
        return 0.0
    hits = sum(1 for te, re in errors if te <= t_thr and re <= r_thr)
    return hits / n_total


def evaluate_run(
    dataset_dir,
    results_dir,
    out_dir,
    thresholds: EvalThresholds = EvalThresholds(),
    ks=(1, 5, 10, 20),
) -> dict:
    """Compute all report tables; returns them as a dict as well."""
    dataset_dir = Path(dataset_dir)
    results_dir = Path(results_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = _read_results(results_dir / "results.csv")
    gt = load_gt_poses(dataset_dir)
    missing = [r["query_id"] for r in rows if r["query_id"] not in gt]
    if missing:
        raise EvalDataError(f"queries without ground truth: {missing[:5]}")

    errors = []
    for r in rows:
        if r["pose"] is not None:
            errors.append(pose_error(r["pose"], gt[r["query_id"]]))
    n_total = len(rows)

    recall = {
        bin_: _recall_at(errors, n_total, bin_[0], bin_[1]) for bin_ in thresholds.bins
    }

    index = load_index(dataset_dir / "index.sldx")
    labels = correctness_labels(index, {r["query_id"]: gt[r["query_id"]] for r in rows})
    ranked = {r["query_id"]: r["retrieved"] for r in rows}
    retrieval = retrieval_metrics(ranked, labels, ks=list(ks))

    with open(out / "recall.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_thresh_m", "r_thresh_deg", "recall"])
        for (tm, rd), val in recall.items():
            w.writerow([f"{tm:g}", f"{rd:g}", f"{val:.6f}"])

    with open(out / "retrieval.csv", "w", newline="") as f:
        w = csv.writer(f)
        # same column set as the benchmark table: R@1, then R@k/P@k pairs
        header, vals = [], []
        for k in ks:
            header.append(f"R@{k}")
            vals.append(f"{retrieval['recall'][k]:.6f}")
            if k > 1:
                header.append(f"P@{k}")
                vals.append(f"{retrieval['precision'][k]:.6f}")
        w.writerow(header)
        w.writerow(vals)

    # plot data: recall as a function of each threshold alone
    with open(out / "recall_curve.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_thresh_m", "recall_translation", "r_thresh_deg", "recall_rotation"])
        t_grid = np.linspace(0.05, 2.0, 40)
        r_grid = np.linspace(0.25, 10.0, 40)
        for tg, rg in zip(t_grid, r_grid):
            w.writerow(
                [
                    f"{tg:.4f}",
                    f"{_recall_at(errors, n_total, tg, np.inf):.6f}",
                    f"{rg:.4f}",
                    f"{_recall_at(errors, n_total, np.inf, rg):.6f}",
                ]
            )

    timing_summary = {}
    timings_path = results_dir / "timings.csv"
    if timings_path.exists():
        cols: dict[str, list] = {}
        with open(timings_path, newline="") as f:
            for rec in csv.DictReader(f):
                for key in ("retrieval_ms", "match_ms", "pnp_ms", "total_ms"):
                    cols.setdefault(key, []).append(float(rec[key]))
        with open(out / "timing_summary.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["stage", "mean_ms", "median_ms"])
            for key, vals in cols.items():
                stage = key[:-3]
                timing_summary[stage] = (float(np.mean(vals)), float(np.median(vals)))
                w.writerow(
                    [stage, f"{np.mean(vals):.3f}", f"{np.median(vals):.3f}"]
                )

    n_ok = sum(1 for r in rows if r["status"] == "ok")
    with open(out / "report.txt", "w") as f:
        f.write(f"queries: {n_total}  localized: {n_ok}\n\n")
        f.write("localization recall:\n")
        for (tm, rd), val in recall.items():
            f.write(f"  ({tm:g} m, {rd:g} deg): {100 * val:.2f}%\n")
        f.write("\nretrieval:\n  ")
        parts = []
        for k in ks:
            parts.append(f"R@{k}={100 * retrieval['recall'][k]:.2f}")
            if k > 1:
                parts.append(f"P@{k}={100 * retrieval['precision'][k]:.2f}")
        f.write("  ".join(parts))
        f.write("\n")
        if timing_summary:
            f.write("\ntiming (mean ms per query):\n")
            for stage, (mean, median) in timing_summary.items():
                f.write(f"  {stage}: {mean:.2f} (median {median:.2f})\n")

    return {"recall": recall, "retrieval": retrieval, "timing": timing_summary, "n_ok": n_ok}
