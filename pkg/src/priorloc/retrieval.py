"""Sensor-guided candidate filtering, descriptor search, and retrieval metrics.

The candidate filter keeps reference images whose planar (xy) distance to
the prior pose is within ``tau_t`` meters and whose principal axis is
within ``tau_o`` degrees of the prior's. Ranking among candidates uses
descriptor inner products (equivalent to Euclidean distance for unit
vectors), ties broken by ascending image id.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geom import Pose, matrix_from_quat, principal_axis, quat_from_matrix

__all__ = [
    "DescriptorIndex",
    "IndexEntry",
    "RetrievalConfig",
    "correctness_labels",
    "filter_candidates",
    "load_index",
    "retrieval_metrics",
    "save_index",
    "top_k",
]

_MAGIC = b"SLDX"
_VERSION = 1


@dataclass(frozen=True)
class IndexEntry:
    image_id: str
    pose: Pose
    descriptor: np.ndarray
    observed_point_ids: tuple[int, ...]


class DescriptorIndex:
    """Reference images' global descriptors, poses, and observed points."""

    def __init__(self, entries):
        entries = list(entries)
        ids = [e.image_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids in index")
        dims = {e.descriptor.shape[0] for e in entries}
        if len(dims) > 1:
            raise ValueError(f"descriptor dimensions differ: {sorted(dims)}")
        for e in entries:
            n = np.linalg.norm(e.descriptor)
            if abs(n - 1.0) > 1e-6:
                raise ValueError(f"descriptor of {e.image_id!r} not unit norm ({n:.6f})")
        self.entries = entries
        self._by_id = {e.image_id: e for e in entries}
        self.dim = dims.pop() if dims else 0
        # packed arrays for the brute-force scans
        self._xy = np.array([e.pose.c[:2] for e in entries]).reshape(len(entries), 2)
        self._axes = np.array([principal_axis(e.pose) for e in entries]).reshape(
            len(entries), 3
        )
        self._desc = (
            np.stack([e.descriptor for e in entries])
            if entries
            else np.zeros((0, 0))
        )

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, image_id: str) -> IndexEntry:
        return self._by_id[image_id]

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id

    @property
    def image_ids(self) -> list[str]:
        return [e.image_id for e in self.entries]


@dataclass(frozen=True)
class RetrievalConfig:
    tau_t: float = 20.0
    tau_o: float = 60.0
    k: int = 10

    def __post_init__(self):
        if self.tau_t <= 0:
            raise ValueError("tau_t must be > 0")
        if not (0 < self.tau_o <= 180):
            raise ValueError("tau_o must be in (0, 180]")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def filter_candidates(index: DescriptorIndex, prior: Pose, cfg: RetrievalConfig) -> set[str]:
    """Image ids passing both the planar-distance and axis-angle gates.

    An empty set is a valid result; callers fall back to unfiltered
    search and record the event.
    """
    if len(index) == 0:
        return set()
    d_xy = np.linalg.norm(index._xy - prior.c[:2], axis=1)
    cos_tau = np.cos(np.radians(cfg.tau_o))
    dots = index._axes @ principal_axis(prior)
    keep = (d_xy <= cfg.tau_t) & (dots >= cos_tau)
    return {index.entries[i].image_id for i in np.nonzero(keep)[0]}


def top_k(
    index: DescriptorIndex, candidates: set[str], query_desc: np.ndarray, k: int
) -> list[str]:
    """The k most similar candidates, most similar first.

    Similarity is the descriptor inner product; ties break by ascending
    image id. Returns fewer than k items when candidates are scarce.
    """
    query_desc = np.asarray(query_desc, dtype=float)
    scored = []
    for e in index.entries:
        if e.image_id in candidates:
            scored.append((-float(e.descriptor @ query_desc), e.image_id))
    scored.sort()
    return [image_id for _, image_id in scored[:k]]


def correctness_labels(
    index: DescriptorIndex,
    query_poses: dict[str, Pose],
    tau_t: float = 10.0,
    tau_o: float = 30.0,
) -> dict[str, set[str]]:
    """Per-query sets of reference ids counted as correct retrievals.

    A reference is correct when it lies within ``tau_t`` meters of the
    query position and its principal axis is within ``tau_o`` degrees.
    """
    cos_tau = np.cos(np.radians(tau_o))
    labels: dict[str, set[str]] = {}
    for qid, pose in query_poses.items():
        d_xy = np.linalg.norm(index._xy - pose.c[:2], axis=1)
        dots = index._axes @ principal_axis(pose)
        keep = (d_xy <= tau_t) & (dots >= cos_tau)
        labels[qid] = {index.entries[i].image_id for i in np.nonzero(keep)[0]}
    return labels


def retrieval_metrics(
    results: dict[str, list[str]],
    labels: dict[str, set[str]],
    ks: list[int] = (1, 5, 10, 20),
) -> dict[str, dict[int, float]]:
    """Recall@k and Precision@k over ranked retrieval lists.

    R@k: fraction of queries with at least one correct item in the top k.
    P@k: mean fraction of correct items among the top min(k, returned).
    """
    recalls = {k: 0.0 for k in ks}
    precisions = {k: 0.0 for k in ks}
    n = len(results)
    if n == 0:
        return {"recall": {k: 0.0 for k in ks}, "precision": {k: 0.0 for k in ks}}
    for qid, ranked in results.items():
        correct = labels.get(qid, set())
        for k in ks:
            head = ranked[:k]
            hits = sum(1 for r in head if r in correct)
            if hits > 0:
                recalls[k] += 1.0
            if head:
                precisions[k] += hits / len(head)
    return {
        "recall": {k: recalls[k] / n for k in ks},
        "precision": {k: precisions[k] / n for k in ks},
    }


def save_index(path, index: DescriptorIndex) -> None:
    """Binary index: magic, version, descriptor dim, then packed entries."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", _VERSION, index.dim, len(index)))
        for e in index.entries:
            ident = e.image_id.encode("utf-8")
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            q = quat_from_matrix(e.pose.R)
            f.write(struct.pack("<7d", *q, *e.pose.c))
            f.write(np.asarray(e.descriptor, dtype="<f4").tobytes())
            f.write(struct.pack("<I", len(e.observed_point_ids)))
            f.write(np.asarray(e.observed_point_ids, dtype="<u4").tobytes())


def load_index(path) -> DescriptorIndex:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not an index file (magic {magic!r})")
        version, dim, count = struct.unpack("<III", f.read(12))
        if version != _VERSION:
            raise ValueError(f"unsupported index version {version}")
        entries = []
        for _ in range(count):
            (id_len,) = struct.unpack("<H", f.read(2))
            image_id = f.read(id_len).decode("utf-8")
            vals = struct.unpack("<7d", f.read(56))
            pose = Pose(matrix_from_quat(vals[:4]), np.array(vals[4:]))
            desc = np.frombuffer(f.read(4 * dim), dtype="<f4").astype(float)
            desc = desc / np.linalg.norm(desc)  # undo float32 rounding drift
            (n_obs,) = struct.unpack("<I", f.read(4))
            obs = tuple(
                int(v) for v in np.frombuffer(f.read(4 * n_obs), dtype="<u4")
            )
            entries.append(IndexEntry(image_id, pose, desc, obs))
    return DescriptorIndex(entries)


def dump_index_text(path, index: DescriptorIndex) -> None:
    """Human-readable dump for debugging."""
    with open(path, "w") as f:
        f.write(f"# SLDX dump: {len(index)} entries, descriptor dim {index.dim}\n")
        for e in index.entries:
            axis = principal_axis(e.pose)
            f.write(
                f"{e.image_id} c=({e.pose.c[0]:.3f},{e.pose.c[1]:.3f},{e.pose.c[2]:.3f}) "
                f"axis=({axis[0]:.3f},{axis[1]:.3f},{axis[2]:.3f}) "
                f"n_obs={len(e.observed_point_ids)}\n"
            )
