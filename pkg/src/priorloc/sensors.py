"""Sensor readings and assembly of the prior pose from GPS + compass + gravity.

Heading convention: degrees clockwise from North about the world up axis.
For a camera looking at the horizon, heading 0 means the viewing direction
points North and heading 90 points East. Formally, the heading is the yaw
left over after removing the minimal tilt that explains the measured
gravity, which keeps it well defined even for cameras pointing straight
up or down (there it measures rotation about the vertical).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geom import (
    Pose,
    WORLD_DOWN,
    exp_so3,
    gravity_dir,
    minimal_rotation,
    rot_z,
    unit,
)

__all__ = [
    "SensorNoiseModel",
    "SensorPrior",
    "exact_reading",
    "heading_of",
    "load_sensor_log",
    "perturb",
    "prior_pose",
    "save_sensor_log",
]


@dataclass(frozen=True)
class SensorPrior:
    """One query's raw sensor bundle.

    gps_xy: East/North position in meters (ENU); gps_alt optional.
    gravity_cam: measured gravity direction in the camera frame, unit norm.
    compass_deg: heading in [0, 360).
    """

    gps_xy: np.ndarray
    gravity_cam: np.ndarray
    compass_deg: float
    gps_alt: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "gps_xy", np.asarray(self.gps_xy, dtype=float).reshape(2))
        g = unit(np.asarray(self.gravity_cam, dtype=float).reshape(3))
        object.__setattr__(self, "gravity_cam", g)
        object.__setattr__(self, "compass_deg", float(self.compass_deg) % 360.0)
        if self.gps_alt is not None:
            object.__setattr__(self, "gps_alt", float(self.gps_alt))


@dataclass(frozen=True)
class SensorNoiseModel:
    """Gaussian noise calibration for simulated sensors (sigmas >= 0)."""

    gps_sigma_xy: float = 3.0
    compass_sigma: float = 10.0
    gravity_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.gps_sigma_xy, self.compass_sigma, self.gravity_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")


def _tilt_from_gravity(gravity_cam: np.ndarray) -> np.ndarray:
    """Minimal camera-from-world rotation mapping world down to the reading."""
    return minimal_rotation(WORLD_DOWN, gravity_cam)


def prior_pose(prior: SensorPrior, default_alt: float = 0.0) -> Pose:
    """Full 6-DoF pose from one sensor bundle.

    Roll/pitch come from aligning the measured gravity with world -z,
    yaw from the compass heading, xy from GPS, and z from GPS altitude
    when present (otherwise ``default_alt``).
    """
    R_tilt = _tilt_from_gravity(prior.gravity_cam)
    R = R_tilt @ rot_z(np.radians(prior.compass_deg))
    alt = prior.gps_alt if prior.gps_alt is not None else default_alt
    c = np.array([prior.gps_xy[0], prior.gps_xy[1], alt])
    return Pose(R, c)


def heading_of(pose: Pose) -> float:
    """Compass heading of a pose in [0, 360); inverse of the yaw used above."""
    g = gravity_dir(pose)
    R_tilt = _tilt_from_gravity(g)
    residual = R_tilt.T @ pose.R  # pure rotation about world z by construction
    h = np.degrees(np.arctan2(residual[1, 0], residual[0, 0]))
    return float(h % 360.0)


def exact_reading(pose: Pose, with_alt: bool = True) -> SensorPrior:
    """Noise-free sensor bundle a perfect phone would report for ``pose``."""
    return SensorPrior(
        gps_xy=pose.c[:2].copy(),
        gravity_cam=gravity_dir(pose),
        compass_deg=heading_of(pose),
        gps_alt=float(pose.c[2]) if with_alt else None,
    )


def perturb(
    reading: SensorPrior,
    model: SensorNoiseModel,
    rng: Optional[np.random.Generator] = None,
) -> SensorPrior:
    """Apply the noise model; deterministic for a fixed model seed.

    GPS xy gets Gaussian noise, the heading wrapped-Gaussian noise, and
    the gravity vector a small random tilt about a random horizontal
    axis. Pass ``rng`` to draw several perturbations from one stream.
    """
    if rng is None:
        rng = np.random.default_rng(model.seed)
    xy = reading.gps_xy + rng.normal(0.0, 1.0, size=2) * model.gps_sigma_xy
    heading = (reading.compass_deg + rng.normal(0.0, 1.0) * model.compass_sigma) % 360.0

    g = reading.gravity_cam
    # orthonormal basis of the plane normal to g
    helper = np.array([1.0, 0.0, 0.0]) if abs(g[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = unit(np.cross(g, helper))
    e2 = np.cross(g, e1)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    tilt_deg = rng.normal(0.0, 1.0) * model.gravity_sigma
    axis = np.cos(phi) * e1 + np.sin(phi) * e2
    g_noisy = exp_so3(axis * np.radians(tilt_deg)) @ g

    return SensorPrior(
        gps_xy=xy, gravity_cam=g_noisy, compass_deg=heading, gps_alt=reading.gps_alt
    )


def save_sensor_log(path, readings: dict[str, SensorPrior], timestamps_ns=None) -> None:
    """Write one JSON object per line: {id, timestamp_ns, gps_xy, gps_alt?, gravity_cam, compass_deg}."""
    with open(path, "w") as f:
        for i, (qid, r) in enumerate(readings.items()):
            rec = {
                "id": qid,
                "timestamp_ns": int(timestamps_ns[qid]) if timestamps_ns else i,
                "gps_xy": [float(r.gps_xy[0]), float(r.gps_xy[1])],
                "gravity_cam": [float(v) for v in r.gravity_cam],
                "compass_deg": float(r.compass_deg),
            }
            if r.gps_alt is not None:
                rec["gps_alt"] = float(r.gps_alt)
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_sensor_log(path) -> dict[str, SensorPrior]:
    readings: dict[str, SensorPrior] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            readings[rec["id"]] = SensorPrior(
                gps_xy=rec["gps_xy"],
                gravity_cam=rec["gravity_cam"],
                compass_deg=rec["compass_deg"],
                gps_alt=rec.get("gps_alt"),
            )
    return readings
