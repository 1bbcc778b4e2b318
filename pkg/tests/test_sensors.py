import numpy as np
import pytest

from priorloc.geom import Pose, pose_error, principal_axis, random_rotation
from priorloc.sensors import (
    SensorNoiseModel,
    SensorPrior,
    exact_reading,
    heading_of,
    load_sensor_log,
    perturb,
    prior_pose,
    save_sensor_log,
)


class TestPriorPose:
    def test_identity_case(self):
        pose = prior_pose(SensorPrior([0, 0], [0, 0, -1], 0.0, gps_alt=0.0))
        assert np.allclose(pose.R, np.eye(3), atol=1e-12)
        assert np.allclose(pose.c, 0)

    def test_level_camera_heading_east(self):
        # gravity along image-down = camera level; heading 90 points East
        pose = prior_pose(SensorPrior([0, 0], [0, 1, 0], 90.0, gps_alt=0.0))
        assert np.allclose(principal_axis(pose), [1, 0, 0], atol=1e-9)

    def test_level_camera_heading_north(self):
        pose = prior_pose(SensorPrior([0, 0], [0, 1, 0], 0.0, gps_alt=0.0))
        assert np.allclose(principal_axis(pose), [0, 1, 0], atol=1e-9)

    def test_round_trip_through_exact_readings(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            pose = Pose(random_rotation(rng), rng.normal(size=3) * 30)
            back = prior_pose(exact_reading(pose))
            te, re = pose_error(back, pose)
            assert te <= 1e-6
            assert re <= 1e-6

    def test_altitude_fallback(self):
        reading = SensorPrior([2.0, 3.0], [0, 1, 0], 10.0, gps_alt=None)
        pose = prior_pose(reading, default_alt=1.7)
        assert pose.c[2] == pytest.approx(1.7)
        assert np.allclose(pose.c[:2], [2.0, 3.0])

    def test_heading_normalized(self):
        r = SensorPrior([0, 0], [0, 1, 0], 725.0)
        assert r.compass_deg == pytest.approx(5.0)


class TestPerturb:
    MODEL0 = SensorNoiseModel(0.0, 0.0, 0.0, seed=1)

    def test_zero_sigmas_is_identity(self):
        reading = SensorPrior([1, 2], [0, 1, 0], 45.0, gps_alt=5.0)
        out = perturb(reading, self.MODEL0)
        assert np.allclose(out.gps_xy, reading.gps_xy)
        assert np.allclose(out.gravity_cam, reading.gravity_cam)
        assert out.compass_deg == pytest.approx(reading.compass_deg)
        assert out.gps_alt == reading.gps_alt

    def test_same_seed_twice_identical(self):
        reading = SensorPrior([1, 2], [0, 1, 0], 45.0)
        model = SensorNoiseModel(3.0, 10.0, 0.5, seed=7)
        a = perturb(reading, model)
        b = perturb(reading, model)
        assert np.array_equal(a.gps_xy, b.gps_xy)
        assert np.array_equal(a.gravity_cam, b.gravity_cam)
        assert a.compass_deg == b.compass_deg

    def test_gps_noise_std_matches_sigma(self):
        # Monte-Carlo estimate over 10000 draws
        reading = SensorPrior([0, 0], [0, 1, 0], 0.0)
        model = SensorNoiseModel(3.0, 0.0, 0.0, seed=3)
        rng = np.random.default_rng(model.seed)
        draws = np.array(
            [perturb(reading, model, rng).gps_xy for _ in range(10000)]
        )
        assert np.std(draws) == pytest.approx(3.0, rel=0.05)

    def test_gravity_stays_unit(self):
        reading = SensorPrior([0, 0], [0, 1, 0], 0.0)
        model = SensorNoiseModel(0.0, 0.0, 5.0, seed=2)
        rng = np.random.default_rng(0)
        for _ in range(100):
            out = perturb(reading, model, rng)
            assert np.linalg.norm(out.gravity_cam) == pytest.approx(1.0, abs=1e-9)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            SensorNoiseModel(-1.0, 0.0, 0.0)


class TestSensorLog:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        readings = {}
        for i in range(5):
            pose = Pose(random_rotation(rng), rng.normal(size=3) * 10)
            readings[f"q{i:03d}"] = exact_reading(pose, with_alt=(i % 2 == 0))
        path = tmp_path / "sensors.jsonl"
        save_sensor_log(path, readings)
        loaded = load_sensor_log(path)
        assert set(loaded) == set(readings)
        for qid, r in readings.items():
            l = loaded[qid]
            assert np.allclose(l.gps_xy, r.gps_xy)
            assert np.allclose(l.gravity_cam, r.gravity_cam, atol=1e-12)
            assert l.compass_deg == pytest.approx(r.compass_deg)
            assert (l.gps_alt is None) == (r.gps_alt is None)


class TestHeadingExtraction:
    def test_heading_matches_azimuth_for_level_cameras(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            h = rng.uniform(0, 360)
            pose = prior_pose(SensorPrior([0, 0], [0, 1, 0], h))
            assert heading_of(pose) == pytest.approx(h, abs=1e-9)
