import numpy as np
import pytest

from priorloc.geom import (
    CameraIntrinsics,
    Pose,
    angular_diff_deg,
    exp_so3,
    gravity_dir,
    log_so3,
    matrix_from_quat,
    pose_error,
    principal_axis,
    project,
    quat_from_matrix,
    random_rotation,
    rot_z,
)

INTR = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def random_pose(rng):
    return Pose(random_rotation(rng), rng.normal(size=3) * 10)


class TestProject:
    def test_optical_axis_point_hits_principal_point(self):
        uv, ok = project(Pose.identity(), INTR, [0.0, 0.0, 1.0])
        assert ok
        assert np.allclose(uv, [50.0, 50.0])

    def test_unit_offset_scales_by_focal_length(self):
        uv, ok = project(Pose.identity(), INTR, [0.1, 0.0, 1.0])
        assert ok
        assert np.allclose(uv, [60.0, 50.0])

    def test_matches_homogeneous_matrix_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            pose = random_pose(rng)
            point = pose.camera_to_world(rng.uniform([-2, -2, 2], [2, 2, 20]))
            uv, ok = project(pose, INTR, point)
            assert ok
            # oracle: form K [R|t], apply homogeneously, dehomogenize
            P = INTR.K @ np.hstack([pose.R, pose.t[:, None]])
            h = P @ np.append(point, 1.0)
            assert np.allclose(uv, h[:2] / h[2], atol=1e-9)

    def test_behind_camera_flagged(self):
        uv, ok = project(Pose.identity(), INTR, [0.0, 0.0, -1.0])
        assert not ok
        _, ok = project(Pose.identity(), INTR, [0.0, 0.0, 1e-12])
        assert not ok

    def test_equivariance_world_vs_camera_frame(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            pose = random_pose(rng)
            pc = rng.uniform([-2, -2, 2], [2, 2, 20])
            world = pose.camera_to_world(pc)
            uv1, _ = project(pose, INTR, world)
            uv2, _ = project(Pose.identity(), INTR, pc)
            assert np.allclose(uv1, uv2, atol=1e-8)


class TestGravityDir:
    def test_identity(self):
        assert np.allclose(gravity_dir(Pose.identity()), [0, 0, -1])

    def test_quarter_turn_about_x(self):
        # camera body turned +90 deg about world x: R_cw = Rx(-90);
        # by hand, Rx(-90) @ (0,0,-1) = (0,-1,0)
        R = exp_so3([-np.pi / 2, 0, 0])
        assert np.allclose(gravity_dir(Pose(R, np.zeros(3))), [0, -1, 0], atol=1e-9)

    def test_yaw_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            pose = random_pose(rng)
            yawed = Pose(pose.R @ rot_z(rng.uniform(0, 2 * np.pi)), pose.c)
            assert np.allclose(gravity_dir(pose), gravity_dir(yawed), atol=1e-12)


class TestPrincipalAxis:
    def test_identity(self):
        assert np.allclose(principal_axis(Pose.identity()), [0, 0, 1])

    def test_flip_about_x(self):
        R = exp_so3([np.pi, 0, 0])
        assert np.allclose(principal_axis(Pose(R, np.zeros(3))), [0, 0, -1], atol=1e-9)

    def test_roll_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            pose = random_pose(rng)
            rolled = Pose(rot_z(rng.uniform(0, 2 * np.pi)) @ pose.R, pose.c)
            assert np.allclose(
                principal_axis(pose), principal_axis(rolled), atol=1e-9
            )


class TestAngularDiff:
    def test_parallel(self):
        assert angular_diff_deg([1, 0, 0], [1, 0, 0]) == 0.0

    def test_orthogonal(self):
        assert angular_diff_deg([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0)

    def test_clamped_against_rounding(self):
        # a dot product that rounds slightly above 1 must not produce NaN
        v = np.array([1.0, 1e-8, 0.0])
        v = v / np.linalg.norm(v)
        d = angular_diff_deg(v, v.copy())
        assert np.isfinite(d)
        assert d == pytest.approx(0.0, abs=1e-6)


class TestPoseError:
    def test_identical(self):
        rng = np.random.default_rng(4)
        pose = random_pose(rng)
        assert pose_error(pose, pose) == (0.0, 0.0)

    def test_three_four_five(self):
        pose = Pose.identity()
        moved = Pose(np.eye(3), [3.0, 4.0, 0.0])
        te, re = pose_error(moved, pose)
        assert te == pytest.approx(5.0)
        assert re == pytest.approx(0.0, abs=1e-12)

    def test_matches_trace_formula_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            a, b = random_pose(rng), random_pose(rng)
            te, re = pose_error(a, b)
            rel = a.R @ b.R.T
            oracle = np.degrees(
                np.arccos(np.clip(0.5 * (np.trace(rel) - 1.0), -1.0, 1.0))
            )
            assert te == pytest.approx(np.linalg.norm(a.c - b.c), abs=1e-12)
            assert re == pytest.approx(oracle, abs=1e-5)


class TestRotationAlgebra:
    def test_exp_log_round_trip(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            w = rng.normal(size=3) * rng.uniform(0, 3)
            R = exp_so3(w)
            assert np.allclose(exp_so3(log_so3(R)), R, atol=1e-9)

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            pose = random_pose(rng)
            ident = pose.compose(pose.inverse())
            assert np.allclose(ident.R, np.eye(3), atol=1e-9)
            assert np.linalg.norm(ident.c) < 1e-9

    def test_rotation_preserves_norms(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            R = random_rotation(rng)
            v = rng.normal(size=3)
            assert np.linalg.norm(R @ v) == pytest.approx(np.linalg.norm(v), abs=1e-9)

    def test_quaternion_round_trip(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            R = random_rotation(rng)
            assert np.allclose(matrix_from_quat(quat_from_matrix(R)), R, atol=1e-12)


class TestIntrinsicsValidation:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0.0, 100.0, 50.0, 50.0, 100, 100)

    def test_rejects_principal_point_outside(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(100.0, 100.0, 150.0, 50.0, 100, 100)
