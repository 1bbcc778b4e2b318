import numpy as np
import pytest

from priorloc import kernels
from priorloc.geom import Pose, random_rotation


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    return kernels.get_backend(request.param)


def synth_p3p(rng, n_cam_sigma=3.0):
    """Random pose plus three exact camera-frame observations of it."""
    R = random_rotation(rng)
    c = rng.normal(size=3) * 5
    pose = Pose(R, c)
    Yc = rng.normal(size=(3, 3)) * n_cam_sigma + np.array([0, 0, 10.0])
    X = pose.camera_to_world(Yc)
    f = Yc / np.linalg.norm(Yc, axis=1, keepdims=True)
    return pose, f, X


class TestP3PKernel:
    def test_recovers_synthesized_pose(self, backend):
        rng = np.random.default_rng(0)
        hits = 0
        for _ in range(300):
            pose, f, X = synth_p3p(rng)
            Rs, ts = backend.p3p_solve(f, X)
            assert len(Rs) <= 4
            err = min(
                [
                    abs(Rr - pose.R).max() + abs(tr - pose.t).max()
                    for Rr, tr in zip(Rs, ts)
                ]
                or [np.inf]
            )
            if err < 1e-6:
                hits += 1
        assert hits >= 299

    def test_collinear_points_yield_nothing(self, backend):
        f = np.eye(3)
        X = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        Rs, ts = backend.p3p_solve(f, X)
        assert len(Rs) == 0

    def test_solutions_reproject_exactly(self, backend):
        rng = np.random.default_rng(1)
        for _ in range(100):
            _, f, X = synth_p3p(rng)
            Rs, ts = backend.p3p_solve(f, X)
            for R, t in zip(Rs, ts):
                y = X @ R.T + t
                y = y / np.linalg.norm(y, axis=1, keepdims=True)
                assert float(np.abs(y - f).max()) < 1e-7


class TestScorePose:
    def test_matches_numpy_oracle(self, backend):
        rng = np.random.default_rng(2)
        for _ in range(50):
            R = random_rotation(rng)
            t = rng.normal(size=3)
            pts = rng.normal(size=(200, 3)) * 5 + [0, 0, 12]
            px = rng.uniform(0, 640, size=(200, 2))
            thr = rng.uniform(1, 50)
            mask = backend.score_pose(R, t, 500.0, 480.0, 320.0, 240.0, pts, px, thr)
            pc = pts @ R.T + t
            ok = pc[:, 2] > 1e-9
            u = 500.0 * pc[:, 0] / np.where(ok, pc[:, 2], 1) + 320.0
            v = 480.0 * pc[:, 1] / np.where(ok, pc[:, 2], 1) + 240.0
            err2 = (u - px[:, 0]) ** 2 + (v - px[:, 1]) ** 2
            expect = (ok & (err2 < thr * thr)).astype(np.uint8)
            assert np.array_equal(mask, expect)

    def test_behind_camera_never_inlier(self, backend):
        pts = np.array([[0.0, 0.0, -5.0]])
        px = np.array([[320.0, 240.0]])
        mask = backend.score_pose(
            np.eye(3), np.zeros(3), 500.0, 500.0, 320.0, 240.0, pts, px, 1e9
        )
        assert mask[0] == 0


class TestBilinear:
    def test_exact_at_grid_nodes(self, backend):
        rng = np.random.default_rng(3)
        grid = rng.normal(size=(7, 9, 4))
        xs = np.array([0.0, 3.0, 8.0])
        ys = np.array([0.0, 2.0, 6.0])
        out = backend.bilinear_sample(grid, xs, ys)
        for k, (x, y) in enumerate(zip(xs, ys)):
            assert np.allclose(out[k], grid[int(y), int(x)])

    def test_matches_naive_oracle(self, backend):
        rng = np.random.default_rng(4)
        grid = rng.normal(size=(12, 15, 3))
        xs = rng.uniform(-1, 16, size=200)
        ys = rng.uniform(-1, 13, size=200)
        out = backend.bilinear_sample(grid, xs, ys)
        for k in range(200):
            x = min(max(xs[k], 0.0), 14.0)
            y = min(max(ys[k], 0.0), 11.0)
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            x1, y1 = min(x0 + 1, 14), min(y0 + 1, 11)
            wx, wy = x - x0, y - y0
            expect = (
                grid[y0, x0] * (1 - wx) * (1 - wy)
                + grid[y0, x1] * wx * (1 - wy)
                + grid[y1, x0] * (1 - wx) * wy
                + grid[y1, x1] * wx * wy
            )
            assert np.allclose(out[k], expect, atol=1e-12)


@pytest.mark.skipif(
    len(kernels.available_backends()) < 2, reason="compiled backend unavailable"
)
class TestBackendAgreement:
    def test_p3p_candidates_agree(self):
        a = kernels.get_backend("python")
        b = kernels.get_backend("native")
        rng = np.random.default_rng(5)
        for _ in range(100):
            _, f, X = synth_p3p(rng)
            Ra, ta = a.p3p_solve(f, X)
            Rb, tb = b.p3p_solve(f, X)
            assert len(Ra) == len(Rb)
            for R1, t1 in zip(Ra, ta):
                best = min(
                    abs(R1 - R2).max() + abs(t1 - t2).max()
                    for R2, t2 in zip(Rb, tb)
                )
                assert best < 1e-8

    def test_score_and_bilinear_agree(self):
        a = kernels.get_backend("python")
        b = kernels.get_backend("native")
        rng = np.random.default_rng(6)
        R = random_rotation(rng)
        t = rng.normal(size=3)
        pts = rng.normal(size=(500, 3)) * 5 + [0, 0, 12]
        px = rng.uniform(0, 640, size=(500, 2))
        assert np.array_equal(
            a.score_pose(R, t, 500.0, 500.0, 320.0, 240.0, pts, px, 5.0),
            b.score_pose(R, t, 500.0, 500.0, 320.0, 240.0, pts, px, 5.0),
        )
        grid = rng.normal(size=(20, 30, 6))
        xs = rng.uniform(-2, 31, 300)
        ys = rng.uniform(-2, 21, 300)
        assert np.allclose(
            a.bilinear_sample(grid, xs, ys), b.bilinear_sample(grid, xs, ys), atol=1e-12
        )

    def test_use_backend_context(self):
        with kernels.use_backend("python"):
            assert kernels.backend_name() == "python"
        assert kernels.backend_name() in kernels.available_backends()
