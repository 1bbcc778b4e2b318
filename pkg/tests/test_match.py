import numpy as np
import pytest

from priorloc.geom import CameraIntrinsics, Pose, project
from priorloc.match import (
    COARSE_STRIDE,
    FINE_STRIDE,
    FeatureMaps,
    MatchConfig,
    SubMap,
    SubMapPoint,
    aggregate,
    coarse_match,
    dual_softmax,
    fine_refine,
    l2_normalize,
    load_feature_maps,
    load_submap,
    save_feature_maps,
    save_submap,
)


def make_maps(rng, H=64, W=96, cc=6, cf=4):
    return FeatureMaps(
        rng.normal(size=(H // 8, W // 8, cc)),
        rng.normal(size=(H // 2, W // 2, cf)),
        H,
        W,
    )


def naive_bilinear(grid, x, y):
    H, W = grid.shape[:2]
    x = min(max(x, 0.0), W - 1.0)
    y = min(max(y, 0.0), H - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, W - 1), min(y0 + 1, H - 1)
    wx, wy = x - x0, y - y0
    return (
        grid[y0, x0] * (1 - wx) * (1 - wy)
        + grid[y0, x1] * wx * (1 - wy)
        + grid[y1, x0] * (1 - wx) * wy
        + grid[y1, x1] * wx * wy
    )


class TestFeatureMaps:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            FeatureMaps(np.zeros((4, 4, 2)), np.zeros((16, 24, 2)), 32, 48)
        with pytest.raises(ValueError):
            FeatureMaps(np.zeros((4, 6, 2)), np.zeros((10, 24, 2)), 32, 48)

    def test_sampling_convention_cell_centers(self):
        rng = np.random.default_rng(0)
        fm = make_maps(rng)
        # pixel at the center of coarse cell (i,j) samples that cell exactly
        for i, j in ((0, 0), (2, 3), (7, 11)):
            px = np.array([(j + 0.5) * COARSE_STRIDE, (i + 0.5) * COARSE_STRIDE])
            assert np.allclose(fm.sample_coarse(px)[0], fm.coarse[i, j], atol=1e-12)
        for i, j in ((0, 0), (5, 9)):
            px = np.array([(j + 0.5) * FINE_STRIDE, (i + 0.5) * FINE_STRIDE])
            assert np.allclose(fm.sample_fine(px)[0], fm.fine[i, j], atol=1e-12)


class TestAggregate:
    def test_single_entry_track_equals_bilinear_sample(self):
        rng = np.random.default_rng(1)
        fm = make_maps(rng)
        px = np.array([33.7, 21.2])
        sub = SubMap((SubMapPoint(0, np.zeros(3), (("img", px),)),))
        agg, excluded = aggregate(sub, {"img": fm})
        assert not excluded
        gx, gy = px[0] / COARSE_STRIDE - 0.5, px[1] / COARSE_STRIDE - 0.5
        assert np.allclose(agg.coarse[0], naive_bilinear(fm.coarse, gx, gy), atol=1e-12)

    def test_constant_grid_gives_constant(self):
        fm = FeatureMaps(
            np.full((8, 12, 3), 0.7), np.full((32, 48, 2), -1.3), 64, 96
        )
        track = tuple(("img", np.array([10.0 * k + 5, 8.0 * k + 4])) for k in range(3))
        sub = SubMap((SubMapPoint(0, np.zeros(3), track),))
        agg, _ = aggregate(sub, {"img": fm})
        assert np.allclose(agg.coarse[0], 0.7)
        assert np.allclose(agg.fine[0], -1.3)

    def test_three_entry_track_equals_mean_of_samples(self):
        rng = np.random.default_rng(2)
        maps = {f"i{k}": make_maps(rng) for k in range(3)}
        pixels = [np.array([12.3, 40.1]), np.array([70.2, 9.9]), np.array([45.5, 30.0])]
        track = tuple((f"i{k}", pixels[k]) for k in range(3))
        sub = SubMap((SubMapPoint(7, np.ones(3), track),))
        agg, _ = aggregate(sub, maps)
        expect = np.mean(
            [
                naive_bilinear(
                    maps[f"i{k}"].coarse,
                    pixels[k][0] / COARSE_STRIDE - 0.5,
                    pixels[k][1] / COARSE_STRIDE - 0.5,
                )
                for k in range(3)
            ],
            axis=0,
        )
        assert np.allclose(agg.coarse[0], expect, atol=1e-12)

    def test_point_without_usable_track_excluded_and_reported(self):
        rng = np.random.default_rng(3)
        fm = make_maps(rng)
        off = SubMapPoint(3, np.zeros(3), (("img", np.array([500.0, 500.0])),))
        on = SubMapPoint(4, np.zeros(3), (("img", np.array([20.0, 20.0])),))
        agg, excluded = aggregate(SubMap((off, on)), {"img": fm})
        assert excluded == [3]
        assert list(agg.point_ids) == [4]

    def test_reprojection_path_uses_cameras(self):
        rng = np.random.default_rng(4)
        fm = make_maps(rng)
        intr = CameraIntrinsics(60.0, 60.0, 48.0, 32.0, 96, 64)
        pose = Pose.identity()
        point = np.array([0.1, -0.05, 3.0])
        uv, _ = project(pose, intr, point)
        # stored pixel is wrong on purpose; cameras must win
        sub = SubMap((SubMapPoint(0, point, (("img", np.array([1.0, 1.0])),),),))
        agg, _ = aggregate(sub, {"img": fm}, {"img": (pose, intr)})
        gx, gy = uv[0] / COARSE_STRIDE - 0.5, uv[1] / COARSE_STRIDE - 0.5
        assert np.allclose(agg.coarse[0], naive_bilinear(fm.coarse, gx, gy), atol=1e-12)

    def test_behind_camera_track_entry_skipped(self):
        rng = np.random.default_rng(5)
        fm = make_maps(rng)
        intr = CameraIntrinsics(60.0, 60.0, 48.0, 32.0, 96, 64)
        pose = Pose.identity()
        behind = np.array([0.0, 0.0, -5.0])
        sub = SubMap((SubMapPoint(0, behind, (("img", np.array([20.0, 20.0])),),),))
        agg, excluded = aggregate(sub, {"img": fm}, {"img": (pose, intr)})
        assert excluded == [0]
        assert len(agg) == 0


class TestDualSoftmax:
    def test_single_element(self):
        assert np.allclose(dual_softmax(np.array([[3.7]])), [[1.0]])

    def test_strong_diagonal(self):
        # closed-form: softmax([100, 0]) = (1, e^-100)/(1+e^-100)
        P = dual_softmax(np.array([[10.0, 0.0], [0.0, 10.0]]) * 10)
        assert P[0, 0] > 0.99 and P[1, 1] > 0.99
        assert P[0, 1] < 1e-8

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(6)
        C = rng.normal(size=(20, 30)) * 3
        P = dual_softmax(C)
        for i in range(20):
            for j in range(30):
                row = np.exp(C[i]) / np.exp(C[i]).sum()
                col = np.exp(C[:, j]) / np.exp(C[:, j]).sum()
                assert P[i, j] == pytest.approx(row[j] * col[i], abs=1e-9)

    def test_bounded_by_factor_softmaxes(self):
        rng = np.random.default_rng(7)
        C = rng.normal(size=(15, 12)) * 2
        P = dual_softmax(C)
        row = np.exp(C - C.max(axis=1, keepdims=True))
        row /= row.sum(axis=1, keepdims=True)
        col = np.exp(C - C.max(axis=0, keepdims=True))
        col /= col.sum(axis=0, keepdims=True)
        assert np.all(P >= 0) and np.all(P <= 1)
        assert np.all(P <= np.minimum(row, col) + 1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        C = rng.normal(size=(9, 7))
        pr = rng.permutation(9)
        pc = rng.permutation(7)
        assert np.allclose(dual_softmax(C)[np.ix_(pr, pc)], dual_softmax(C[np.ix_(pr, pc)]))


class TestCoarseMatch:
    CFG = MatchConfig(theta=0.5)

    def test_identical_single_descriptor(self):
        d = np.array([[1.0, 0.0]])
        out = coarse_match(d, d, self.CFG)
        assert out == [(0, 0, 1.0)]

    def test_tie_break_lowest_point_index(self):
        rng = np.random.default_rng(9)
        q = np.array([[1.0, 0.0], [0.0, 1.0]])
        # two identical points: row argmax ties, first (lowest) index wins
        s = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        out = coarse_match(q, s, MatchConfig(theta=0.0))
        matched_points = {j for _, j, _ in out}
        assert (0, 0) in {(c, j) for c, j, _ in out}
        assert 1 not in matched_points

    def test_matches_bruteforce_mnn_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            q = rng.normal(size=(50, 8))
            s = rng.normal(size=(40, 8))
            cfg = MatchConfig(theta=float(rng.uniform(0, 0.3)))
            got = coarse_match(q, s, cfg)
            P = dual_softmax(q @ s.T / cfg.temperature)
            expect = []
            for i in range(50):
                j = int(np.argmax(P[i]))
                if int(np.argmax(P[:, j])) == i and P[i, j] >= cfg.theta:
                    expect.append((i, j, pytest.approx(P[i, j])))
            assert got == expect

    def test_partial_injection(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            q = rng.normal(size=(30, 6))
            s = rng.normal(size=(25, 6))
            out = coarse_match(q, s, MatchConfig(theta=0.0))
            cells = [c for c, _, _ in out]
            points = [j for _, j, _ in out]
            assert len(cells) == len(set(cells))
            assert len(points) == len(set(points))

    def test_theta_monotone(self):
        rng = np.random.default_rng(12)
        q = rng.normal(size=(30, 6))
        s = rng.normal(size=(25, 6))
        lo = {(c, j) for c, j, _ in coarse_match(q, s, MatchConfig(theta=0.01))}
        hi = {(c, j) for c, j, _ in coarse_match(q, s, MatchConfig(theta=0.2))}
        assert hi <= lo

    def test_zero_matches_valid(self):
        # flat correlations spread the probability mass below theta
        q = np.array([[1.0, 0.0], [1.0, 0.0]])
        s = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert coarse_match(q, s, MatchConfig(theta=0.999)) == []

    def test_transform_seam_applied(self):
        q = np.array([[10.0, 0.0]])
        s = np.array([[10.0, 0.0]])
        out_id = coarse_match(q, s, MatchConfig(theta=0.0))
        out_norm = coarse_match(q, s, MatchConfig(theta=0.0), transform=l2_normalize)
        assert out_id[0][:2] == out_norm[0][:2] == (0, 0)


class TestFineRefine:
    CFG = MatchConfig()
    SIZE = (64, 96)

    def grid(self, rng):
        return rng.normal(size=(32, 48, 4))

    def test_concentrated_heatmap_hits_window_center(self):
        rng = np.random.default_rng(13)
        grid = self.grid(rng) * 0.0
        # coarse cell (2, 3): center pixel (28, 20) -> fine cell (13.5, 9.5)
        # window center cell (14, 10); plant a huge correlation there
        desc = np.array([1000.0, 0, 0, 0])
        grid[10, 14, 0] = 1.0
        cell = 2 * (96 // 8) + 3
        refined, conf = fine_refine(cell, grid, desc, self.CFG, self.SIZE)
        assert np.allclose(refined, [(14 + 0.5) * 2, (10 + 0.5) * 2], atol=1e-6)
        assert conf > 0.99

    def test_uniform_heatmap_gives_window_centroid(self):
        grid = np.zeros((32, 48, 4))
        desc = np.array([1.0, 0, 0, 0])
        cell = 2 * (96 // 8) + 3
        refined, conf = fine_refine(cell, grid, desc, self.CFG, self.SIZE)
        assert np.allclose(refined, [(14 + 0.5) * 2, (10 + 0.5) * 2], atol=1e-9)
        assert conf == pytest.approx(1.0 / 25.0)

    def test_matches_naive_expectation_oracle(self):
        rng = np.random.default_rng(14)
        grid = self.grid(rng)
        for cell in (0, 17, 40, 5 * 12 + 7):
            desc = rng.normal(size=4)
            refined, conf = fine_refine(cell, grid, desc, self.CFG, self.SIZE)
            r, c = divmod(cell, 96 // 8)
            gx, gy = (c + 0.5) * 4 - 0.5, (r + 0.5) * 4 - 0.5
            cx, cy = int(np.floor(gx + 0.5)), int(np.floor(gy + 0.5))
            x0 = min(max(cx - 2, 0), 48 - 5)
            y0 = min(max(cy - 2, 0), 32 - 5)
            num = np.zeros(2)
            den = 0.0
            scores = []
            for yy in range(y0, y0 + 5):
                for xx in range(x0, x0 + 5):
                    scores.append(grid[yy, xx] @ desc / self.CFG.temperature)
            m = max(scores)
            k = 0
            for yy in range(y0, y0 + 5):
                for xx in range(x0, x0 + 5):
                    p = np.exp(scores[k] - m)
                    num += p * np.array([(xx + 0.5) * 2, (yy + 0.5) * 2])
                    den += p
                    k += 1
            assert np.allclose(refined, num / den, atol=1e-9)

    def test_result_inside_window_bbox(self):
        rng = np.random.default_rng(15)
        grid = self.grid(rng)
        for cell in range(0, 48, 5):
            desc = rng.normal(size=4) * 3
            refined, _ = fine_refine(cell, grid, desc, self.CFG, self.SIZE)
            r, c = divmod(cell, 12)
            gx, gy = (c + 0.5) * 4 - 0.5, (r + 0.5) * 4 - 0.5
            cx, cy = int(np.floor(gx + 0.5)), int(np.floor(gy + 0.5))
            x0 = min(max(cx - 2, 0), 43)
            y0 = min(max(cy - 2, 0), 27)
            assert (x0 + 0.5) * 2 - 1e-9 <= refined[0] <= (x0 + 4 + 0.5) * 2 + 1e-9
            assert (y0 + 0.5) * 2 - 1e-9 <= refined[1] <= (y0 + 4 + 0.5) * 2 + 1e-9

    def test_border_window_clamped(self):
        rng = np.random.default_rng(16)
        grid = self.grid(rng)
        refined, _ = fine_refine(0, grid, rng.normal(size=4), self.CFG, self.SIZE)
        assert refined[0] >= 1.0 - 1e-9 and refined[1] >= 1.0 - 1e-9


class TestEndToEndSyntheticDescriptors:
    def test_noiseless_points_match_within_half_pixel(self):
        """Descriptors are smooth positional encodings of image position:
        correlation peaks at the true projection, so every visible point
        must match back to within 0.5 px."""
        rng = np.random.default_rng(17)
        H, W, cc, cf = 64, 96, 24, 32

        def field(dim, scale, seed, gain=1.0):
            r = np.random.default_rng(seed)
            om = r.normal(0, 1.0 / scale, size=(dim, 2))
            ph = r.uniform(0, 2 * np.pi, dim)

            def f(uv):
                uv = np.atleast_2d(uv)
                v = np.cos(uv @ om.T + ph)
                return gain * v / np.linalg.norm(v, axis=1, keepdims=True)

            return f

        fc = field(cc, 12.0, 100)  # decorrelates across one coarse cell
        # the gain sharpens the refinement softmax to ~1 px without
        # touching the matcher temperature
        ff = field(cf, 4.0, 200, gain=1.8)

        jj, ii = np.meshgrid(np.arange(W // 8), np.arange(H // 8))
        coarse = fc(
            np.column_stack([(jj.ravel() + 0.5) * 8, (ii.ravel() + 0.5) * 8])
        ).reshape(H // 8, W // 8, cc)
        jj, ii = np.meshgrid(np.arange(W // 2), np.arange(H // 2))
        fine = ff(
            np.column_stack([(jj.ravel() + 0.5) * 2, (ii.ravel() + 0.5) * 2])
        ).reshape(H // 2, W // 2, cf)

        truth = rng.uniform([4, 4], [W - 5, H - 5], size=(40, 2))
        cfg = MatchConfig(theta=0.05)
        pairs = coarse_match(coarse.reshape(-1, cc), fc(truth), cfg)
        assert len(pairs) >= 30  # most points must survive MNN
        fdesc = ff(truth)
        for cell, j, _ in pairs:
            refined, _ = fine_refine(cell, fine, fdesc[j], cfg, (H, W))
            refined, _ = fine_refine(
                cell, fine, fdesc[j], cfg, (H, W), center_px=refined
            )
            assert np.linalg.norm(refined - truth[j]) <= 0.5


class TestMatchFiles:
    def test_feature_map_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        fm = make_maps(rng)
        path = tmp_path / "maps.slfm"
        save_feature_maps(path, fm)
        loaded = load_feature_maps(path)
        assert loaded.height == fm.height and loaded.width == fm.width
        assert np.allclose(loaded.coarse, fm.coarse, atol=1e-6)
        assert np.allclose(loaded.fine, fm.fine, atol=1e-6)

    def test_feature_map_magic(self, tmp_path):
        p = tmp_path / "x.slfm"
        p.write_bytes(b"XXXX" + b"\0" * 16)
        with pytest.raises(ValueError):
            load_feature_maps(p)

    def test_submap_round_trip(self, tmp_path):
        rng = np.random.default_rng(19)
        points = tuple(
            SubMapPoint(
                i,
                rng.normal(size=3),
                tuple(
                    (f"img{k}", rng.uniform(0, 100, 2)) for k in range(rng.integers(1, 4))
                ),
            )
            for i in range(6)
        )
        path = tmp_path / "sub.slsm"
        save_submap(path, SubMap(points))
        loaded = load_submap(path)
        assert len(loaded.points) == 6
        for a, b in zip(points, loaded.points):
            assert a.point_id == b.point_id
            assert np.allclose(a.position, b.position)
            assert len(a.track) == len(b.track)
            for (ia, pa), (ib, pb) in zip(a.track, b.track):
                assert ia == ib
                assert np.allclose(pa, pb)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MatchConfig(temperature=0.0)
        with pytest.raises(ValueError):
            MatchConfig(theta=1.5)
        with pytest.raises(ValueError):
            MatchConfig(window=4)
