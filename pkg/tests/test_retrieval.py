import numpy as np
import pytest

from priorloc.geom import Pose, exp_so3, principal_axis, random_rotation, rot_z, unit
from priorloc.retrieval import (
    DescriptorIndex,
    IndexEntry,
    RetrievalConfig,
    correctness_labels,
    dump_index_text,
    filter_candidates,
    load_index,
    retrieval_metrics,
    save_index,
    top_k,
)
from priorloc.sensors import SensorPrior, prior_pose


def rand_desc(rng, d=16):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_index(rng, n=100, d=16, spread=60.0):
    entries = []
    for i in range(n):
        pose = Pose(random_rotation(rng), rng.uniform(0, spread, 3))
        entries.append(
            IndexEntry(f"r{i:03d}", pose, rand_desc(rng, d), tuple(rng.integers(0, 50, 5)))
        )
    return DescriptorIndex(entries)


def level_pose(xy, heading_deg, alt=2.0):
    return prior_pose(SensorPrior(xy, [0, 1, 0], heading_deg, gps_alt=alt))


class TestFilterCandidates:
    def test_empty_index(self):
        cfg = RetrievalConfig()
        assert filter_candidates(DescriptorIndex([]), Pose.identity(), cfg) == set()

    def test_threshold_boundaries(self):
        rng = np.random.default_rng(0)
        prior = level_pose([0, 0], 0.0)
        near = IndexEntry("near", level_pose([5, 0], 0.0), rand_desc(rng), ())
        far = IndexEntry("far", level_pose([25, 0], 0.0), rand_desc(rng), ())
        twisted = IndexEntry("twisted", level_pose([5, 0], 120.0), rand_desc(rng), ())
        index = DescriptorIndex([near, far, twisted])
        out = filter_candidates(index, prior, RetrievalConfig(tau_t=20.0, tau_o=60.0))
        assert out == {"near"}

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(1)
        index = random_index(rng, n=100)
        for _ in range(20):
            prior = Pose(random_rotation(rng), rng.uniform(0, 60, 3))
            cfg = RetrievalConfig(
                tau_t=rng.uniform(5, 40), tau_o=rng.uniform(10, 170)
            )
            got = filter_candidates(index, prior, cfg)
            # term-by-term oracle over the two gates
            expect = set()
            for e in index.entries:
                d_xy = np.linalg.norm(e.pose.c[:2] - prior.c[:2])
                ang = np.degrees(
                    np.arccos(
                        np.clip(
                            np.dot(principal_axis(e.pose), principal_axis(prior)),
                            -1.0,
                            1.0,
                        )
                    )
                )
                if d_xy <= cfg.tau_t and ang <= cfg.tau_o:
                    expect.add(e.image_id)
            assert got == expect

    def test_monotone_in_thresholds(self):
        rng = np.random.default_rng(2)
        index = random_index(rng, n=80)
        for _ in range(50):
            prior = Pose(random_rotation(rng), rng.uniform(0, 60, 3))
            t1, t2 = sorted(rng.uniform(3, 50, 2))
            o1, o2 = sorted(rng.uniform(5, 175, 2))
            small = filter_candidates(index, prior, RetrievalConfig(tau_t=t1, tau_o=o1))
            big = filter_candidates(index, prior, RetrievalConfig(tau_t=t2, tau_o=o2))
            assert small <= big

    def test_subset_of_index_and_idempotent(self):
        rng = np.random.default_rng(3)
        index = random_index(rng, n=40)
        prior = Pose(random_rotation(rng), rng.uniform(0, 60, 3))
        cfg = RetrievalConfig()
        out = filter_candidates(index, prior, cfg)
        assert out <= set(index.image_ids)
        assert filter_candidates(index, prior, cfg) == out


class TestTopK:
    def test_single_candidate_always_returned(self):
        rng = np.random.default_rng(4)
        index = random_index(rng, n=10)
        q = rand_desc(rng)
        assert top_k(index, {"r003"}, q, 5) == ["r003"]

    def test_exact_descriptor_ranks_first(self):
        rng = np.random.default_rng(5)
        index = random_index(rng, n=20)
        q = index["r007"].descriptor.copy()
        out = top_k(index, set(index.image_ids), q, 3)
        assert out[0] == "r007"

    def test_matches_exhaustive_sort_oracle(self):
        rng = np.random.default_rng(6)
        index = random_index(rng, n=50)
        for _ in range(20):
            q = rand_desc(rng)
            got = top_k(index, set(index.image_ids), q, 10)
            scored = sorted(
                ((-(e.descriptor @ q), e.image_id) for e in index.entries)
            )
            assert got == [i for _, i in scored[:10]]

    def test_tie_break_ascending_id(self):
        rng = np.random.default_rng(7)
        shared = rand_desc(rng)
        entries = [
            IndexEntry("b", Pose.identity(), shared.copy(), ()),
            IndexEntry("a", Pose.identity(), shared.copy(), ()),
            IndexEntry("c", Pose.identity(), shared.copy(), ()),
        ]
        index = DescriptorIndex(entries)
        assert top_k(index, {"a", "b", "c"}, shared, 2) == ["a", "b"]

    def test_all_candidates_equals_global_search(self):
        rng = np.random.default_rng(8)
        index = random_index(rng, n=30)
        q = rand_desc(rng)
        assert top_k(index, set(index.image_ids), q, 7) == top_k(
            index, set(index.image_ids), q, 7
        )


class TestRetrievalMetrics:
    def test_all_correct(self):
        results = {"q0": ["a", "b"], "q1": ["c", "d"]}
        labels = {"q0": {"a", "b"}, "q1": {"c", "d"}}
        m = retrieval_metrics(results, labels, ks=[1, 2])
        assert m["recall"][1] == 1.0
        assert m["recall"][2] == 1.0
        assert m["precision"][1] == 1.0
        assert m["precision"][2] == 1.0

    def test_hand_enumerated_two_queries(self):
        # q0 has its only hit at rank 3; q1 at rank 1
        results = {"q0": ["x", "y", "hit", "z", "w"], "q1": ["hit", "x", "y", "z", "w"]}
        labels = {"q0": {"hit"}, "q1": {"hit"}}
        m = retrieval_metrics(results, labels, ks=[1, 5])
        assert m["recall"][1] == pytest.approx(0.5)
        assert m["recall"][5] == pytest.approx(1.0)
        assert m["precision"][1] == pytest.approx(0.5)
        assert m["precision"][5] == pytest.approx(0.2)

    def test_recall_non_decreasing_in_k(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            results = {
                f"q{i}": [f"r{j}" for j in rng.permutation(20)[:10]] for i in range(8)
            }
            labels = {
                q: {f"r{j}" for j in rng.integers(0, 20, 3)} for q in results
            }
            m = retrieval_metrics(results, labels, ks=[1, 2, 5, 10])
            rec = [m["recall"][k] for k in (1, 2, 5, 10)]
            assert all(b >= a for a, b in zip(rec, rec[1:]))

    def test_empty_result_set(self):
        m = retrieval_metrics({}, {}, ks=[1, 5])
        assert m["recall"][1] == 0.0


class TestIndexFile:
    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        index = random_index(rng, n=12, d=8)
        path = tmp_path / "index.sldx"
        save_index(path, index)
        loaded = load_index(path)
        assert loaded.image_ids == index.image_ids
        for e, l in zip(index.entries, loaded.entries):
            assert np.allclose(l.descriptor, e.descriptor, atol=1e-6)
            assert np.linalg.norm(l.descriptor) == pytest.approx(1.0, abs=1e-9)
            assert np.allclose(l.pose.R, e.pose.R, atol=1e-12)
            assert np.allclose(l.pose.c, e.pose.c, atol=1e-12)
            assert l.observed_point_ids == e.observed_point_ids

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "bogus.sldx"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError):
            load_index(path)

    def test_text_dump(self, tmp_path):
        rng = np.random.default_rng(11)
        index = random_index(rng, n=3)
        dump_index_text(tmp_path / "dump.txt", index)
        text = (tmp_path / "dump.txt").read_text()
        assert "r000" in text and "n_obs=" in text


class TestValidation:
    def test_duplicate_ids_rejected(self):
        rng = np.random.default_rng(12)
        e = IndexEntry("dup", Pose.identity(), rand_desc(rng), ())
        with pytest.raises(ValueError):
            DescriptorIndex([e, e])

    def test_non_unit_descriptor_rejected(self):
        with pytest.raises(ValueError):
            DescriptorIndex(
                [IndexEntry("a", Pose.identity(), np.ones(8), ())]
            )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RetrievalConfig(tau_t=-1.0)
        with pytest.raises(ValueError):
            RetrievalConfig(tau_o=200.0)
        with pytest.raises(ValueError):
            RetrievalConfig(k=0)


class TestCorrectnessLabels:
    def test_uses_ten_meter_thirty_degree_rule(self):
        rng = np.random.default_rng(13)
        entries = [
            IndexEntry("close", level_pose([5, 0], 0.0), rand_desc(rng), ()),
            IndexEntry("far", level_pose([15, 0], 0.0), rand_desc(rng), ()),
            IndexEntry("turned", level_pose([5, 0], 45.0), rand_desc(rng), ()),
        ]
        index = DescriptorIndex(entries)
        labels = correctness_labels(index, {"q": level_pose([0, 0], 0.0)})
        assert labels["q"] == {"close"}
