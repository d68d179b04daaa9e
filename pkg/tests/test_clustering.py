"""Clustering tests: fused distances, message passing vs the plain-loop
reference, and the density baselines."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import blob_features
from reference_ap import reference_ap_from_distances
from scene_cluster.clustering import (
    APConfig,
    BaselineConfig,
    ParticipantFeatures,
    affinity_propagation,
    check_distance_matrix,
    cluster_participant,
    compact_labels,
    dbscan,
    default_dbscan_eps,
    default_meanshift_bandwidth,
    fuse,
    mean_shift,
    optics,
    pairwise_distances,
)
from scene_cluster.evaluation import adjusted_rand_index


def oracle_distances(x):
    n = len(x)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(x.shape[1]):
                s += (float(x[i, k]) - float(x[j, k])) ** 2
            out[i, j] = s ** 0.5
    return out


class TestPairwiseDistances:
    def test_matches_bruteforce(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(17, 5))
        got = pairwise_distances(x)
        np.testing.assert_allclose(got, oracle_distances(x), atol=1e-9)

    def test_exact_symmetry_and_zero_diagonal(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(40, 16)).astype(np.float32)
        d = pairwise_distances(x)
        assert np.array_equal(d, d.T)
        assert (np.diagonal(d) == 0.0).all()

    def test_chunked_path_matches_single_chunk(self):
        # force several chunks through the blockwise loop
        rng = np.random.default_rng(4)
        x = rng.normal(size=(200, 600))
        d = pairwise_distances(x)
        np.testing.assert_allclose(
            d[:5, :5], oracle_distances(x[:5]), atol=1e-9
        )
        assert np.array_equal(d, d.T)

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            pairwise_distances(np.zeros(3))

    @given(
        arrays(
            np.float64,
            st.tuples(st.integers(2, 12), st.integers(1, 6)),
            elements=st.floats(-100, 100),
        )
    )
    @settings(max_examples=40, deadline=None)
    def test_metric_properties(self, x):
        d = pairwise_distances(x)
        assert (d >= 0).all()
        assert np.array_equal(d, d.T)
        n = d.shape[0]
        # triangle inequality, up to float slack
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    assert d[i, j] <= d[i, k] + d[k, j] + 1e-7


class TestFuse:
    def test_endpoints_bit_exact(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(12, 7))
        y = rng.normal(size=(11, 7))
        loc = pairwise_distances(x[:11])
        glo = pairwise_distances(y)
        assert np.array_equal(fuse(loc, glo, 0.0), glo)
        assert np.array_equal(fuse(loc, glo, 1.0), loc)

    def test_midpoint_formula(self):
        loc = np.array([[0.0, 2.0], [2.0, 0.0]])
        glo = np.array([[0.0, 6.0], [6.0, 0.0]])
        np.testing.assert_array_equal(
            fuse(loc, glo, 0.25), np.array([[0.0, 5.0], [5.0, 0.0]])
        )

    def test_validation(self):
        d = np.zeros((3, 3))
        with pytest.raises(ValueError):
            fuse(d, d, -0.1)
        with pytest.raises(ValueError):
            fuse(d, d, 1.1)
        with pytest.raises(ValueError):
            fuse(d, np.zeros((4, 4)), 0.5)


class TestCheckDistanceMatrix:
    def test_rejects_bad_matrices(self):
        good = pairwise_distances(np.random.default_rng(0).normal(size=(5, 3)))
        check_distance_matrix(good)
        with pytest.raises(ValueError, match="square"):
            check_distance_matrix(good[:4])
        bad = good.copy()
        bad[0, 1] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            check_distance_matrix(bad)
        bad = good.copy()
        bad[0, 1] = -1.0
        with pytest.raises(ValueError, match="negative"):
            check_distance_matrix(bad)
        bad = good.copy()
        bad[0, 1] += 1.0
        with pytest.raises(ValueError, match="symmetric"):
            check_distance_matrix(bad)
        bad = good.copy()
        bad[2, 2] = 0.5
        bad[1, 2] = bad[2, 1] = 0.5  # keep symmetry, break the diagonal
        with pytest.raises(ValueError, match="diagonal"):
            check_distance_matrix(bad)


class TestCompactLabels:
    def test_first_appearance_order(self):
        out = compact_labels([7, 7, 3, -1, 7, 0])
        np.testing.assert_array_equal(out, [0, 0, 1, -1, 0, 2])

    def test_empty(self):
        assert compact_labels([]).size == 0


class TestAffinityPropagation:
    def test_matches_reference_on_fixtures(self):
        rng = np.random.default_rng(20)
        for trial in range(20):
            n = int(rng.integers(5, 26))
            dim = int(rng.integers(1, 4))
            pts = rng.normal(size=(n, dim)) * rng.uniform(0.5, 3.0)
            d = pairwise_distances(pts)
            got = affinity_propagation(d)
            ref_labels, ref_exemplars, ref_conv = reference_ap_from_distances(d)
            assert got.exemplars == ref_exemplars, f"fixture {trial}"
            np.testing.assert_array_equal(got.labels, ref_labels)
            assert got.converged == ref_conv

    def test_reference_vouched_by_naive_loops(self):
        # the fast reference itself is checked against the most literal
        # triple-loop rendering of the updates on small inputs
        from reference_ap import naive_ap, reference_ap, with_preference

        rng = np.random.default_rng(26)
        for _ in range(5):
            n = int(rng.integers(4, 11))
            s = with_preference(pairwise_distances(rng.normal(size=(n, 2))))
            fast = reference_ap(s, window=20)
            slow = naive_ap(s, window=20)
            assert fast[1] == slow[1]
            np.testing.assert_array_equal(fast[0], slow[0])
            assert fast[2] == slow[2]

    def test_high_preference_all_singletons(self):
        rng = np.random.default_rng(21)
        d = pairwise_distances(rng.normal(size=(10, 3)))
        c = affinity_propagation(d, APConfig(preference=0.0))
        assert c.exemplars == list(range(10))
        np.testing.assert_array_equal(c.labels, np.arange(10))

    def test_low_preference_single_cluster(self):
        rng = np.random.default_rng(22)
        d = pairwise_distances(rng.normal(size=(10, 3)))
        c = affinity_propagation(d, APConfig(preference=-1e9))
        assert len(c.exemplars) == 1
        assert (c.labels == 0).all()

    def test_two_blobs(self):
        rng = np.random.default_rng(23)
        vecs, truth = blob_features(rng, 2, 8, dim=4)
        c = affinity_propagation(pairwise_distances(vecs))
        assert adjusted_rand_index(c.labels, truth) == 1.0
        assert c.converged

    def test_exemplars_label_themselves(self):
        rng = np.random.default_rng(24)
        d = pairwise_distances(rng.normal(size=(15, 2)))
        c = affinity_propagation(d)
        for j, k in enumerate(c.exemplars):
            assert c.labels[k] == j

    def test_singleton(self):
        c = affinity_propagation(np.zeros((1, 1)))
        assert c.labels.tolist() == [0] and c.exemplars == [0] and c.converged

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            affinity_propagation(np.zeros((0, 0)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            APConfig(damping=0.3)
        with pytest.raises(ValueError):
            APConfig(damping=1.0)
        with pytest.raises(ValueError):
            APConfig(max_iterations=0)
        with pytest.raises(ValueError):
            APConfig(convergence_window=0)
        with pytest.raises(ValueError):
            APConfig(preference="mean")

    def test_deterministic(self):
        rng = np.random.default_rng(25)
        d = pairwise_distances(rng.normal(size=(12, 3)))
        a = affinity_propagation(d)
        b = affinity_propagation(d)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.exemplars == b.exemplars


class TestDbscan:
    def test_two_blobs_and_noise(self):
        rng = np.random.default_rng(30)
        vecs, truth = blob_features(rng, 2, 10, dim=3)
        outlier = np.full((1, 3), 60.0, np.float32)
        d = pairwise_distances(np.concatenate([vecs, outlier]))
        c = dbscan(d, eps=1.0, min_pts=4)
        assert c.labels[-1] == -1
        assert adjusted_rand_index(c.labels[:-1], truth) == 1.0

    def test_partition_invariant_under_permutation(self):
        rng = np.random.default_rng(31)
        vecs, _ = blob_features(rng, 3, 7, dim=4)
        d = pairwise_distances(vecs)
        base = dbscan(d, eps=1.0, min_pts=3)
        perm = rng.permutation(len(vecs))
        dp = d[np.ix_(perm, perm)]
        permed = dbscan(dp, eps=1.0, min_pts=3)
        keep = (base.labels[perm] != -1) & (permed.labels != -1)
        assert (base.labels[perm] == -1).tolist() == (permed.labels == -1).tolist()
        if keep.any():
            assert (
                adjusted_rand_index(permed.labels[keep], base.labels[perm][keep])
                == 1.0
            )

    def test_all_noise_when_eps_tiny(self):
        rng = np.random.default_rng(32)
        d = pairwise_distances(rng.normal(size=(9, 2)))
        c = dbscan(d, eps=1e-12, min_pts=3)
        assert (c.labels == -1).all()

    def test_default_eps_is_median_knn(self):
        rng = np.random.default_rng(33)
        d = pairwise_distances(rng.normal(size=(11, 3)))
        want = float(np.median(np.sort(d, axis=1)[:, 4]))
        assert default_dbscan_eps(d, k=4) == want
        small = pairwise_distances(rng.normal(size=(3, 2)))
        assert default_dbscan_eps(small, k=4) == float(
            np.median(np.sort(small, axis=1)[:, 2])
        )


class TestMeanShift:
    def test_two_blobs(self):
        rng = np.random.default_rng(40)
        vecs, truth = blob_features(rng, 2, 9, dim=3, centers_scale=8.0)
        c = mean_shift(vecs, bandwidth=2.0)
        assert adjusted_rand_index(c.labels, truth) == 1.0
        assert c.converged

    def test_single_blob_single_cluster(self):
        rng = np.random.default_rng(41)
        vecs = rng.normal(0, 0.05, size=(12, 3))
        c = mean_shift(vecs, bandwidth=1.0)
        assert (c.labels == 0).all()

    def test_default_bandwidth_floor(self):
        d = np.zeros((4, 4))
        assert default_meanshift_bandwidth(d) == 1.0


class TestOptics:
    def test_blobs_recovered(self):
        rng = np.random.default_rng(50)
        vecs, truth = blob_features(rng, 2, 12, dim=3)
        c = optics(vecs, min_samples=4)
        keep = c.labels != -1
        assert keep.sum() >= 20
        assert adjusted_rand_index(c.labels[keep], np.asarray(truth)[keep]) == 1.0

    def test_tiny_input_all_noise(self):
        c = optics(np.zeros((2, 3)), min_samples=4)
        assert (c.labels == -1).all()


class TestClusterParticipant:
    def _features(self, seed=60, n_envs=3, per_env=5):
        rng = np.random.default_rng(seed)
        g, truth = blob_features(rng, n_envs, per_env, dim=6)
        l, _ = blob_features(rng, n_envs, per_env, dim=6)
        ids = tuple(f"img{i:03d}" for i in range(len(truth)))
        baseline = rng.random((len(truth), 24)).astype(np.float32)
        return ParticipantFeatures(ids, g, l, baseline), truth

    def test_proposed_pipeline(self):
        feats, truth = self._features()
        c = cluster_participant(feats, method="proposed", alpha=0.44)
        assert adjusted_rand_index(c.labels, truth) == 1.0

    def test_alpha_extremes_use_one_source(self):
        feats, _ = self._features()
        only_l = cluster_participant(feats, method="proposed", alpha=1.0)
        only_g = cluster_participant(feats, method="proposed", alpha=0.0)
        ref_l = affinity_propagation(pairwise_distances(feats.l))
        ref_g = affinity_propagation(pairwise_distances(feats.g))
        np.testing.assert_array_equal(only_l.labels, ref_l.labels)
        np.testing.assert_array_equal(only_g.labels, ref_g.labels)

    def test_baseline_methods_on_pixels(self):
        feats, _ = self._features()
        for method in ("ap", "dbscan", "meanshift", "optics"):
            c = cluster_participant(
                feats,
                method=method,
                baseline_config=BaselineConfig(),
                baseline_source="pixels",
            )
            assert len(c.labels) == len(feats.image_ids)

    def test_ap_baseline_on_fused(self):
        feats, truth = self._features()
        c = cluster_participant(
            feats, method="ap", alpha=0.5, baseline_source="fused"
        )
        assert adjusted_rand_index(c.labels, truth) == 1.0

    def test_fused_source_rejected_for_geometric_methods(self):
        feats, _ = self._features()
        with pytest.raises(ValueError):
            cluster_participant(
                feats, method="meanshift", baseline_source="fused"
            )

    def test_pixels_requires_baseline_array(self):
        feats, _ = self._features()
        stripped = ParticipantFeatures(feats.image_ids, feats.g, feats.l, None)
        with pytest.raises(ValueError, match="baseline"):
            cluster_participant(
                stripped, method="dbscan", baseline_source="pixels"
            )

    def test_unknown_method(self):
        feats, _ = self._features()
        with pytest.raises(ValueError, match="method"):
            cluster_participant(feats, method="kmeans")

    def test_singleton_participant(self):
        feats = ParticipantFeatures(
            ("only",),
            np.zeros((1, 4), np.float32),
            np.zeros((1, 4), np.float32),
            np.zeros((1, 8), np.float32),
        )
        for method in ("proposed", "ap", "dbscan", "meanshift", "optics"):
            c = cluster_participant(feats, method=method, baseline_source="pixels")
            assert c.labels.tolist() == [0]
