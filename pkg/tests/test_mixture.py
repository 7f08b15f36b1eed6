"""Clustering labels and per-class moment estimation."""

import itertools

import numpy as np
import pytest

from edrep.errors import ValidationError
from edrep.mixture import (
    LabelVector,
    estimate_mixture,
    kmeans_label,
    singleton_mixture,
)


class TestLabelVector:
    def test_rejects_out_of_range_labels(self):
        with pytest.raises(ValidationError):
            LabelVector(np.array([0, 1, 2]), 2)
        with pytest.raises(ValidationError):
            LabelVector(np.array([1, 3]), 2)

    def test_rejects_empty_classes(self):
        with pytest.raises(ValidationError, match="empty"):
            LabelVector(np.array([1, 1, 3]), 3)

    def test_counts(self):
        lv = LabelVector(np.array([1, 2, 2, 3]), 3)
        np.testing.assert_array_equal(lv.counts(), [1, 2, 1])


class TestKmeansLabel:
    def test_single_class_labels_everything_one(self):
        Y = np.random.default_rng(0).standard_normal((11, 3))
        lv = kmeans_label(Y, 1, seed=0)
        np.testing.assert_array_equal(lv.labels, np.ones(11))

    def test_separates_two_far_clouds(self):
        rng = np.random.default_rng(1)
        a = np.array([10.0, 0.0, 0.0]) + 0.1 * rng.standard_normal((20, 3))
        b = np.array([-10.0, 0.0, 0.0]) + 0.1 * rng.standard_normal((20, 3))
        lv = kmeans_label(np.vstack([a, b]), 2, seed=3)
        first, second = lv.labels[:20], lv.labels[20:]
        assert len(set(first)) == 1 and len(set(second)) == 1
        assert first[0] != second[0]

    def test_near_optimal_against_exhaustive_assignments(self):
        """Oracle: enumerate all 2^8 two-cluster assignments of 8 points
        and compare within-cluster sums of squares."""
        rng = np.random.default_rng(5)
        Y = rng.standard_normal((8, 2))

        def wcss(assign):
            total = 0.0
            for c in (0, 1):
                block = Y[np.array(assign) == c]
                if block.size:
                    total += np.sum((block - block.mean(axis=0)) ** 2)
            return total

        best = min(
            wcss(assign)
            for assign in itertools.product((0, 1), repeat=8)
            if 0 < sum(assign) < 8
        )
        lv = kmeans_label(Y, 2, seed=2, restarts=10)
        achieved = wcss(lv.labels - 1)
        assert achieved <= best * 1.05

    def test_deterministic_given_seed(self):
        Y = np.random.default_rng(7).standard_normal((40, 4))
        a = kmeans_label(Y, 3, seed=9)
        b = kmeans_label(Y, 3, seed=9)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_duplicate_points_still_fill_every_class(self):
        # Only two distinct locations but three requested clusters: the
        # empty-cluster repair must keep all classes populated.
        Y = np.vstack([np.zeros((5, 2)), np.ones((5, 2))])
        lv = kmeans_label(Y, 3, seed=0)
        assert lv.counts().min() >= 1

    def test_kappa_bounds(self):
        Y = np.zeros((4, 2))
        with pytest.raises(ValidationError):
            kmeans_label(Y, 5, seed=0)
        with pytest.raises(ValidationError):
            kmeans_label(Y, 0, seed=0)


class TestEstimateMixture:
    def test_two_point_closed_form(self):
        Y = np.array([[1.0, 0.0], [0.0, 1.0]])
        params = estimate_mixture(Y, LabelVector(np.array([1, 1]), 1))
        np.testing.assert_allclose(params.pi, [1.0])
        np.testing.assert_allclose(params.mu, [[0.5, 0.5]])
        np.testing.assert_allclose(
            params.omega[0], [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15
        )

    def test_identical_rows_give_zero_covariance(self):
        Y = np.tile([1.0, 2.0, 3.0], (6, 1))
        params = estimate_mixture(Y, LabelVector(np.ones(6, dtype=int), 1))
        np.testing.assert_array_equal(params.omega[0], np.zeros((3, 3)))

    def test_singleton_class_gets_zero_covariance(self):
        Y = np.random.default_rng(3).standard_normal((5, 3))
        labels = LabelVector(np.array([1, 1, 1, 1, 2]), 2)
        params = estimate_mixture(Y, labels)
        np.testing.assert_array_equal(params.omega[1], np.zeros((3, 3)))
        np.testing.assert_allclose(params.mu[1], Y[4])

    def test_matches_two_pass_recomputation(self):
        """Oracle: naive per-class mean then centered covariance loops."""
        rng = np.random.default_rng(11)
        Y = rng.standard_normal((200, 5))
        raw = rng.integers(1, 4, 200)
        raw[:3] = [1, 2, 3]
        labels = LabelVector(raw, 3)
        params = estimate_mixture(Y, labels)
        for a in range(3):
            block = Y[raw == a + 1]
            mean = sum(row for row in block) / len(block)
            cov = np.zeros((5, 5))
            for row in block:
                cov += np.outer(row - mean, row - mean)
            cov /= len(block) - 1
            np.testing.assert_allclose(params.mu[a], mean, atol=1e-10)
            np.testing.assert_allclose(params.omega[a], cov, atol=1e-10)
            assert params.pi[a] == len(block) / 200

    def test_single_class_reproduces_global_moments(self):
        rng = np.random.default_rng(13)
        Y = rng.standard_normal((60, 4))
        params = estimate_mixture(Y, LabelVector(np.ones(60, dtype=int), 1))
        np.testing.assert_allclose(params.mu[0], Y.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(params.omega[0], np.cov(Y.T), atol=1e-12)

    def test_relabeling_permutes_parameters(self):
        rng = np.random.default_rng(17)
        Y = rng.standard_normal((50, 3))
        raw = rng.integers(1, 4, 50)
        raw[:3] = [1, 2, 3]
        perm = np.array([3, 1, 2])  # class a -> perm[a-1]
        params = estimate_mixture(Y, LabelVector(raw, 3))
        permuted = estimate_mixture(Y, LabelVector(perm[raw - 1], 3))
        for a in range(3):
            target = perm[a] - 1
            assert permuted.pi[target] == params.pi[a]
            np.testing.assert_array_equal(permuted.mu[target], params.mu[a])
            np.testing.assert_array_equal(permuted.omega[target], params.omega[a])

    def test_centered_covariance_matches_raw_second_moments(self):
        rng = np.random.default_rng(19)
        Y = rng.standard_normal((80, 4))
        raw = rng.integers(1, 3, 80)
        raw[:2] = [1, 2]
        labels = LabelVector(raw, 2)
        params = estimate_mixture(Y, labels)
        for a in range(2):
            block = Y[raw == a + 1]
            nc = len(block)
            second = block.T @ block
            recon = (second - nc * np.outer(params.mu[a], params.mu[a])) / (nc - 1)
            np.testing.assert_allclose(params.omega[a], recon, atol=1e-9)

    def test_label_count_must_match_rows(self):
        with pytest.raises(ValidationError):
            estimate_mixture(np.zeros((4, 2)), LabelVector(np.ones(3, dtype=int), 1))


class TestSingletonMixture:
    def test_one_component_per_row(self):
        Y = np.random.default_rng(23).standard_normal((9, 4))
        params = singleton_mixture(Y)
        assert params.kappa == 9
        np.testing.assert_allclose(params.pi, np.full(9, 1 / 9))
        np.testing.assert_array_equal(params.mu, Y)
        assert not params.omega.any()
