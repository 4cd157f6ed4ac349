"""Tests for point-cloud sample-quality metrics"""

from itertools import permutations
import math

import numpy as np
import pytest

from drift.errors import SamplerValidationError
from drift.metrics import (
    PointCloud,
    evaluate_cloud,
    exact_w2,
    gaussian_w2,
    median_bandwidth,
    moments,
    rbf_mmd,
    sliced_w2,
)


def brute_force_w2(X, Y):
    n = len(X)
    cost = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=2)
    orders = np.array(list(permutations(range(n))))
    return math.sqrt(cost[np.arange(n), orders].mean(axis=1).min())


def _rotation(theta):
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])


class TestPointCloud:
    def test_vector_becomes_column(self):
        cloud = PointCloud(np.array([1.0, 2.0, 3.0]))
        assert (cloud.n, cloud.d) == (3, 1)

    @pytest.mark.parametrize("points", [np.array([[0.0, np.nan]]), np.array([[np.inf]]), np.zeros((0, 2))])
    def test_rejects_bad_points(self, points):
        with pytest.raises(SamplerValidationError):
            PointCloud(points)


class TestExactW2:
    def test_examples(self):
        X = np.random.default_rng(0).standard_normal((5, 3))
        assert exact_w2(X, X) == 0.0
        assert exact_w2([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(5.0)
        assert exact_w2(np.array([0.0, 1.0]), np.array([1.0, 2.0])) == pytest.approx(1.0)

    def test_matches_permutation_minimum(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n, d = int(rng.integers(1, 8)), int(rng.integers(1, 4))
            X, Y = rng.standard_normal((n, d)), rng.standard_normal((n, d))
            assert exact_w2(X, Y) == pytest.approx(brute_force_w2(X, Y), abs=1e-10)

    def test_metric_properties(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(1, 17))
            X, Y, Z = (rng.standard_normal((n, 2)) for _ in range(3))
            assert exact_w2(X, Y) == pytest.approx(exact_w2(Y, X), abs=1e-12)
            assert exact_w2(X, Z) <= exact_w2(X, Y) + exact_w2(Y, Z) + 1e-10

    def test_validation(self):
        with pytest.raises(SamplerValidationError):
            exact_w2(np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(SamplerValidationError):
            exact_w2(np.zeros((3, 2)), np.zeros((3, 1)))
        with pytest.raises(SamplerValidationError) as excinfo:
            exact_w2(np.zeros((2049, 1)), np.zeros((2049, 1)))
        assert excinfo.value.field == "n"


class TestSlicedW2:
    def test_identical_clouds(self):
        X = np.random.default_rng(1).standard_normal((50, 2))
        assert sliced_w2(X, X, 16, np.random.default_rng(0)) == 0.0

    @pytest.mark.parametrize("n_projections", [1, 7, 128])
    def test_one_dimension_is_exact(self, n_projections):
        rng = np.random.default_rng(3)
        X, Y = rng.standard_normal(40), 2.0 + rng.standard_normal(40)
        assert sliced_w2(X, Y, n_projections, rng) == pytest.approx(exact_w2(X, Y), rel=1e-12)

    def test_deterministic_given_stream(self):
        rng = np.random.default_rng(4)
        X, Y = rng.standard_normal((200, 2)), rng.standard_normal((200, 2)) + 1.0
        first = sliced_w2(X, Y, 32, np.random.default_rng(11))
        second = sliced_w2(X, Y, 32, np.random.default_rng(11))
        assert first == second

    def test_gaussian_clouds_match_closed_form(self):
        rng = np.random.default_rng(2025)
        m1, v1, m2, v2 = np.zeros(2), 1.0, np.array([3.0, 0.0]), 4.0
        X = m1 + math.sqrt(v1) * rng.standard_normal((4096, 2))
        Y = m2 + math.sqrt(v2) * rng.standard_normal((4096, 2))
        # averaging over directions divides the squared closed form by d
        expected = gaussian_w2(m1, v1, m2, v2) / math.sqrt(2)
        assert sliced_w2(X, Y, 128, rng) == pytest.approx(expected, rel=0.10)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((1000, 2)) * [1.0, 0.3]
        Y = rng.standard_normal((1000, 2)) + [1.5, -0.5]
        R = _rotation(0.7)
        before = sliced_w2(X, Y, 256, np.random.default_rng(1))
        after = sliced_w2(X @ R.T, Y @ R.T, 256, np.random.default_rng(2))
        assert after == pytest.approx(before, rel=0.10)

    def test_unequal_sizes(self):
        rng = np.random.default_rng(8)
        value = sliced_w2(rng.standard_normal((300, 2)), rng.standard_normal((500, 2)) + 2.0, 64, rng)
        assert value > 0.0


class TestGaussianW2:
    def test_examples(self):
        assert gaussian_w2([1.0, 2.0], 0.5, [1.0, 2.0], 0.5) == 0.0
        assert gaussian_w2(0.0, 1.0, 0.0, 4.0) == pytest.approx(1.0)
        assert gaussian_w2([3.0, 4.0], 2.0, [0.0, 0.0], 2.0) == pytest.approx(5.0)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(SamplerValidationError):
            gaussian_w2(0.0, 0.0, 0.0, 1.0)


class TestMMD:
    def test_examples(self):
        X = np.random.default_rng(0).standard_normal((30, 2))
        assert rbf_mmd(X, X, 1.0) == 0.0
        assert rbf_mmd([[0.0, 0.0]], [[1.0, 1.0]], 1.0) == pytest.approx(math.sqrt(2 - 2 * math.exp(-1)))
        assert rbf_mmd([[0.0, 0.0]], [[1.0, 1.0]], 1.0) == pytest.approx(1.12439, abs=1e-5)

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        X, Y = rng.standard_normal((700, 2)), rng.standard_normal((300, 2)) + 0.5
        assert rbf_mmd(X, Y, 0.8) == pytest.approx(rbf_mmd(Y, X, 0.8), rel=1e-12)

    def test_rejects_nonpositive_bandwidth(self):
        with pytest.raises(SamplerValidationError) as excinfo:
            rbf_mmd([[0.0]], [[1.0]], 0.0)
        assert excinfo.value.field == "bandwidth"

    def test_median_bandwidth(self):
        assert median_bandwidth([[0.0], [1.0]], [[3.0]]) == pytest.approx(2.0)
        assert median_bandwidth([[1.0]], [[1.0]]) == 1.0


class TestMoments:
    def test_examples(self):
        mean, cov = moments(np.array([[1.0, 1.0], [-1.0, -1.0]]))
        np.testing.assert_array_equal(mean, [0.0, 0.0])
        np.testing.assert_allclose(cov, [[2.0, 2.0], [2.0, 2.0]])

        _, cov = moments(np.full((10, 3), 4.2))
        np.testing.assert_allclose(cov, np.zeros((3, 3)), atol=1e-24)

    def test_large_standard_normal(self):
        X = np.random.default_rng(10).standard_normal((100_000, 3))
        _, cov = moments(X)
        assert np.linalg.norm(cov - np.eye(3)) < 0.05 * np.linalg.norm(np.eye(3))

    def test_needs_two_points(self):
        with pytest.raises(SamplerValidationError):
            moments(np.zeros((1, 2)))


class TestEvaluateCloud:
    def test_identical_clouds_score_zero(self):
        X = np.random.default_rng(2).standard_normal((64, 2))
        records = evaluate_cloud(X, X, np.random.default_rng(0), n_projections=8)
        assert [r["metric"] for r in records] == [
            "exact_w2", "sliced_w2", "rbf_mmd", "mean_error", "covariance_error"
        ]
        assert all(r["value"] == pytest.approx(0.0, abs=1e-12) for r in records)
        assert records[1]["parameters"] == "n_projections=8"
        assert records[2]["parameters"].startswith("bandwidth=")

    def test_unequal_sizes_skip_exact(self):
        rng = np.random.default_rng(3)
        records = evaluate_cloud(rng.standard_normal((20, 2)), rng.standard_normal((30, 2)), rng)
        assert "exact_w2" not in [r["metric"] for r in records]
