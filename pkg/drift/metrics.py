# drift/metrics.py
"""
Sample-quality metrics for point clouds: exact and sliced Wasserstein-2,
the closed-form isotropic Gaussian W2, RBF MMD and moment errors.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple
import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from config.settings import settings
from .errors import SamplerValidationError

_KERNEL_TILE = 512


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N x d matrix of finite samples."""
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or points.shape[0] < 1:
            raise SamplerValidationError("points", "a point cloud needs at least one row")
        if not np.all(np.isfinite(points)):
            raise SamplerValidationError("points", "point cloud entries must be finite")
        object.__setattr__(self, "points", points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def _as_cloud(X) -> PointCloud:
    return X if isinstance(X, PointCloud) else PointCloud(X)


def _check_dims(X: PointCloud, Y: PointCloud):
    if X.d != Y.d:
        raise SamplerValidationError("d", f"dimension mismatch ({X.d} vs {Y.d})")


def exact_w2(X, Y) -> float:
    """Empirical W2 between equal-size clouds via an optimal assignment."""
    X, Y = _as_cloud(X), _as_cloud(Y)
    _check_dims(X, Y)
    if X.n != Y.n:
        raise SamplerValidationError("n", f"exact W2 needs equal sizes ({X.n} vs {Y.n})")
    if X.n > settings.EXACT_W2_LIMIT:
        raise SamplerValidationError("n", f"exact W2 is limited to {settings.EXACT_W2_LIMIT} points, got {X.n}")
    cost = cdist(X.points, Y.points, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(max(cost[rows, cols].mean(), 0.0))


def _sorted_matching_sq(u: np.ndarray, v: np.ndarray) -> float:
    """Squared 1-D W2 between two projected samples (quantile matching)."""
    u, v = np.sort(u), np.sort(v)
    if u.shape[0] == v.shape[0]:
        return float(np.mean((u - v) ** 2))
    levels = (np.arange(max(len(u), len(v))) + 0.5) / max(len(u), len(v))
    return float(np.mean((np.quantile(u, levels) - np.quantile(v, levels)) ** 2))


def sliced_w2(X, Y, n_projections: int = None, rng: np.random.Generator = None) -> float:
    """
    Root-mean over random unit directions of the squared 1-D W2.

    In one dimension there is a single direction and the result equals exact_w2.
    """
    X, Y = _as_cloud(X), _as_cloud(Y)
    _check_dims(X, Y)
    if X.d == 1:
        return math.sqrt(_sorted_matching_sq(X.points[:, 0], Y.points[:, 0]))
    n_projections = n_projections or settings.DEFAULT_PROJECTIONS
    rng = rng if rng is not None else np.random.default_rng(0)
    directions = rng.standard_normal((n_projections, X.d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    px, py = X.points @ directions.T, Y.points @ directions.T
    total = sum(_sorted_matching_sq(px[:, j], py[:, j]) for j in range(n_projections))
    return math.sqrt(total / n_projections)


def gaussian_w2(m1, v1: float, m2, v2: float) -> float:
    """W2 between N(m1, v1 I) and N(m2, v2 I)."""
    if not (v1 > 0 and v2 > 0):
        raise SamplerValidationError("variance", "isotropic variances must be positive")
    m1, m2 = np.atleast_1d(np.asarray(m1, dtype=float)), np.atleast_1d(np.asarray(m2, dtype=float))
    d = m1.shape[0]
    return math.sqrt(float(np.sum((m1 - m2) ** 2)) + d * (math.sqrt(v1) - math.sqrt(v2)) ** 2)


def _kernel_mean(A: np.ndarray, B: np.ndarray, bandwidth: float) -> float:
    """Mean Gaussian kernel value, accumulated over row tiles in fixed order."""
    total = 0.0
    for start in range(0, A.shape[0], _KERNEL_TILE):
        block = cdist(A[start:start + _KERNEL_TILE], B, metric="sqeuclidean")
        total += float(np.exp(-block / (2 * bandwidth ** 2)).sum())
    return total / (A.shape[0] * B.shape[0])


def rbf_mmd(X, Y, bandwidth: float) -> float:
    """Biased (V-statistic) MMD with a Gaussian kernel of the given bandwidth."""
    if not bandwidth > 0:
        raise SamplerValidationError("bandwidth", f"must be positive, got {bandwidth}")
    X, Y = _as_cloud(X), _as_cloud(Y)
    _check_dims(X, Y)
    kxx = _kernel_mean(X.points, X.points, bandwidth)
    kyy = _kernel_mean(Y.points, Y.points, bandwidth)
    kxy = _kernel_mean(X.points, Y.points, bandwidth)
    return math.sqrt(max(kxx + kyy - 2 * kxy, 0.0))


def median_bandwidth(X, Y) -> float:
    """Median pairwise distance of the pooled clouds."""
    pooled = np.vstack([_as_cloud(X).points, _as_cloud(Y).points])
    distances = pdist(pooled)
    positive = distances[distances > 0]
    return float(np.median(positive)) if positive.size else 1.0


def moments(X) -> Tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance."""
    X = _as_cloud(X)
    if X.n < 2:
        raise SamplerValidationError("n", "moments need at least two points")
    return X.points.mean(axis=0), np.atleast_2d(np.cov(X.points, rowvar=False, ddof=1))


def evaluate_cloud(
    samples,
    reference,
    rng: np.random.Generator,
    n_projections: int = None
) -> List[Dict[str, Any]]:
    """
    Score a generated cloud against a reference cloud.

    Returns:
        Flat metric records {metric, value, parameters}
    """
    X, Y = _as_cloud(samples), _as_cloud(reference)
    n_projections = n_projections or settings.DEFAULT_PROJECTIONS
    records = []

    if X.n == Y.n and X.n <= settings.EXACT_W2_LIMIT:
        records.append({"metric": "exact_w2", "value": exact_w2(X, Y), "parameters": ""})
    records.append({
        "metric": "sliced_w2",
        "value": sliced_w2(X, Y, n_projections, rng),
        "parameters": f"n_projections={n_projections}"
    })
    bandwidth = median_bandwidth(X, Y)
    records.append({
        "metric": "rbf_mmd",
        "value": rbf_mmd(X, Y, bandwidth),
        "parameters": f"bandwidth={bandwidth:.17g}"
    })
    if X.n >= 2 and Y.n >= 2:
        mx, cx = moments(X)
        my, cy = moments(Y)
        records.append({"metric": "mean_error", "value": float(np.linalg.norm(mx - my)), "parameters": ""})
        records.append({"metric": "covariance_error", "value": float(np.linalg.norm(cx - cy)), "parameters": "frobenius"})
    return records
