# drift/score_models.py
"""
Analytic target densities with exact scores at every noise level.

The Gaussian mixture stands in for a trained score network: convolving each
isotropic component with N(0, sigma^2 I) keeps it Gaussian, so the perturbed
score is available in closed form.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict
import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp, softmax

from .errors import SamplerValidationError


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """
    Mixture of isotropic Gaussians.

    Args:
        weights: Mixing weights, positive and summing to 1
        means: K x d component means
        variances: Per-component isotropic variances
    """
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means.reshape(len(weights), -1)
        variances = np.asarray(self.variances, dtype=float).reshape(-1)

        if means.ndim != 2 or means.shape[0] != weights.shape[0] or variances.shape[0] != weights.shape[0]:
            raise SamplerValidationError("means", "weights, means and variances must describe the same components")
        if np.any(weights <= 0):
            raise SamplerValidationError("weights", "mixing weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise SamplerValidationError("weights", f"must sum to 1, got {weights.sum():.15g}")
        if np.any(variances <= 0):
            raise SamplerValidationError("variances", "component variances must be positive")

        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def score(self, x: np.ndarray, sigma: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return perturbed_score(self, x, sigma, scale)

    def log_density(self, x: np.ndarray, sigma: float = 0.0, scale: float = 1.0):
        return perturbed_log_density(self, x, sigma, scale)


def _component_terms(model: GaussianMixture, x: np.ndarray, sigma: float, scale: float):
    """Per-component log weights-times-densities, centred offsets and variances."""
    if sigma < 0:
        raise SamplerValidationError("sigma", f"must be nonnegative, got {sigma}")
    x = np.asarray(x, dtype=float)
    var = scale ** 2 * model.variances + sigma ** 2                 # (K,)
    diff = scale * model.means - x[..., None, :]                     # (..., K, d)
    sq = np.einsum("...kd,...kd->...k", diff, diff)
    d = model.dim
    log_terms = np.log(model.weights) - 0.5 * d * np.log(2 * math.pi * var) - 0.5 * sq / var
    return log_terms, diff, var


def perturbed_score(model: GaussianMixture, x: np.ndarray, sigma: float = 0.0, scale: float = 1.0) -> np.ndarray:
    """
    Exact score of scale*X + sigma*Z where X follows the mixture.

    Args:
        model: Target mixture
        x: Point(s) of shape (d,) or (..., d)
        sigma: Perturbation standard deviation (0 gives the clean score)
        scale: Signal coefficient, 1 for VE levels and sqrt(alpha_bar) for VP

    Returns:
        Score vector(s) with the shape of x
    """
    log_terms, diff, var = _component_terms(model, x, sigma, scale)
    resp = softmax(log_terms, axis=-1)
    return np.einsum("...k,...kd->...d", resp / var, diff)


def perturbed_log_density(model: GaussianMixture, x: np.ndarray, sigma: float = 0.0, scale: float = 1.0):
    """Log density of the perturbed mixture, log-sum-exp stabilised."""
    log_terms, _, _ = _component_terms(model, x, sigma, scale)
    return logsumexp(log_terms, axis=-1)


def sample_mixture(model: GaussianMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n exact samples from the clean mixture."""
    labels = rng.choice(model.n_components, size=n, p=model.weights)
    noise = rng.standard_normal((n, model.dim))
    return model.means[labels] + np.sqrt(model.variances[labels])[:, None] * noise


@dataclass(frozen=True, eq=False)
class QuadraticPotential:
    """f(x) = 1/2 x^T A x + b^T x + c with symmetric positive-definite A."""
    A: np.ndarray
    b: np.ndarray
    c: float = 0.0
    mu: float = field(init=False)
    L: float = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
            raise SamplerValidationError("A", f"shape {A.shape} does not match b of length {b.shape[0]}")
        if np.max(np.abs(A - A.T)) > 1e-12:
            raise SamplerValidationError("A", "matrix must be symmetric")
        eigs = np.linalg.eigvalsh(A)
        if eigs[0] <= 0:
            raise SamplerValidationError("A", f"matrix must be positive definite (min eigenvalue {eigs[0]:.3g})")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "mu", float(eigs[0]))
        object.__setattr__(self, "L", float(eigs[-1]))

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def value(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.A, x) + x @ self.b + self.c

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.A + self.b

    def minimizer(self) -> np.ndarray:
        return -np.linalg.solve(self.A, self.b)


@dataclass(frozen=True)
class NonQuadraticPotential:
    """
    f(x) = kappa/2 |x|^2 + sum_j log cosh(x_j - shift).

    Strongly convex with mu = kappa and L = kappa + 1. A nonzero shift moves
    the minimizer off the symmetry point so the third derivative there is
    nonzero.
    """
    kappa: float
    d: int
    shift: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise SamplerValidationError("kappa", f"must be positive, got {self.kappa}")
        if int(self.d) != self.d or self.d < 1:
            raise SamplerValidationError("d", f"must be a positive integer, got {self.d}")

    @property
    def mu(self) -> float:
        return float(self.kappa)

    @property
    def L(self) -> float:
        return float(self.kappa) + 1.0

    @property
    def dim(self) -> int:
        return int(self.d)

    def value(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        u = x - self.shift
        # log cosh(u) = |u| + log1p(exp(-2|u|)) - log 2
        log_cosh = np.abs(u) + np.log1p(np.exp(-2 * np.abs(u))) - math.log(2.0)
        return 0.5 * self.kappa * np.sum(x * x, axis=-1) + np.sum(log_cosh, axis=-1)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.kappa * x + np.tanh(x - self.shift)

    def minimizer(self) -> np.ndarray:
        if self.shift == 0:
            return np.zeros(self.dim)
        # kappa*x + tanh(x - c) changes sign on [min(0, c), max(0, c)]
        root = brentq(
            lambda u: self.kappa * u + math.tanh(u - self.shift),
            min(0.0, self.shift), max(0.0, self.shift),
            xtol=1e-15, rtol=4 * np.finfo(float).eps
        )
        return np.full(self.dim, root)


def potential_gradient(potential, x: np.ndarray) -> np.ndarray:
    """Gradient of a quadratic or log-cosh potential."""
    if not isinstance(potential, (QuadraticPotential, NonQuadraticPotential)):
        raise SamplerValidationError("potential", f"unsupported potential type {type(potential).__name__}")
    return potential.gradient(x)


def _gauss1d() -> GaussianMixture:
    return GaussianMixture(weights=[1.0], means=[[0.0]], variances=[1.0], name="gauss1d")


def _grid25() -> GaussianMixture:
    ticks = np.linspace(-4.0, 4.0, 5)
    means = np.array([[a, b] for a in ticks for b in ticks])
    return GaussianMixture(
        weights=np.full(25, 1.0 / 25),
        means=means,
        variances=np.full(25, 0.01),
        name="grid25"
    )


def _swissroll_mixture() -> GaussianMixture:
    t = np.linspace(1.5 * math.pi, 4.5 * math.pi, 64)
    means = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / 3.0
    return GaussianMixture(
        weights=np.full(64, 1.0 / 64),
        means=means,
        variances=np.full(64, 0.04),
        name="swissroll-mixture"
    )


MODEL_PRESETS: Dict[str, Callable[[], GaussianMixture]] = {
    "gauss1d": _gauss1d,
    "grid25": _grid25,
    "swissroll-mixture": _swissroll_mixture,
}


def load_model(name: str) -> GaussianMixture:
    """Build a preset target by name."""
    try:
        return MODEL_PRESETS[name]()
    except KeyError:
        raise SamplerValidationError(
            "model_name", f"unknown preset {name!r}; choose from {sorted(MODEL_PRESETS)}"
        ) from None
