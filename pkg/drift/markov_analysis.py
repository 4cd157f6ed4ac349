# drift/markov_analysis.py
"""
Linear-algebra checks of the momentum chain on quadratic and strongly
convex targets.

On a quadratic target the stacked state z_t = (x_t, x_{t-1}) evolves as
z_{t+1} = T z_t + c + noise with

    T = [[(1 + beta) I - alpha (1 - beta) A, -beta I],
         [I,                                  0     ]]

so contraction, stationary covariance and the adaptive-beta rate bound all
reduce to properties of T.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence
import logging
import math

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import curve_fit

from config.settings import settings
from .errors import NumericalFailure, SamplerValidationError
from .samplers import beta_update
from .score_models import NonQuadraticPotential, QuadraticPotential

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    T: np.ndarray
    alpha: float
    beta: float
    A: np.ndarray

    @property
    def dim(self) -> int:
        return self.A.shape[0]


def _check_spd(A: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise SamplerValidationError("A", f"matrix must be square, got {A.shape}")
    if np.max(np.abs(A - A.T)) > 1e-12:
        raise SamplerValidationError("A", "matrix must be symmetric")
    if np.linalg.eigvalsh(A)[0] <= 0:
        raise SamplerValidationError("A", "matrix must be positive definite")
    return A


def _block(A: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    d = A.shape[0]
    eye = np.eye(d)
    T = np.zeros((2 * d, 2 * d))
    T[:d, :d] = (1 + beta) * eye - alpha * (1 - beta) * A
    T[:d, d:] = -beta * eye
    T[d:, :d] = eye
    return T


def build_transition(A: np.ndarray, alpha: float, beta: float) -> TransitionMatrix:
    """Assemble the 2d x 2d transition matrix of the momentum chain."""
    A = _check_spd(A)
    L = np.linalg.eigvalsh(A)[-1]
    if alpha < 0 or alpha > (2.0 / L) * (1 + 1e-12):
        raise SamplerValidationError("alpha", f"must lie in [0, 2/L] = [0, {2.0 / L:.6g}], got {alpha}")
    if not 0 <= beta < 1:
        raise SamplerValidationError("beta", f"must lie in [0, 1), got {beta}")
    return TransitionMatrix(T=_block(A, alpha, beta), alpha=float(alpha), beta=float(beta), A=A)


def _root_moduli(A: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Largest root modulus of the per-eigenvalue quadratic, one per eigenvalue of A."""
    c = (1 + beta) - alpha * (1 - beta) * np.linalg.eigvalsh(A)
    disc = c * c - 4 * beta
    # near-double roots are ill-conditioned; snap them to the exact double root |c|/2
    double = np.abs(disc) <= 64 * np.finfo(float).eps * np.maximum(c * c, 4 * beta)
    real = (np.abs(c) + np.sqrt(np.clip(disc, 0.0, None))) / 2
    return np.where(double, np.abs(c) / 2, np.where(disc > 0, real, math.sqrt(beta)))


def is_momentum_block(T: TransitionMatrix) -> bool:
    """Whether T.T is exactly the momentum-chain block built from (A, alpha, beta)."""
    A = np.atleast_2d(np.asarray(T.A, dtype=float))
    matrix = np.asarray(T.T, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.array_equal(A, A.T):
        return False
    if matrix.shape != (2 * A.shape[0], 2 * A.shape[0]):
        return False
    return bool(np.array_equal(matrix, _block(A, T.alpha, T.beta)))


def spectral_radius(T: TransitionMatrix) -> float:
    """
    Largest eigenvalue modulus of T.

    For the momentum block each eigenvalue a of A contributes the two roots of
    lambda^2 - ((1+beta) - alpha(1-beta) a) lambda + beta, so the spectrum is
    computed from those quadratics. Any other matrix goes to a general
    eigen-solver.
    """
    if not is_momentum_block(T):
        return float(np.max(np.abs(np.linalg.eigvals(np.asarray(T.T, dtype=float)))))
    return float(np.max(_root_moduli(T.A, T.alpha, T.beta)))


def eigenvalue_pairs(A: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Roots of lambda^2 - ((1+beta) - alpha(1-beta) a) lambda + beta for every eigenvalue a of A."""
    roots = []
    for a in np.linalg.eigvalsh(_check_spd(A)):
        roots.extend(np.roots([1.0, -((1 + beta) - alpha * (1 - beta) * a), beta]))
    return np.asarray(roots, dtype=complex)


def rate_bound(alpha: float, mu: float) -> float:
    """(1 - alpha mu) / (1 + alpha mu), the contraction rate under adaptive beta."""
    if not (alpha > 0 and mu > 0):
        raise SamplerValidationError("alpha", "alpha and mu must be positive")
    if alpha * mu >= 1:
        raise SamplerValidationError("alpha", f"bound needs alpha*mu < 1, got {alpha * mu}")
    return (1 - alpha * mu) / (1 + alpha * mu)


def adaptive_beta(alpha: float, mu: float) -> float:
    return rate_bound(alpha, mu) ** 2


def bound_step_limit(mu: float, L: float) -> float:
    """
    Largest alpha for which adaptive beta attains the rate bound.

    Beyond 1/sqrt(mu L) the top eigenvalue of A leaves the complex-root regime
    and the bound no longer holds.
    """
    return min(2.0 / L, 1.0 / math.sqrt(mu * L))


def noise_covariance(d: int, alpha: float) -> np.ndarray:
    """Langevin noise enters the position block only: diag(2 alpha I, 0)."""
    Q = np.zeros((2 * d, 2 * d))
    Q[:d, :d] = 2 * alpha * np.eye(d)
    return Q


def stationary_covariance(T: TransitionMatrix, Q: np.ndarray) -> np.ndarray:
    """
    Solve Sigma = T Sigma T^T + Q.

    Direct vectorised solve up to the configured size, bilinear
    transformation beyond it. Raises when the chain has no stationary law.
    """
    rho = spectral_radius(T)
    if rho >= 1:
        raise NumericalFailure(f"spectral radius {rho:.6g} >= 1: no stationary distribution")
    Q = np.asarray(Q, dtype=float)
    method = "direct" if T.T.shape[0] <= settings.LYAPUNOV_DIRECT_LIMIT else "bilinear"
    sigma = solve_discrete_lyapunov(T.T, Q, method=method)
    sigma = 0.5 * (sigma + sigma.T)

    residual = lyapunov_residual(T, sigma, Q)
    scale = max(np.linalg.norm(Q), np.finfo(float).tiny)
    if np.linalg.norm(Q) > 0 and residual > settings.LYAPUNOV_TOLERANCE * scale:
        raise NumericalFailure(f"Lyapunov residual {residual:.3g} exceeds tolerance")
    return sigma


def lyapunov_residual(T: TransitionMatrix, sigma: np.ndarray, Q: np.ndarray) -> float:
    return float(np.linalg.norm(sigma - T.T @ sigma @ T.T.T - Q))


def random_spd(d: int, rng: np.random.Generator, mu: float = 0.5, L: float = 2.0) -> np.ndarray:
    """Random symmetric matrix with spectrum in [mu, L], extremes attained exactly."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigs = rng.uniform(mu, L, size=d)
    eigs[0] = mu
    if d > 1:
        eigs[-1] = L
    A = (Q * eigs) @ Q.T
    return 0.5 * (A + A.T)


def contraction_estimate(
    A: np.ndarray,
    alpha: float,
    beta: float,
    init_a: np.ndarray,
    init_b: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    b: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Distances between two chains driven by the same noise draws.

    The common noise cancels, so the difference follows T^t (z_a - z_b).

    Returns:
        |z_a^t - z_b^t| for t = 1..steps
    """
    transition = build_transition(A, alpha, beta)
    rho = spectral_radius(transition)
    if rho >= 1:
        raise NumericalFailure(f"spectral radius {rho:.6g} >= 1: chains do not contract")

    d = transition.dim
    b = np.zeros(d) if b is None else np.asarray(b, dtype=float)
    drift = np.concatenate([-alpha * (1 - beta) * b, np.zeros(d)])
    za, zb = np.asarray(init_a, dtype=float).copy(), np.asarray(init_b, dtype=float).copy()
    distances = np.empty(steps)
    for t in range(steps):
        noise = np.concatenate([math.sqrt(2 * alpha) * rng.standard_normal(d), np.zeros(d)])
        za = transition.T @ za + drift + noise
        zb = transition.T @ zb + drift + noise
        distances[t] = np.linalg.norm(za - zb)
    return distances


def log_slope(distances: np.ndarray, floor: float = 1e-10) -> float:
    """
    Least-squares slope of log distance over the tail of the decay.

    Points below floor times the first distance are dropped (rounding noise
    from the shared draws); the fit uses the later half of what remains.
    """
    distances = np.asarray(distances, dtype=float)
    if distances.size == 0 or distances[0] <= 0:
        raise NumericalFailure("no decay to fit")
    valid = np.flatnonzero(distances > floor * distances[0])
    cutoff = valid[-1] + 1 if valid.size else 0
    if cutoff < 4:
        raise NumericalFailure("too few points above the rounding floor to fit a slope")
    t = np.arange(cutoff // 2, cutoff)
    slope, _ = np.polyfit(t, np.log(distances[t]), 1)
    return float(slope)


@dataclass
class ChainSummary:
    """Post-burn-in statistics of a batch of replica chains."""
    mean: np.ndarray
    standard_error: np.ndarray
    replica_means: np.ndarray
    squared_distance: Optional[np.ndarray] = None
    diverged: bool = False


def run_nshb_chain(
    potential,
    alpha: float,
    steps: int,
    replicas: int,
    rng: np.random.Generator,
    beta: float = 0.0,
    beta_mode: str = "fixed",
    delta: float = 0.1,
    burn_in: int = 0,
    noise_scale: float = 1.0,
    init: Optional[np.ndarray] = None,
    track_distance: bool = False,
    block: int = 4096
) -> ChainSummary:
    """
    Run replicas of the heavy-ball chain with additive gradient noise.

    x_{t+1} = x_t - alpha (1 - beta) (grad f(x_t) + noise_scale xi_t) + beta (x_t - x_{t-1})

    Replicas advance together in one array; noise for all replicas is drawn
    from the single stream in replica order.

    Args:
        potential: QuadraticPotential or NonQuadraticPotential
        alpha: Step size
        steps: Chain length
        replicas: Number of independent replicas
        rng: Random stream
        beta: Momentum for beta_mode="fixed"
        beta_mode: "fixed" or "adaptive" (beta from successive gradient differences, per replica)
        delta: Projection threshold for adaptive beta
        burn_in: Steps discarded before averaging
        noise_scale: Standard deviation of the gradient noise
        init: Starting point (defaults to the minimizer)
        track_distance: Record the replica-averaged squared distance to the minimizer per step
        block: Steps of noise drawn per batch

    Returns:
        ChainSummary of the post-burn-in iterates
    """
    if beta_mode not in ("fixed", "adaptive"):
        raise SamplerValidationError("beta_mode", f"must be 'fixed' or 'adaptive', got {beta_mode!r}")
    if burn_in >= steps:
        raise SamplerValidationError("burn_in", "must be shorter than the chain")

    d = potential.dim
    x_star = potential.minimizer()
    start = x_star if init is None else np.asarray(init, dtype=float)
    x = np.tile(start, (replicas, 1))
    x_prev = x.copy()
    g_prev = np.zeros_like(x)
    betas = np.full(replicas, float(beta) if beta_mode == "fixed" else 0.0)

    running = np.zeros((replicas, d))
    sq_dist = np.empty(steps) if track_distance else None
    diverged = False

    for offset in range(0, steps, block):
        count = min(block, steps - offset)
        noise = rng.standard_normal((count, replicas, d)) * noise_scale
        for j in range(count):
            t = offset + j
            g = potential.gradient(x)
            if beta_mode == "adaptive":
                betas = beta_update(alpha, x, x_prev, g, g_prev, delta, t, betas)
            momentum = (betas[:, None]) * (x - x_prev)
            x_next = x - alpha * (1 - betas[:, None]) * (g + noise[j]) + momentum
            x_prev, x, g_prev = x, x_next, g
            if t >= burn_in:
                running += x
            if track_distance:
                sq_dist[t] = float(np.mean(np.sum((x - x_star) ** 2, axis=1)))
        if not np.all(np.isfinite(x)) or np.max(np.abs(x - x_star)) > settings.DIVERGENCE_THRESHOLD:
            diverged = True
            break

    kept = steps - burn_in
    replica_means = running / kept
    mean = replica_means.mean(axis=0)
    if replicas > 1:
        standard_error = replica_means.std(axis=0, ddof=1) / math.sqrt(replicas)
    else:
        standard_error = np.full(d, np.nan)
    return ChainSummary(
        mean=mean,
        standard_error=standard_error,
        replica_means=replica_means,
        squared_distance=sq_dist,
        diverged=diverged
    )


@dataclass
class BiasScalingResult:
    slope: float
    intercept: float
    alphas: List[float]
    biases: List[np.ndarray]
    bias_norms: List[float]
    standard_errors: List[np.ndarray]
    aborted: List[float] = field(default_factory=list)


def bias_scaling_experiment(
    potential,
    alphas: Sequence[float],
    beta_mode: str,
    chain_length: int,
    burn_in: int,
    rng: np.random.Generator,
    replicas: int = 8,
    beta: float = 0.0,
    delta: float = 0.1,
    noise_scale: float = 1.0
) -> BiasScalingResult:
    """
    Stationary bias of the chain mean against alpha, with its log-log slope.

    A quadratic target has zero bias at every alpha; a strongly convex target
    with nonzero third derivative shows a bias linear in alpha.
    """
    alphas = [float(a) for a in alphas]
    if len(alphas) < 2:
        raise SamplerValidationError("alphas", "a slope needs at least two step sizes")
    for alpha in alphas:
        if not 0 < alpha * potential.L < 2:
            raise SamplerValidationError("alphas", f"alpha*L must lie in (0, 2), got {alpha * potential.L:.4g}")

    x_star = potential.minimizer()
    kept, biases, norms, errors, aborted = [], [], [], [], []
    for alpha in alphas:
        summary = run_nshb_chain(
            potential, alpha, chain_length, replicas, rng,
            beta=beta, beta_mode=beta_mode, delta=delta, burn_in=burn_in, noise_scale=noise_scale
        )
        if summary.diverged:
            logger.warning("Chain diverged at alpha=%.4g; dropping it from the fit", alpha)
            aborted.append(alpha)
            continue
        bias = summary.mean - x_star
        kept.append(alpha)
        biases.append(bias)
        norms.append(float(np.linalg.norm(bias)))
        errors.append(summary.standard_error)
        logger.debug("alpha=%.4g bias=%.4g", alpha, norms[-1])

    if len(kept) < 2:
        raise NumericalFailure("fewer than two step sizes produced a stationary chain")
    positive = [(a, b) for a, b in zip(kept, norms) if b > 0]
    if len(positive) >= 2:
        slope, intercept = np.polyfit(np.log([a for a, _ in positive]), np.log([b for _, b in positive]), 1)
    else:
        slope, intercept = float("nan"), float("nan")
    return BiasScalingResult(
        slope=float(slope),
        intercept=float(intercept),
        alphas=kept,
        biases=biases,
        bias_norms=norms,
        standard_errors=errors,
        aborted=aborted
    )


@dataclass
class DecayFit:
    rate: float
    floor: float
    amplitude: float
    converged: bool
    curve: np.ndarray


def _decay_model(t, floor, amplitude, rate):
    return floor + amplitude * np.power(rate, t)


def squared_distance_decay(
    potential,
    alpha: float,
    delta: float,
    chain_length: int,
    replicas: int,
    rng: np.random.Generator,
    noise_scale: float = 1.0,
    init_offset: float = 3.0
) -> DecayFit:
    """
    Fit E|x_t - x*|^2 ~ floor + amplitude * rate^t for the adaptive-beta chain.

    Starts every replica at x* + init_offset and averages the squared
    distance over replicas. Residuals are taken relative to the curve height,
    floored at 1e-12 of the starting distance.
    """
    if not 2 * alpha * delta * potential.mu < 1:
        raise SamplerValidationError("alpha", "decay bound needs 2*alpha*delta*mu < 1")
    x_star = potential.minimizer()
    summary = run_nshb_chain(
        potential, alpha, chain_length, replicas, rng,
        beta_mode="adaptive", delta=delta, noise_scale=noise_scale,
        init=x_star + init_offset, track_distance=True
    )
    curve = summary.squared_distance
    if summary.diverged:
        return DecayFit(rate=float("nan"), floor=float("nan"), amplitude=float("nan"), converged=False, curve=curve)

    t = np.arange(curve.shape[0], dtype=float)
    tail = curve[-max(curve.shape[0] // 4, 1):]
    floor0 = float(np.mean(tail))
    amplitude0 = max(float(curve[0]) - floor0, 1e-12)
    # first-crossing estimate of the rate as a starting point
    below = np.flatnonzero(curve - floor0 < 0.5 * amplitude0)
    half_life = max(int(below[0]), 1) if below.size else curve.shape[0] // 2
    rate0 = min(max(0.5 ** (1.0 / half_life), 1e-6), 1 - 1e-9)
    try:
        params, _ = curve_fit(
            _decay_model, t, curve,
            p0=[floor0, amplitude0, rate0],
            sigma=np.maximum(curve, 1e-12 * max(float(curve[0]), 1e-300)),
            bounds=([0.0, 0.0, 0.0], [np.inf, np.inf, 1.0]),
            maxfev=20000
        )
        converged = bool(np.all(np.isfinite(params)))
    except (RuntimeError, ValueError) as exc:
        logger.warning("Decay fit did not converge: %s", exc)
        params, converged = [floor0, amplitude0, rate0], False
    floor, amplitude, rate = (float(p) for p in params)
    return DecayFit(rate=rate, floor=floor, amplitude=amplitude, converged=converged, curve=curve)


def markov_check(
    alpha_grid: Sequence[float],
    dim: int,
    rng: np.random.Generator,
    matrices: int = 200,
    chain_length: int = 200_000,
    burn_in: int = 10_000,
    replicas: int = 8,
    bias_beta: float = 0.5
) -> Dict[str, float]:
    """
    Run the desk-scale verification suite.

    The bias chains use a fixed momentum bias_beta, so the alpha (1 - beta)
    gradient step of the heavy-ball update is what gets measured.

    Returns:
        Dict with the spectral-bound violation count, the largest relative
        Lyapunov residual and the log-cosh bias slope over alpha_grid.
    """
    violations = 0
    worst_residual = 0.0
    for _ in range(matrices):
        d = int(rng.integers(1, dim + 1))
        A = random_spd(d, rng, mu=float(rng.uniform(0.1, 1.0)), L=float(rng.uniform(1.0, 4.0)))
        eigs = np.linalg.eigvalsh(A)
        mu, L = float(eigs[0]), float(eigs[-1])
        alpha = float(rng.uniform(0.0, 1.0)) * bound_step_limit(mu, L)
        if alpha <= 0:
            continue
        transition = build_transition(A, alpha, adaptive_beta(alpha, mu))
        if spectral_radius(transition) > rate_bound(alpha, mu) + 1e-9:
            violations += 1
        Q = noise_covariance(d, alpha)
        sigma = stationary_covariance(transition, Q)
        worst_residual = max(worst_residual, lyapunov_residual(transition, sigma, Q) / np.linalg.norm(Q))

    potential = NonQuadraticPotential(kappa=1.0, d=1, shift=1.0)
    bias = bias_scaling_experiment(
        potential, alpha_grid, "fixed", chain_length, burn_in, rng, replicas=replicas, beta=bias_beta
    )
    return {
        "matrices": matrices,
        "bound_violations": violations,
        "max_lyapunov_residual": worst_residual,
        "bias_slope": bias.slope,
        "bias_beta": float(bias_beta),
    }
