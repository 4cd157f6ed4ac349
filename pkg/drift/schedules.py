# drift/schedules.py
"""
Noise-scale ladders and every step-size rule the samplers consume.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple
import math

import numpy as np

from .errors import SamplerValidationError

VARIANTS = ("VE", "VP")
SNR_RATIOS = ("score_over_noise", "noise_over_score")


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Descending noise scales sigma_1 > ... > sigma_n with corrector settings.

    Args:
        sigmas: Noise standard deviations, strictly decreasing and positive
        n_sigma: Corrector steps per noise level
        epsilon: Base step-size hyperparameter
        delta: Momentum projection threshold in (0, 1]
    """
    sigmas: Tuple[float, ...]
    n_sigma: int = 1
    epsilon: float = 1e-4
    delta: float = 0.1

    def __post_init__(self):
        sigmas = tuple(float(s) for s in self.sigmas)
        object.__setattr__(self, "sigmas", sigmas)
        if not sigmas:
            raise SamplerValidationError("sigmas", "at least one noise level is required")
        if any(not math.isfinite(s) or s <= 0 for s in sigmas):
            raise SamplerValidationError("sigmas", "noise scales must be finite and positive")
        if any(a <= b for a, b in zip(sigmas, sigmas[1:])):
            raise SamplerValidationError("sigmas", "noise scales must be strictly decreasing")
        if int(self.n_sigma) != self.n_sigma or self.n_sigma < 1:
            raise SamplerValidationError("n_sigma", f"must be a positive integer, got {self.n_sigma}")
        if not self.epsilon > 0:
            raise SamplerValidationError("epsilon", f"must be positive, got {self.epsilon}")
        if not 0 < self.delta <= 1:
            raise SamplerValidationError("delta", f"must lie in (0, 1], got {self.delta}")

    @property
    def n(self) -> int:
        return len(self.sigmas)

    @property
    def sigma_n(self) -> float:
        return self.sigmas[-1]


def geometric_schedule(
    sigma_max: float,
    sigma_min: float,
    n: int,
    n_sigma: int = 1,
    epsilon: float = 1e-4,
    delta: float = 0.1
) -> NoiseSchedule:
    """
    Build a geometrically spaced ladder from sigma_max down to sigma_min.

    Args:
        sigma_max: Largest noise scale (first level)
        sigma_min: Smallest noise scale (last level)
        n: Number of levels, at least 2
        n_sigma: Corrector steps per level
        epsilon: Base step-size hyperparameter
        delta: Momentum projection threshold

    Returns:
        NoiseSchedule with sigma_i = sigma_max * (sigma_min/sigma_max)^((i-1)/(n-1))
    """
    if not (sigma_max > 0 and sigma_min > 0):
        raise SamplerValidationError("sigma_min", "noise scales must be positive")
    if not sigma_max > sigma_min:
        raise SamplerValidationError("sigma_max", f"must exceed sigma_min ({sigma_max} <= {sigma_min})")
    if int(n) != n or n < 2:
        raise SamplerValidationError("n", f"a geometric ladder needs at least 2 levels, got {n}")

    exponents = np.arange(n) / (n - 1)
    sigmas = sigma_max * np.exp(exponents * math.log(sigma_min / sigma_max))
    sigmas[0] = sigma_max
    sigmas[-1] = sigma_min
    return NoiseSchedule(tuple(sigmas.tolist()), n_sigma=n_sigma, epsilon=epsilon, delta=delta)


def als_step_size(schedule: NoiseSchedule, i: int) -> float:
    """Annealed step size epsilon * sigma_i^2 / sigma_n^2 for 1-based level i."""
    if int(i) != i or not 1 <= i <= schedule.n:
        raise SamplerValidationError("i", f"level index must lie in [1, {schedule.n}], got {i}")
    sigma_i = schedule.sigmas[i - 1]
    return schedule.epsilon * sigma_i ** 2 / schedule.sigma_n ** 2


def per_chain(value):
    """A float for single-chain values, the per-chain array otherwise."""
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def momentum_step_size(alpha, beta):
    """
    Momentum-adjusted step alpha * (1 + beta)^2.

    alpha and beta may be per-chain arrays; the result broadcasts over them.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if not np.all(alpha > 0):
        raise SamplerValidationError("alpha", f"must be positive, got {np.min(alpha)}")
    if not np.all((beta >= 0) & (beta < 1)):
        raise SamplerValidationError("beta", f"must lie in [0, 1), got {beta[(beta < 0) | (beta >= 1)].ravel()[0]}")
    return per_chain(alpha * (1 + beta) ** 2)


def snr_step_size(
    epsilon: float,
    beta,
    m_norm,
    z_norm,
    variant: str = "VE",
    epsilon0: float = None,
    ratio: str = "score_over_noise"
):
    """
    Signal-to-noise step size of the momentum corrector.

    VE: 2 * (eps * (1+beta)^2 * |m| / |z|)^2
    VP: 2 * eps * (eps0 * (1+beta)^2 * |m| / |z|)^2

    With ratio="noise_over_score" the norm ratio is inverted, matching the
    orientation of the usual Langevin corrector. A zero momentum norm in that
    orientation has no finite step and returns 0.

    Args:
        epsilon: Step hyperparameter
        beta: Current momentum coefficient (scalar or one per chain)
        m_norm: Norm of the momentum accumulator (scalar or one per chain)
        z_norm: Norm of the noise draw, must be positive
        variant: "VE" or "VP"
        epsilon0: VP outer coefficient; defaults to epsilon
        ratio: "score_over_noise" (default) or "noise_over_score"

    Returns:
        The step size (0 when the step collapses), per chain when the inputs are arrays
    """
    m_norm = np.asarray(m_norm, dtype=float)
    z_norm = np.asarray(z_norm, dtype=float)
    if not np.all(z_norm > 0):
        raise SamplerValidationError("z_norm", "degenerate noise draw with zero norm")
    if variant not in VARIANTS:
        raise SamplerValidationError("variant", f"must be one of {VARIANTS}, got {variant!r}")
    if ratio not in SNR_RATIOS:
        raise SamplerValidationError("snr_ratio", f"must be one of {SNR_RATIOS}, got {ratio!r}")

    if ratio == "score_over_noise":
        norm_ratio = m_norm / z_norm
    else:
        moving = m_norm > 0
        norm_ratio = np.where(moving, z_norm / np.where(moving, m_norm, 1.0), 0.0)

    boost = (1 + np.asarray(beta, dtype=float)) ** 2
    if variant == "VE":
        return per_chain(2 * (epsilon * boost * norm_ratio) ** 2)
    eps0 = epsilon if epsilon0 is None else epsilon0
    return per_chain(2 * epsilon * (eps0 * boost * norm_ratio) ** 2)


def vp_alpha_bar(sigma: float) -> float:
    """VP signal coefficient matching a VE noise scale: 1 / (1 + sigma^2)."""
    return 1.0 / (1.0 + sigma ** 2)


def vp_transition_beta(sigma_hi: float, sigma_lo: float) -> float:
    """Forward VP kernel coefficient between two adjacent levels."""
    if sigma_hi < sigma_lo:
        raise SamplerValidationError("sigmas", f"levels must be consumed in descending order ({sigma_hi} < {sigma_lo})")
    return 1.0 - vp_alpha_bar(sigma_hi) / vp_alpha_bar(sigma_lo)


def em_ve_variance(sigma_hi: float, sigma_lo: float) -> float:
    """Euler-Maruyama increment g^2 dt of the geometric VE SDE."""
    if sigma_hi < sigma_lo:
        raise SamplerValidationError("sigmas", f"levels must be consumed in descending order ({sigma_hi} < {sigma_lo})")
    return 2.0 * sigma_hi ** 2 * math.log(sigma_hi / sigma_lo)


def level_pairs(schedule: NoiseSchedule) -> Sequence[Tuple[float, float]]:
    """(sigma_hi, sigma_lo) for each predictor step; the first level starts from itself."""
    sigmas = schedule.sigmas
    return [(sigmas[max(i - 1, 0)], sigmas[i]) for i in range(schedule.n)]
