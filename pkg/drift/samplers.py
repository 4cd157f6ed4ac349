# drift/samplers.py
"""
Chain-update rules: Langevin, adaptive momentum, VE/VP predictors,
correctors, predictor-corrector composition and the final denoising step.

Every sampler takes an explicit random stream. Within a step the draw
order is fixed (noise first, then the score evaluation, then beta), so
samplers that reduce to one another produce bit-identical trajectories on
the same stream.

Positions are either one chain of shape (d,) or a batch of shape (chains, d).
Per-chain quantities (beta, step sizes, norms) are then floats or arrays of
shape (chains,), and every norm is taken over the last axis only.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from .errors import NumericalFailure, SamplerValidationError
from .schedules import (
    NoiseSchedule,
    VARIANTS,
    als_step_size,
    em_ve_variance,
    level_pairs,
    momentum_step_size,
    per_chain,
    snr_step_size,
    vp_alpha_bar,
    vp_transition_beta,
)

logger = logging.getLogger(__name__)

PREDICTORS = ("EM-VE", "RD-VE", "RD-VP", "EM-VP")
CORRECTORS = ("MC", "LC")
ALPHA_TILDE_MODES = ("per_step", "per_level")


class ChainStreams:
    """
    One generator per chain, drawn from in lockstep.

    Row k of every draw comes from generator k alone, so a chain's trajectory
    does not depend on which other chains share its batch.
    """

    def __init__(self, generators: Sequence[np.random.Generator]):
        self.generators = list(generators)
        if not self.generators:
            raise SamplerValidationError("chains", "at least one chain stream is required")

    def __len__(self):
        return len(self.generators)

    def standard_normal(self, shape) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        if len(shape) < 2 or shape[0] != len(self.generators):
            raise SamplerValidationError(
                "shape", f"draws must have one row per chain ({len(self.generators)}), got {shape}"
            )
        return np.stack([g.standard_normal(shape[1:]) for g in self.generators])

    def redraw(self, z: np.ndarray, rows: Sequence[int]) -> np.ndarray:
        z = z.copy()
        for k in rows:
            z[k] = self.generators[k].standard_normal(z.shape[1:])
        return z


RandomStream = Union[np.random.Generator, ChainStreams]


def _rows(value) -> np.ndarray:
    """Per-chain scalars as a column that broadcasts against positions."""
    return np.asarray(value, dtype=float)[..., None]


def _norms(v: np.ndarray):
    return per_chain(np.linalg.norm(v, axis=-1))


@dataclass(frozen=True)
class SamplerState:
    """
    Chain position plus the momentum bookkeeping of the adaptive corrector.

    Args:
        x: Current sample, (d,) or (chains, d)
        x_prev: Position before the last update
        g_prev: Score evaluated at x_prev
        m: Momentum accumulator
        beta: Current momentum coefficient, per chain for batches
        t: Updates taken at the current noise level
        nfe: Score evaluations so far, per chain
        alpha: Base step size used by the last update, per chain for batches
    """
    x: np.ndarray
    x_prev: np.ndarray
    g_prev: np.ndarray
    m: np.ndarray
    beta: Union[float, np.ndarray] = 0.0
    t: int = 0
    nfe: int = 0
    alpha: Union[float, np.ndarray] = 0.0

    @classmethod
    def start(cls, x: np.ndarray, nfe: int = 0) -> "SamplerState":
        x = np.array(x, dtype=float)
        zeros = np.zeros_like(x)
        return cls(x=x, x_prev=x.copy(), g_prev=zeros, m=zeros.copy(), nfe=nfe)

    def reset_level(self) -> "SamplerState":
        """Clear momentum and beta when the chain moves to a new target."""
        zeros = np.zeros_like(self.x)
        return replace(self, x_prev=self.x.copy(), g_prev=zeros, m=zeros.copy(), beta=0.0, t=0, alpha=0.0)


@dataclass
class Diagnostics:
    """
    Per-corrector-step traces collected during a run.

    For batched runs each recorded beta, step and score norm is an array with
    one entry per chain.
    """
    beta_trace: List = field(default_factory=list)
    step_trace: List = field(default_factory=list)
    score_norm_trace: List = field(default_factory=list)
    level_trace: List[int] = field(default_factory=list)
    inner_trace: List[int] = field(default_factory=list)
    nfe: int = 0

    def record(self, level: int, inner: int, beta, step, score: np.ndarray):
        self.level_trace.append(level)
        self.inner_trace.append(inner)
        self.beta_trace.append(per_chain(beta))
        self.step_trace.append(per_chain(step))
        self.score_norm_trace.append(_norms(score))

    def __len__(self):
        return len(self.beta_trace)

    def chain_major(self, chains: int) -> Dict[str, np.ndarray]:
        """
        Flatten the traces to one row per (chain, step): every step of the
        first chain, then every step of the next.
        """
        steps = len(self)

        def spread(trace):
            if steps == 0:
                return np.zeros(0)
            values = np.asarray(trace, dtype=float).reshape(steps, -1)
            return np.broadcast_to(values, (steps, chains)).T.reshape(-1)

        return {
            "chain": np.repeat(np.arange(chains), steps),
            "level": np.tile(np.asarray(self.level_trace, dtype=int), chains),
            "inner_step": np.tile(np.asarray(self.inner_trace, dtype=int), chains),
            "beta": spread(self.beta_trace),
            "alpha_tilde": spread(self.step_trace),
            "score_norm": spread(self.score_norm_trace),
        }


@dataclass(frozen=True)
class PredictorLevel:
    """Level parameters for one predictor step, consumed from sigma_hi down to sigma_lo."""
    sigma_hi: float
    sigma_lo: float

    @property
    def vp_beta(self) -> float:
        return vp_transition_beta(self.sigma_hi, self.sigma_lo)


ScoreFn = Callable[[np.ndarray, float], np.ndarray]


def _level_score(model, variant: str) -> ScoreFn:
    """Score at a VE noise scale, mapped to the VP marginal when needed."""
    if variant == "VE":
        return lambda x, sigma: model.score(x, sigma)

    def vp_score(x, sigma):
        alpha_bar = vp_alpha_bar(sigma)
        return model.score(x, math.sqrt(1.0 - alpha_bar), math.sqrt(alpha_bar))
    return vp_score


def langevin_step(x: np.ndarray, score: np.ndarray, alpha: float, noise: np.ndarray) -> np.ndarray:
    """x + alpha * score + sqrt(2 alpha) * noise"""
    if not alpha > 0:
        raise SamplerValidationError("alpha", f"must be positive, got {alpha}")
    return x + alpha * score + math.sqrt(2 * alpha) * noise


def tweedie_denoise(x: np.ndarray, score_at_sigma_n: np.ndarray, sigma_n: float, scale: float = 1.0) -> np.ndarray:
    """
    Expected denoised sample (x + sigma^2 * score) / scale.

    scale is 1 for VE chains and sqrt(alpha_bar_n) for VP chains.
    """
    if not sigma_n > 0:
        raise SamplerValidationError("sigma_n", f"must be positive, got {sigma_n}")
    denoised = x + sigma_n ** 2 * score_at_sigma_n
    return denoised if scale == 1.0 else denoised / scale


def beta_update(
    alpha: float,
    x: np.ndarray,
    x_prev: np.ndarray,
    g: np.ndarray,
    g_prev: np.ndarray,
    delta: float,
    t: int,
    beta_prev=0.0
):
    """
    Adaptive momentum coefficient from successive score and position differences.

    r = alpha |g - g_prev| / |x - x_prev|, beta = Proj_[0, 1-delta]((1-r)/(1+r))^2.
    Returns 0 for t <= 1 and beta_prev for every chain whose position did not move.
    On a batch the norms are taken per row and one beta is returned per chain.
    """
    x = np.asarray(x, dtype=float)
    if t <= 1:
        return per_chain(np.zeros(x.shape[:-1]))
    dx = np.linalg.norm(x - x_prev, axis=-1)
    moved = dx > 0
    r = np.asarray(alpha, dtype=float) * np.linalg.norm(g - g_prev, axis=-1) / np.where(moved, dx, 1.0)
    fraction = (1.0 - r) / (1.0 + r)
    beta = np.clip(fraction, 0.0, 1.0 - delta) ** 2
    return per_chain(np.where(moved, beta, beta_prev))


def momentum_update(m: np.ndarray, score: np.ndarray, beta) -> np.ndarray:
    beta = _rows(beta)
    return beta * m + (1 - beta) * score


def nshb_step(
    state: SamplerState,
    score: np.ndarray,
    alpha,
    alpha_tilde,
    beta,
    noise: np.ndarray
) -> SamplerState:
    """
    One normalized heavy-ball sampling update.

    m <- beta m + (1 - beta) s;  x <- x + alpha_tilde m + sqrt(2 alpha) noise.
    The old position and score are kept for the next beta_update. alpha,
    alpha_tilde and beta may carry one value per chain.
    """
    if not np.all(np.asarray(alpha) > 0):
        raise SamplerValidationError("alpha", f"must be positive, got {np.min(alpha)}")
    m = momentum_update(state.m, score, beta)
    x = state.x + _rows(alpha_tilde) * m + np.sqrt(2 * _rows(alpha)) * noise
    return replace(
        state, x=x, x_prev=state.x, g_prev=score, m=m,
        beta=per_chain(beta), t=state.t + 1, alpha=per_chain(alpha)
    )


def als_sample(
    model,
    schedule: NoiseSchedule,
    init: np.ndarray,
    rng: RandomStream,
    denoise: bool = False
) -> Tuple[np.ndarray, Diagnostics]:
    """Annealed Langevin sampling over the schedule's noise ladder."""
    diagnostics = Diagnostics()
    x = np.array(init, dtype=float)

    for i, sigma in enumerate(schedule.sigmas, start=1):
        alpha = als_step_size(schedule, i)
        for k in range(schedule.n_sigma):
            noise = rng.standard_normal(x.shape)
            score = model.score(x, sigma)
            diagnostics.nfe += 1
            x = langevin_step(x, score, alpha, noise)
            diagnostics.record(i, k, 0.0, alpha, score)
        logger.debug("ALS level %d/%d sigma=%.4g alpha=%.4g", i, schedule.n, sigma, alpha)

    if denoise:
        x = tweedie_denoise(x, model.score(x, schedule.sigma_n), schedule.sigma_n)
        diagnostics.nfe += 1
    return x, diagnostics


def ams_sample(
    model,
    schedule: NoiseSchedule,
    init: np.ndarray,
    rng: RandomStream,
    denoise: bool = False,
    alpha_tilde_mode: str = "per_step"
) -> Tuple[np.ndarray, Diagnostics]:
    """
    Adaptive momentum sampling.

    Per level the base step is the annealed alpha_i; every inner step draws
    noise, evaluates the score, updates beta and applies nshb_step with
    alpha_tilde = alpha_i (1 + beta)^2. Momentum and beta restart at each level.
    With alpha_tilde_mode="per_level" alpha_tilde is fixed at the level start.
    """
    if alpha_tilde_mode not in ALPHA_TILDE_MODES:
        raise SamplerValidationError("alpha_tilde_mode", f"must be one of {ALPHA_TILDE_MODES}")
    diagnostics = Diagnostics()
    state = SamplerState.start(init)

    for i, sigma in enumerate(schedule.sigmas, start=1):
        alpha = als_step_size(schedule, i)
        state = state.reset_level()
        level_alpha_tilde = momentum_step_size(alpha, state.beta)
        for k in range(schedule.n_sigma):
            noise = rng.standard_normal(state.x.shape)
            score = model.score(state.x, sigma)
            beta = beta_update(
                alpha, state.x, state.x_prev, score, state.g_prev,
                schedule.delta, state.t, state.beta
            )
            if alpha_tilde_mode == "per_step":
                alpha_tilde = momentum_step_size(alpha, beta)
            else:
                alpha_tilde = level_alpha_tilde
            state = nshb_step(state, score, alpha, alpha_tilde, beta, noise)
            diagnostics.nfe += 1
            diagnostics.record(i, k, beta, alpha_tilde, score)
        logger.debug("AMS level %d/%d sigma=%.4g mean beta=%.4g", i, schedule.n, sigma, float(np.mean(state.beta)))

    x = state.x
    if denoise:
        x = tweedie_denoise(x, model.score(x, schedule.sigma_n), schedule.sigma_n)
        diagnostics.nfe += 1
    return x, diagnostics


def _predict_rd_ve(x, score, level: PredictorLevel, noise):
    gap = level.sigma_hi ** 2 - level.sigma_lo ** 2
    return x + gap * score + math.sqrt(gap) * noise


def _predict_em_ve(x, score, level: PredictorLevel, noise):
    g2dt = em_ve_variance(level.sigma_hi, level.sigma_lo)
    return x + g2dt * score + math.sqrt(g2dt) * noise


def _predict_rd_vp(x, score, level: PredictorLevel, noise):
    beta = level.vp_beta
    return (2 - math.sqrt(1 - beta)) * x + beta * score + math.sqrt(beta) * noise


def _predict_em_vp(x, score, level: PredictorLevel, noise):
    # ancestral form of the VP reverse kernel x_i = sqrt(1 - b) x_{i-1} + sqrt(b) eps
    beta = level.vp_beta
    return (x + beta * score) / math.sqrt(1 - beta) + math.sqrt(beta) * noise


_PREDICTOR_UPDATES: Dict[str, Callable] = {
    "RD-VE": _predict_rd_ve,
    "EM-VE": _predict_em_ve,
    "RD-VP": _predict_rd_vp,
    "EM-VP": _predict_em_vp,
}


def predictor_step(
    kind: str,
    x: np.ndarray,
    score: np.ndarray,
    level: PredictorLevel,
    noise: np.ndarray
) -> np.ndarray:
    """
    One reverse-diffusion or Euler-Maruyama predictor step from sigma_hi to sigma_lo.

    Args:
        kind: One of EM-VE, RD-VE, RD-VP, EM-VP
        x: Current sample
        score: Score evaluated at sigma_hi
        level: The pair of noise scales being crossed
        noise: Standard normal draw

    Returns:
        Updated sample
    """
    if kind not in _PREDICTOR_UPDATES:
        raise SamplerValidationError("predictor", f"must be one of {PREDICTORS}, got {kind!r}")
    if not (level.sigma_hi >= level.sigma_lo > 0):
        raise SamplerValidationError(
            "sigmas", f"predictor needs sigma_hi >= sigma_lo > 0, got ({level.sigma_hi}, {level.sigma_lo})"
        )
    if kind.endswith("VP") and not 0 <= level.vp_beta < 1:
        raise SamplerValidationError("beta", f"VP coefficient must lie in [0, 1), got {level.vp_beta}")
    return _PREDICTOR_UPDATES[kind](x, score, level, noise)


def _draw_noise(rng: RandomStream, shape) -> Tuple[np.ndarray, Union[float, np.ndarray]]:
    """Standard normal draw; a row with an exactly zero norm is redrawn once."""
    z = rng.standard_normal(shape)
    z_norm = np.linalg.norm(z, axis=-1)
    degenerate = np.flatnonzero(np.atleast_1d(z_norm) == 0.0)
    if degenerate.size:
        logger.warning("Degenerate noise draw with zero norm in %d chain(s); redrawing once", degenerate.size)
        if isinstance(rng, ChainStreams):
            z = rng.redraw(z, degenerate)
        else:
            z = rng.standard_normal(shape)
        z_norm = np.linalg.norm(z, axis=-1)
        if np.any(z_norm == 0.0):
            raise NumericalFailure("two consecutive noise draws had zero norm")
    return z, per_chain(z_norm)


def corrector_step(
    kind: str,
    state: SamplerState,
    model,
    sigma: float,
    epsilon: float,
    delta: float,
    variant: str,
    rng: RandomStream,
    epsilon0: Optional[float] = None,
    snr_ratio: str = "score_over_noise"
) -> SamplerState:
    """
    One momentum (MC) or Langevin (LC) corrector step at noise scale sigma.

    Draw z, evaluate the score, update beta and the momentum, take the
    signal-to-noise step from |m| and |z|, then apply nshb_step. LC is the
    same update with beta pinned to 0. When the step collapses because the
    momentum is zero, the previous step of the level is reused, or 2 (eps sigma)^2
    on the first step.
    """
    if kind not in CORRECTORS:
        raise SamplerValidationError("corrector", f"must be one of {CORRECTORS}, got {kind!r}")
    if variant not in VARIANTS:
        raise SamplerValidationError("variant", f"must be one of {VARIANTS}, got {variant!r}")
    if kind == "LC":
        delta = 1.0

    z, z_norm = _draw_noise(rng, state.x.shape)
    score = _level_score(model, variant)(state.x, sigma)
    state = replace(state, nfe=state.nfe + 1)

    beta = beta_update(
        state.alpha, state.x, state.x_prev, score, state.g_prev, delta, state.t, state.beta
    )
    m_norm = _norms(momentum_update(state.m, score, beta))
    alpha = np.asarray(snr_step_size(epsilon, beta, m_norm, z_norm, variant, epsilon0, snr_ratio))
    previous = np.asarray(state.alpha, dtype=float)
    fallback = np.where(previous > 0, previous, 2 * (epsilon * sigma) ** 2)
    alpha = per_chain(np.where(alpha > 0, alpha, fallback))
    alpha_tilde = momentum_step_size(alpha, beta)
    return nshb_step(state, score, alpha, alpha_tilde, beta, z)


def pc_sample(
    predictor: Optional[str],
    corrector: Optional[str],
    model,
    schedule: NoiseSchedule,
    init: np.ndarray,
    rng: RandomStream,
    denoise: bool = False,
    variant: str = "VE",
    epsilon0: Optional[float] = None,
    snr_ratio: str = "score_over_noise"
) -> Tuple[np.ndarray, Diagnostics]:
    """
    Predictor-corrector sampling.

    Per level: one predictor step from the previous noise scale (the first
    level starts from itself) followed by n_sigma corrector steps at the
    level's own scale. Either half may be None; NFE is n (1 + n_sigma) for the
    full composition, n for predictor-only and n * n_sigma for corrector-only.

    Args:
        predictor: "EM" or "RD" (the variant is appended) or a full kind such as "RD-VE"
        corrector: "MC", "LC" or None
        model: Target with a score(x, sigma, scale) method
        schedule: Noise ladder and corrector hyperparameters
        init: Initial sample
        rng: Random stream for this chain
        denoise: Apply the final Tweedie step
        variant: "VE" or "VP"
        epsilon0: VP outer step coefficient (defaults to epsilon)
        snr_ratio: Orientation of the signal-to-noise step

    Returns:
        Final sample and per-corrector-step diagnostics
    """
    if variant not in VARIANTS:
        raise SamplerValidationError("variant", f"must be one of {VARIANTS}, got {variant!r}")
    if predictor is None and corrector is None:
        raise SamplerValidationError("sampler", "at least one of predictor or corrector is required")
    if predictor is not None and "-" not in predictor:
        predictor = f"{predictor}-{variant}"
    if predictor is not None and (predictor not in PREDICTORS or not predictor.endswith(variant)):
        raise SamplerValidationError("predictor", f"{predictor!r} is not a {variant} predictor")
    if corrector is not None and corrector not in CORRECTORS:
        raise SamplerValidationError("corrector", f"must be one of {CORRECTORS} or None, got {corrector!r}")

    score_at = _level_score(model, variant)
    diagnostics = Diagnostics()
    state = SamplerState.start(init)

    for i, (sigma_hi, sigma_lo) in enumerate(level_pairs(schedule), start=1):
        if predictor is not None:
            noise = rng.standard_normal(state.x.shape)
            score = score_at(state.x, sigma_hi)
            x = predictor_step(predictor, state.x, score, PredictorLevel(sigma_hi, sigma_lo), noise)
            state = replace(state, x=x, nfe=state.nfe + 1)
            if not np.all(np.isfinite(x)):
                raise NumericalFailure(f"predictor diverged at level {i} (sigma={sigma_lo:.4g})")

        if corrector is not None:
            state = state.reset_level()
            for k in range(schedule.n_sigma):
                state = corrector_step(
                    corrector, state, model, sigma_lo, schedule.epsilon, schedule.delta,
                    variant, rng, epsilon0=epsilon0, snr_ratio=snr_ratio
                )
                diagnostics.record(i, k, state.beta, momentum_step_size(state.alpha, state.beta), state.g_prev)
            if not np.all(np.isfinite(state.x)):
                raise NumericalFailure(f"corrector diverged at level {i} (sigma={sigma_lo:.4g})")

    diagnostics.nfe = state.nfe
    x = state.x
    if denoise:
        sigma_n = schedule.sigma_n
        score = score_at(x, sigma_n)
        if variant == "VE":
            x = tweedie_denoise(x, score, sigma_n)
        else:
            alpha_bar = vp_alpha_bar(sigma_n)
            x = tweedie_denoise(x, score, math.sqrt(1 - alpha_bar), math.sqrt(alpha_bar))
        diagnostics.nfe += 1
    return x, diagnostics
