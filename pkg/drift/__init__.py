# drift/__init__.py
"""
Drift - adaptive-momentum sampling toolkit

The experiment harness sits on top of the config package and is imported
from drift.orchestrator directly.
"""
__version__ = "0.1.0"

from .errors import DriftError, NumericalFailure, SamplerValidationError
from .schedules import (
    NoiseSchedule,
    als_step_size,
    em_ve_variance,
    geometric_schedule,
    momentum_step_size,
    snr_step_size,
    vp_alpha_bar,
    vp_transition_beta,
)
from .score_models import (
    GaussianMixture,
    NonQuadraticPotential,
    QuadraticPotential,
    load_model,
    perturbed_log_density,
    perturbed_score,
    potential_gradient,
    sample_mixture,
)
from .samplers import (
    ChainStreams,
    Diagnostics,
    SamplerState,
    als_sample,
    ams_sample,
    beta_update,
    corrector_step,
    langevin_step,
    nshb_step,
    pc_sample,
    predictor_step,
    tweedie_denoise,
)
from .markov_analysis import (
    TransitionMatrix,
    bias_scaling_experiment,
    build_transition,
    contraction_estimate,
    markov_check,
    random_spd,
    rate_bound,
    spectral_radius,
    squared_distance_decay,
    stationary_covariance,
)
from .metrics import PointCloud, evaluate_cloud, exact_w2, gaussian_w2, moments, rbf_mmd, sliced_w2

__all__ = [
    'DriftError',
    'NumericalFailure',
    'SamplerValidationError',
    'NoiseSchedule',
    'als_step_size',
    'em_ve_variance',
    'geometric_schedule',
    'momentum_step_size',
    'snr_step_size',
    'vp_alpha_bar',
    'vp_transition_beta',
    'GaussianMixture',
    'NonQuadraticPotential',
    'QuadraticPotential',
    'load_model',
    'perturbed_log_density',
    'perturbed_score',
    'potential_gradient',
    'sample_mixture',
    'ChainStreams',
    'Diagnostics',
    'SamplerState',
    'als_sample',
    'ams_sample',
    'beta_update',
    'corrector_step',
    'langevin_step',
    'nshb_step',
    'pc_sample',
    'predictor_step',
    'tweedie_denoise',
    'TransitionMatrix',
    'bias_scaling_experiment',
    'build_transition',
    'contraction_estimate',
    'markov_check',
    'random_spd',
    'rate_bound',
    'spectral_radius',
    'squared_distance_decay',
    'stationary_covariance',
    'PointCloud',
    'evaluate_cloud',
    'exact_w2',
    'gaussian_w2',
    'moments',
    'rbf_mmd',
    'sliced_w2',
]
