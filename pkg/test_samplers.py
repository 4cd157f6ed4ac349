"""Tests for the chain-update rules and sampler loops"""

import math

import numpy as np
import pytest

from drift.errors import SamplerValidationError
from drift.samplers import (
    ChainStreams,
    Diagnostics,
    PredictorLevel,
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
from drift.schedules import NoiseSchedule, geometric_schedule, momentum_step_size, snr_step_size
from drift.score_models import NonQuadraticPotential, load_model


class ZeroScore:
    """Flat target: the score vanishes everywhere."""

    def score(self, x, sigma=0.0, scale=1.0):
        return np.zeros_like(np.asarray(x, dtype=float))


def test_langevin_step():
    x = np.array([1.0, -2.0])
    np.testing.assert_array_equal(langevin_step(x, np.zeros(2), 0.3, np.zeros(2)), x)
    assert langevin_step(np.zeros(2), np.array([1.0, 0.0]), 0.5, np.zeros(2)) == pytest.approx([0.5, 0.0])


def test_langevin_step_on_standard_normal():
    x, noise, alpha = np.array([1.7]), np.array([-0.4]), 0.2
    expected = (1 - alpha) * x + math.sqrt(2 * alpha) * noise
    np.testing.assert_allclose(langevin_step(x, -x, alpha, noise), expected, rtol=1e-15)


def test_beta_update_examples():
    x, x_prev = np.array([1.0]), np.array([0.0])
    g = np.array([0.3])
    assert beta_update(0.5, x, x_prev, g, g, 0.1, t=5) == pytest.approx(0.81)
    # r = 1: alpha |dg| / |dx| = 1
    assert beta_update(1.0, x, x_prev, np.array([-1.0]), np.array([0.0]), 0.1, t=5) == 0.0
    # quadratic a = 1 with alpha = 0.5: r = 0.5, fraction 1/3
    assert beta_update(0.5, x, x_prev, -x, -x_prev, 0.1, t=5) == pytest.approx(1 / 9)


def test_beta_update_guards():
    x = np.array([1.0])
    assert beta_update(0.5, x, np.array([0.0]), x, x, 0.1, t=1) == 0.0
    assert beta_update(0.5, x, x, np.array([2.0]), x, 0.1, t=4, beta_prev=0.3) == 0.3


def test_nshb_step_arithmetic():
    state = SamplerState.start(np.array([1.0]))
    out = nshb_step(state, np.array([-1.0]), 0.1, 0.225, 0.5, np.zeros(1))
    assert out.m == pytest.approx([-0.5])
    assert out.x == pytest.approx([0.8875])
    assert out.x_prev == pytest.approx([1.0])
    assert out.t == 1


def test_nshb_step_reduces_to_langevin():
    state = SamplerState.start(np.array([0.4, -0.2]))
    score, noise = np.array([0.3, 0.1]), np.array([0.05, -1.2])
    out = nshb_step(state, score, 0.2, 0.2, 0.0, noise)
    np.testing.assert_array_equal(out.x, langevin_step(state.x, score, 0.2, noise))

    still = nshb_step(state, np.zeros(2), 0.2, 0.2, 0.0, np.zeros(2))
    np.testing.assert_array_equal(still.x, state.x)


def test_als_single_step_and_nfe():
    model = load_model("gauss1d")
    schedule = NoiseSchedule((0.5,), n_sigma=1, epsilon=0.1)
    init = np.array([1.0])
    x, diagnostics = als_sample(model, schedule, init, np.random.default_rng(3))
    noise = np.random.default_rng(3).standard_normal(1)
    np.testing.assert_array_equal(x, langevin_step(init, model.score(init, 0.5), 0.1, noise))
    assert diagnostics.nfe == 1

    schedule = geometric_schedule(5.0, 0.1, 7, n_sigma=3, epsilon=1e-3)
    _, diagnostics = als_sample(model, schedule, init, np.random.default_rng(0))
    assert diagnostics.nfe == 21
    assert len(diagnostics) == 21


@pytest.mark.parametrize("seed", range(10))
def test_ams_with_unit_delta_is_als(seed):
    rng = np.random.default_rng(100 + seed)
    model = load_model(["gauss1d", "grid25", "swissroll-mixture"][seed % 3])
    n = int(rng.integers(2, 11))
    schedule = geometric_schedule(
        float(rng.uniform(2.0, 10.0)), float(rng.uniform(0.05, 0.5)), n,
        n_sigma=1000 // n, epsilon=float(rng.uniform(1e-5, 5e-5)), delta=1.0
    )
    init = rng.standard_normal(model.dim) * schedule.sigmas[0]

    x_als, d_als = als_sample(model, schedule, init, np.random.default_rng(seed))
    x_ams, d_ams = ams_sample(model, schedule, init, np.random.default_rng(seed))
    np.testing.assert_array_equal(x_als, x_ams)
    assert d_als.step_trace == d_ams.step_trace
    assert set(d_ams.beta_trace) == {0.0}


def test_ams_beta_trace_stays_in_projection_range():
    model = load_model("grid25")
    schedule = geometric_schedule(8.0, 0.1, 10, n_sigma=20, epsilon=2e-5, delta=0.3)
    _, diagnostics = ams_sample(model, schedule, np.array([1.0, -3.0]), np.random.default_rng(5))
    betas = np.array(diagnostics.beta_trace)
    assert betas.min() >= 0.0
    assert betas.max() <= (1 - 0.3) ** 2 + 1e-15
    assert betas.max() > 0.0


def test_ams_rejects_unknown_alpha_tilde_mode():
    with pytest.raises(SamplerValidationError):
        ams_sample(load_model("gauss1d"), NoiseSchedule((1.0,)), np.zeros(1), np.random.default_rng(0),
                   alpha_tilde_mode="never")


def test_momentum_chain_contracts_at_one_third():
    # 1-D quadratic a = 1, alpha = 0.5, no noise: beta settles at 1/9 and
    # the stacked state shrinks by 1/3 per step
    alpha, delta = 0.5, 0.1
    state = SamplerState.start(np.array([1.0]))
    norms = []
    for _ in range(40):
        score = -state.x
        beta = beta_update(alpha, state.x, state.x_prev, score, state.g_prev, delta, state.t, state.beta)
        state = nshb_step(state, score, alpha, momentum_step_size(alpha, beta), beta, np.zeros(1))
        norms.append(math.hypot(state.x[0], state.x_prev[0]))
    assert state.beta == pytest.approx(1 / 9)
    slope = np.polyfit(np.arange(10, 40), np.log(norms[10:40]), 1)[0]
    assert math.exp(slope) == pytest.approx(1 / 3, abs=0.03)


def test_predictor_examples():
    x = np.array([0.7, -0.1])
    noise = np.array([0.3, 0.2])
    np.testing.assert_array_equal(predictor_step("RD-VE", x, np.ones(2), PredictorLevel(0.5, 0.5), noise), x)
    np.testing.assert_array_equal(predictor_step("RD-VP", x, np.ones(2), PredictorLevel(0.5, 0.5), noise), x)

    level = PredictorLevel(math.sqrt(0.75), 0.5)   # sigma gap^2 = 0.5
    out = predictor_step("RD-VE", np.zeros(1), np.ones(1), level, np.zeros(1))
    assert out == pytest.approx([0.5])


def test_em_predictors():
    level = PredictorLevel(2.0, 1.0)
    out = predictor_step("EM-VE", np.zeros(1), np.ones(1), level, np.zeros(1))
    assert out == pytest.approx([8.0 * math.log(2.0)])

    beta = level.vp_beta
    out = predictor_step("EM-VP", np.ones(1), np.zeros(1), level, np.zeros(1))
    assert out == pytest.approx([1.0 / math.sqrt(1.0 - beta)])


def test_predictor_validation():
    with pytest.raises(SamplerValidationError):
        predictor_step("RK4", np.zeros(1), np.zeros(1), PredictorLevel(1.0, 0.5), np.zeros(1))
    with pytest.raises(SamplerValidationError):
        predictor_step("RD-VE", np.zeros(1), np.zeros(1), PredictorLevel(0.5, 1.0), np.zeros(1))


def test_lc_equals_mc_with_unit_delta():
    model = load_model("grid25")
    state_lc = state_mc = SamplerState.start(np.array([0.3, 1.1]))
    rng_lc, rng_mc = np.random.default_rng(11), np.random.default_rng(11)
    for _ in range(6):
        state_lc = corrector_step("LC", state_lc, model, 0.5, 0.05, 0.1, "VE", rng_lc)
        state_mc = corrector_step("MC", state_mc, model, 0.5, 0.05, 1.0, "VE", rng_mc)
        np.testing.assert_array_equal(state_lc.x, state_mc.x)
    assert state_lc.nfe == 6


def test_corrector_with_zero_score_moves_by_noise_only():
    state = SamplerState.start(np.array([0.2, -0.4]))
    epsilon, sigma = 0.1, 0.5
    out = corrector_step("MC", state, ZeroScore(), sigma, epsilon, 0.1, "VE", np.random.default_rng(9))
    z = np.random.default_rng(9).standard_normal(2)
    fallback = 2 * (epsilon * sigma) ** 2
    assert out.alpha == pytest.approx(fallback)
    np.testing.assert_allclose(out.x - state.x, math.sqrt(2 * fallback) * z, rtol=1e-14)


def test_corrector_uses_snr_step_size():
    model = load_model("gauss1d")
    state = SamplerState.start(np.array([2.0]))
    out = corrector_step("MC", state, model, 0.5, 0.2, 0.1, "VE", np.random.default_rng(4))
    z = np.random.default_rng(4).standard_normal(1)
    score = model.score(state.x, 0.5)
    expected = snr_step_size(0.2, 0.0, float(np.linalg.norm(score)), float(np.linalg.norm(z)))
    assert out.alpha == pytest.approx(expected, rel=1e-14)


def test_pc_nfe_accounting():
    model = load_model("gauss1d")
    schedule = geometric_schedule(3.0, 0.05, 50, n_sigma=2, epsilon=0.2)
    init = np.array([0.5])
    # the inverted ratio keeps 1-D corrector steps bounded
    def run(predictor, corrector, **kwargs):
        return pc_sample(predictor, corrector, model, schedule, init, np.random.default_rng(0),
                         snr_ratio="noise_over_score", **kwargs)

    _, diagnostics = run("RD", "MC")
    assert diagnostics.nfe == 150
    _, diagnostics = run("EM", None)
    assert diagnostics.nfe == 50
    _, diagnostics = run(None, "LC")
    assert diagnostics.nfe == 100
    _, diagnostics = run("RD", "MC", denoise=True)
    assert diagnostics.nfe == 151


def test_pc_is_deterministic_per_seed():
    model = load_model("grid25")
    schedule = geometric_schedule(8.0, 0.1, 20, n_sigma=1, epsilon=0.1)
    init = np.array([2.0, 1.0])
    first, _ = pc_sample("RD", "MC", model, schedule, init, np.random.default_rng(21), snr_ratio="noise_over_score")
    second, _ = pc_sample("RD", "MC", model, schedule, init, np.random.default_rng(21), snr_ratio="noise_over_score")
    np.testing.assert_array_equal(first, second)


def test_pc_vp_runs():
    model = load_model("gauss1d")
    schedule = geometric_schedule(3.0, 0.05, 30, n_sigma=1, epsilon=0.05)
    x, diagnostics = pc_sample("RD", "LC", model, schedule, np.array([0.1]), np.random.default_rng(2),
                               variant="VP", denoise=True, snr_ratio="noise_over_score")
    assert np.all(np.isfinite(x))
    assert diagnostics.nfe == 61


def test_pc_validation():
    model = load_model("gauss1d")
    schedule = NoiseSchedule((1.0, 0.5))
    with pytest.raises(SamplerValidationError):
        pc_sample(None, None, model, schedule, np.zeros(1), np.random.default_rng(0))
    with pytest.raises(SamplerValidationError):
        pc_sample("RD-VP", "MC", model, schedule, np.zeros(1), np.random.default_rng(0), variant="VE")


def test_tweedie_denoise():
    x = np.array([2.0])
    np.testing.assert_array_equal(tweedie_denoise(x, np.zeros(1), 0.3), x)
    model = load_model("gauss1d")
    assert tweedie_denoise(x, model.score(x, 1.0), 1.0) == pytest.approx([1.0])
    assert tweedie_denoise(x, model.score(x, 1e-6), 1e-6) == pytest.approx(x, rel=1e-9)


def test_langevin_variance_matches_fixed_point():
    # a single tiny noise level makes the annealed step equal to epsilon on N(0, 1)
    alpha = 0.1
    model = load_model("gauss1d")
    schedule = NoiseSchedule((1e-8,), n_sigma=200, epsilon=alpha)
    rng = np.random.default_rng(31)
    clouds = [als_sample(model, schedule, rng.standard_normal((10_000, 1)), rng)[0] for _ in range(6)]
    assert float(np.var(np.concatenate(clouds))) == pytest.approx(2 / (2 - alpha), rel=0.02)


@pytest.mark.parametrize("beta", [0.0, 0.5])
def test_stationary_score_mean_vanishes(beta):
    potential = NonQuadraticPotential(kappa=1.0, d=1, shift=1.0)
    alpha, replicas, burn_in, steps = 0.1, 64, 1_000, 20_000
    rng = np.random.default_rng(8)
    state = SamplerState.start(np.tile(potential.minimizer(), (replicas, 1)))
    totals = np.zeros((replicas, 1))
    for t in range(burn_in + steps):
        score = -potential.gradient(state.x)
        if t >= burn_in:
            totals += score
        state = nshb_step(state, score, alpha, momentum_step_size(alpha, beta), beta, rng.standard_normal((replicas, 1)))
    means = totals[:, 0] / steps
    standard_error = means.std(ddof=1) / math.sqrt(replicas)
    assert abs(means.mean()) <= 3 * standard_error


def test_chain_streams_draw_each_row_from_its_own_generator():
    streams = ChainStreams([np.random.default_rng(s) for s in (4, 5, 6)])
    draws = streams.standard_normal((3, 2))
    np.testing.assert_array_equal(draws[1], np.random.default_rng(5).standard_normal(2))
    assert len(streams) == 3
    with pytest.raises(SamplerValidationError):
        streams.standard_normal((2, 2))
    with pytest.raises(SamplerValidationError):
        ChainStreams([])


def test_redraw_replaces_only_named_rows():
    streams = ChainStreams([np.random.default_rng(s) for s in (4, 5)])
    z = np.zeros((2, 3))
    out = streams.redraw(z, [1])
    np.testing.assert_array_equal(out[0], np.zeros(3))
    np.testing.assert_array_equal(out[1], np.random.default_rng(5).standard_normal(3))
    np.testing.assert_array_equal(z, np.zeros((2, 3)))


@pytest.mark.parametrize("sampler", ["als", "ams", "pc"])
def test_batched_chains_match_single_chain_runs(sampler):
    model = load_model("grid25")
    schedule = geometric_schedule(8.0, 0.1, 10, n_sigma=5, epsilon=2e-5)
    pc_schedule = geometric_schedule(8.0, 0.1, 10, n_sigma=2, epsilon=0.1)
    run = {
        "als": lambda init, rng: als_sample(model, schedule, init, rng),
        "ams": lambda init, rng: ams_sample(model, schedule, init, rng),
        "pc": lambda init, rng: pc_sample("RD", "MC", model, pc_schedule, init, rng, snr_ratio="noise_over_score"),
    }[sampler]
    seeds = [11, 12, 13]
    init = np.array([[1.0, -3.0], [0.5, 2.0], [-4.0, 4.0]])

    batch, diagnostics = run(init, ChainStreams([np.random.default_rng(s) for s in seeds]))
    norms = np.asarray(diagnostics.score_norm_trace)
    assert batch.shape == (3, 2) and norms.shape[1] == 3

    for k, seed in enumerate(seeds):
        single, single_diagnostics = run(init[k:k + 1], ChainStreams([np.random.default_rng(seed)]))
        np.testing.assert_allclose(batch[k], single[0], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(norms[:, k], np.ravel(single_diagnostics.score_norm_trace), rtol=1e-12, atol=1e-12)

    unbatched, _ = run(init[0], np.random.default_rng(seeds[0]))
    np.testing.assert_allclose(batch[0], unbatched, rtol=1e-12, atol=1e-12)


def test_chain_major_layout():
    diagnostics = Diagnostics()
    diagnostics.record(1, 0, np.array([0.0, 0.2]), 0.5, np.array([[3.0, 4.0], [0.0, 1.0]]))
    diagnostics.record(1, 1, np.array([0.1, 0.3]), 0.25, np.array([[0.0, 2.0], [6.0, 8.0]]))
    table = diagnostics.chain_major(2)
    assert table["chain"].tolist() == [0, 0, 1, 1]
    assert table["inner_step"].tolist() == [0, 1, 0, 1]
    assert table["beta"].tolist() == [0.0, 0.1, 0.2, 0.3]
    assert table["alpha_tilde"].tolist() == [0.5, 0.25, 0.5, 0.25]
    assert table["score_norm"].tolist() == [5.0, 2.0, 1.0, 10.0]
    assert Diagnostics().chain_major(3)["beta"].size == 0
