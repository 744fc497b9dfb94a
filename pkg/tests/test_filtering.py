import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from supportsafe.errors import AllZeroWeightsError, InvalidCertificateError
from supportsafe.filtering import (DefensiveConfig, DefensiveDraw, GaussianObservation, ParticleEnsemble,
                                   ProposalFamily, TransitionLaw, certificate_rho, defensive_log_density, ess,
                                   filter_step, log_gaussian_moments_closed_form, log_gaussian_moments_quadrature,
                                   matrix_kernel, one_step_weights, predictive_moments, resample,
                                   sample_defensive, select_lambda, systematic_resample, theory_bounds)
from supportsafe.toys import DiscreteToy, GaussianToy, HMMToy


# ---------------------------------------------------------------- lambda rule

def test_select_lambda_examples():
    d = select_lambda(1.0, 100, 0.1, 0.5)
    assert d.certified and d.lam == pytest.approx(0.5) and d.lambda_min == pytest.approx(0.5)
    d = select_lambda(10.0, 10, 0.1, 0.5)
    assert not d.certified and d.lam == 0.5 and d.lambda_min == pytest.approx(10 / 1.1)
    d = select_lambda(2.5, 299, 0.1, 0.5)
    assert d.certified and d.lam == pytest.approx(2.5 / 3.99)
    assert d.lam == pytest.approx(0.62656641604, abs=1e-10)


def test_select_lambda_rejects_impossible_certificate():
    with pytest.raises(InvalidCertificateError) as info:
        select_lambda(0.9, 100, 0.1, 0.5)
    assert info.value.code == "INVALID_CERT"
    with pytest.raises(InvalidCertificateError):
        select_lambda(float("nan"), 100, 0.1, 0.5)


def test_theory_bounds_examples():
    b = theory_bounds(1.0, 1.0, 10)
    assert b["chi2_bound"] == 0.0 and b["ess_floor"] == 1.0
    assert theory_bounds(2.0, 0.5, 100)["rel_var_bound"] == pytest.approx(0.03)


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 50.0), st.floats(0.01, 0.9), st.integers(1, 10_000))
def test_rel_var_bound_strictly_decreasing(rho, lam, n):
    b = theory_bounds(rho, lam, n)["rel_var_bound"]
    if rho / lam - 1 > 0:
        assert theory_bounds(rho, min(1.0, lam * 1.1), n)["rel_var_bound"] < b
        assert theory_bounds(rho, lam, n + 1)["rel_var_bound"] < b


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 100.0), st.integers(1, 5000), st.floats(0.01, 2.0), st.floats(0.05, 1.0))
def test_certified_lambda_meets_budget(rho_bar, n, tau, fb):
    d = select_lambda(rho_bar, n, tau, fb)
    if d.certified:
        assert theory_bounds(rho_bar, d.lam, n)["rel_var_bound"] <= tau**2 * (1 + 1e-9)
    else:
        assert d.lam == fb and d.lambda_min > 1


# ---------------------------------------------------------------- mixture density

def test_defensive_density_identity_and_ratio_bound():
    q, p = stats.norm(0, 1), stats.norm(3, 1)
    x = np.linspace(-10, 15, 2001)
    np.testing.assert_array_equal(defensive_log_density(x, q, p, 1.0), p.logpdf(x))
    ratio = np.exp(p.logpdf(x) - defensive_log_density(x, q, p, 0.5))
    assert ratio.max() <= 2.0 * (1 + 1e-12)


def test_defensive_density_integrates_to_one():
    q, p = stats.norm(0, 1), stats.norm(3, 1)
    x = np.linspace(-15, 20, 200_001)
    for lam in (0.1, 0.5, 0.9):
        assert abs(np.trapezoid(np.exp(defensive_log_density(x, q, p, lam)), x) - 1.0) < 1e-6


def test_sample_defensive_lambda_one_matches_carrier(rng):
    q, p = stats.norm(0, 1), stats.norm(3, 1)
    draw = sample_defensive(q, p, 1.0, 10_000, rng)
    direct = p.rvs(size=10_000, random_state=np.random.default_rng(1))
    assert stats.ks_2samp(draw.samples, direct).pvalue > 0.01
    assert draw.lam == 1.0 and draw.from_carrier.all()


def test_sample_defensive_component_frequency(rng):
    toy = DiscreteToy()
    n, lam = 20_000, 0.3
    draw = sample_defensive(toy.sampler("q"), toy.sampler("p"), lam, n, rng)
    se = math.sqrt(lam * (1 - lam) / n)
    assert abs(draw.from_carrier.mean() - lam) <= 3 * se
    assert np.all(draw.samples[~draw.from_carrier] != 2)


def test_sample_defensive_rejects_bad_lambda(rng):
    with pytest.raises(ValueError):
        sample_defensive(stats.norm(), stats.norm(), 1.5, 10, rng)


# ---------------------------------------------------------------- weights

def _draw(n, lam=0.5):
    return DefensiveDraw(np.zeros(n), lam, np.zeros(n, dtype=bool))


def test_equal_weights_have_full_ess():
    res = one_step_weights(_draw(10), np.full(10, -1.0), np.zeros(10), np.zeros(10))
    assert res.ess_over_n == pytest.approx(1.0)
    assert res.rel_weight_var == pytest.approx(0.0, abs=1e-24)


def test_single_nonzero_weight():
    lg = np.full(8, -np.inf)
    lg[3] = 0.0
    res = one_step_weights(_draw(8), lg, np.zeros(8), np.zeros(8))
    assert res.ess_over_n == pytest.approx(1 / 8)


def test_all_zero_weights_raise():
    with pytest.raises(AllZeroWeightsError) as info:
        one_step_weights(_draw(5), np.full(5, -np.inf), np.zeros(5), np.zeros(5))
    assert info.value.code == "ALL_ZERO_WEIGHTS"


def test_ess_formula():
    assert ess([1, 1, 1, 1]) == 4.0
    assert ess([2, 0, 0]) == 1.0
    assert ess([0, 0]) == 0.0
    assert ess([1, 3]) == pytest.approx(16 / 10)


def test_same_lambda_contract_is_structural():
    # the weighting step reads lambda from the draw; it cannot be passed separately
    assert "lam" not in inspect.signature(one_step_weights).parameters


def test_discrete_toy_unbiased(rng):
    toy = DiscreteToy()
    _, _, g = toy.arrays()
    lp, lq = toy.log_density("p"), toy.log_density("q")
    z = []
    for _ in range(10_000):
        draw = sample_defensive(toy.sampler("q"), toy.sampler("p"), 0.3, 20, rng)
        x = draw.samples
        z.append(one_step_weights(draw, np.log(g[x]), lp(x), lq(x)).zhat)
    z = np.asarray(z)
    assert abs(z.mean() - toy.Z) <= 4 * z.std(ddof=1) / math.sqrt(len(z))


def test_rn_ratio_bound_on_draws(rng):
    toy = GaussianToy()
    for lam in (0.1, 0.5):
        draw = sample_defensive(toy.q, toy.p, lam, 100_000, rng)
        res = one_step_weights(draw, toy.log_g(draw.samples), toy.p.logpdf(draw.samples),
                               toy.q.logpdf(draw.samples))
        assert res.max_ratio <= (1 / lam) * (1 + 1e-10)


def test_chi2_quadrature_below_theory():
    toy = GaussianToy()
    assert toy.rho_quadrature() == pytest.approx(toy.rho, rel=1e-8)
    for lam in (0.1, 0.3, 0.5, 1.0):
        assert toy.chi2(lam) <= theory_bounds(toy.rho, lam, 1)["chi2_bound"] + 1e-10


# ---------------------------------------------------------------- resampling

def test_uniform_weights_each_particle_once(rng):
    idx = systematic_resample(np.full(7, 1 / 7), rng)
    assert sorted(idx) == list(range(7))


def test_point_mass_resampling(rng):
    idx = systematic_resample(np.eye(6)[0], rng)
    assert np.all(idx == 0)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8).filter(lambda w: sum(w) > 1e-6),
       st.integers(0, 2**32 - 1))
def test_systematic_offspring_counts(w, seed):
    w = np.asarray(w) / np.sum(w)
    n = len(w)
    counts = np.bincount(systematic_resample(w, np.random.default_rng(seed)), minlength=n)
    assert counts.sum() == n
    assert np.all(counts >= np.floor(n * w - 1e-9)) and np.all(counts <= np.ceil(n * w + 1e-9))


def test_resample_resets_weights(rng):
    ens = ParticleEnsemble.initial(np.zeros(5, int), np.arange(5.0)[:, None])
    ens.log_weights = np.log(np.array([0.7, 0.1, 0.1, 0.05, 0.05]))
    resample(ens, rng)
    np.testing.assert_allclose(ens.weights, 0.2)


# ---------------------------------------------------------------- filter step

def _gauss_law(a=0.9, q=0.2):
    return TransitionLaw(matrix_kernel([[1.0]]), lambda m, z, u: a * z, np.full((1, 1, 1), q))


def test_missing_observation_with_carrier_proposal(rng):
    law = _gauss_law()
    om = GaussianObservation(np.eye(1), np.array([[0.1]]))
    cfg = DefensiveConfig(n_particles=50, lambda_policy="fixed", lambda_fixed=0.3,
                          proposal=ProposalFamily(pull=0.0, mode_update=False))
    ens = ParticleEnsemble.initial(np.zeros(50, int), rng.normal(size=(50, 1)))
    ens, diag = filter_step(ens, None, None, cfg, law, om, rng)
    np.testing.assert_allclose(ens.weights, 1 / 50)
    assert diag.ess_over_n == pytest.approx(1.0) and not diag.resampled
    assert diag.zhat == pytest.approx(1.0)


def test_one_step_marginal_likelihood_matches_kalman():
    a, q, r, m0, p0, o = 0.9, 0.2, 0.1, 0.3, 0.5, 1.1
    law = _gauss_law(a, q)
    om = GaussianObservation(np.eye(1), np.array([[r]]))
    Z = stats.norm.pdf(o, a * m0, math.sqrt(a * a * p0 + q + r))
    cfg = DefensiveConfig(n_particles=40, tau=0.3, lambda_fb=0.5, proposal=ProposalFamily(pull=1.0, sharpen=0.7))
    rng = np.random.default_rng(3)
    z = []
    for _ in range(2000):
        ens = ParticleEnsemble.initial(np.zeros(40, int), m0 + math.sqrt(p0) * rng.standard_normal((40, 1)))
        _, diag = filter_step(ens, None, [o], cfg, law, om, rng)
        z.append(diag.zhat)
    z = np.asarray(z)
    assert abs(z.mean() - Z) <= 4 * z.std(ddof=1) / math.sqrt(len(z))


def _branch_run(lam, obs, toy, n=2000, seed=0):
    cfg = DefensiveConfig(n_particles=n, lambda_policy="fixed", lambda_fixed=lam,
                          proposal=ProposalFamily(pull=1.0, dropout=(0.0, 1.0), dropout_observed=True))
    ens = ParticleEnsemble.initial(np.zeros(n, int), np.zeros((n, 1)))
    rng = np.random.default_rng(seed)
    for t in range(len(obs)):
        filter_step(ens, None, obs[t], cfg, toy.law(), toy.obs_model(), rng)
    return np.array([p[1] for p in ens.posteriors])


def test_deleted_branch_lost_without_defensive_mass():
    toy = HMMToy(levels=(0.0, 3.0), sigma=0.5, stay=0.95)
    obs = np.array([[0.1], [-0.2], [0.05], [3.1], [2.9], [3.0], [3.2]])
    exact = toy.forward(obs, prior=[1.0, 0.0])[:, 1]
    assert exact[3:].min() > 0.99
    lost = _branch_run(0.0, obs, toy)
    assert np.all(lost == 0.0)
    kept = _branch_run(0.1, obs, toy)
    np.testing.assert_allclose(kept, exact, atol=1e-3)


def test_certificate_quadrature_matches_closed_form(rng):
    K = 6
    w = rng.dirichlet(np.ones(K))
    for r in (1, 2):
        means = rng.normal(size=(K, r))
        covs = np.stack([np.eye(r) * s for s in rng.uniform(0.2, 1.0, K)])
        R = 0.3 * np.eye(r)
        o = rng.normal(size=r)
        a = log_gaussian_moments_closed_form(w, means, covs, o, R)
        b = log_gaussian_moments_quadrature(w, means, covs, o, R)
        # the quadrature error in log rho must sit well inside the 5% inflation
        assert abs((a[1] - 2 * a[0]) - (b[1] - 2 * b[0])) < 0.1 * math.log(1.05)
        np.testing.assert_allclose(a, b, rtol=1e-3)


def test_certificate_matches_gaussian_toy():
    toy = GaussianToy()
    law = TransitionLaw(matrix_kernel([[1.0]]), lambda m, z, u: np.zeros_like(z), np.ones((1, 1, 1)))
    om = GaussianObservation(np.eye(1), np.array([[toy.sg**2]]))
    carrier = law.carrier(np.zeros(3, int), np.zeros((3, 1)), None)
    rho_bar = certificate_rho(carrier, np.full(3, 1 / 3), om, np.array([toy.o]))
    assert rho_bar == pytest.approx(1.05 * toy.rho, rel=1e-8)
    assert certificate_rho(carrier, np.full(3, 1 / 3), om, None) == pytest.approx(1.05)


def test_predictive_moments_single_gaussian():
    law = _gauss_law(0.5, 0.2)
    om = GaussianObservation(np.eye(1), np.array([[0.1]]))
    ens = ParticleEnsemble.initial(np.zeros(2, int), np.array([[1.0], [3.0]]))
    mean, cov = predictive_moments(ens, law, None, om)
    assert mean[0] == pytest.approx(1.0)
    assert cov[0, 0] == pytest.approx(0.25 + 0.2 + 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        DefensiveConfig(n_particles=1)
    with pytest.raises(ValueError):
        DefensiveConfig(lambda_policy="adaptive")
    with pytest.raises(ValueError):
        matrix_kernel([[0.5, 0.4]])
