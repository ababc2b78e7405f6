import filecmp

import numpy as np
import pytest

from sscalib import fileio, toy_models
from sscalib.inference import CalibrationProblem, read_samples
from sscalib.observation import log_likelihood_full
from sscalib.toy_models import (
    DiscreteSweepTarget,
    LinearGaussianSSM,
    dense_posterior_lg,
    exact_posterior_lg,
    generate_synthetic,
    stationary_vector,
    sweep_matrix,
)


def test_kalman_matches_dense_conditioning():
    ssm = LinearGaussianSSM(T=5, a=0.7, q=0.8, r=0.3, mu=0.2, m0=1.0)
    _, y = ssm.sample(np.random.default_rng(1))
    mean, var = exact_posterior_lg(ssm, y)
    dmean, dcov = dense_posterior_lg(ssm, y)
    np.testing.assert_allclose(mean, dmean, atol=1e-8)
    np.testing.assert_allclose(var, np.diag(dcov), atol=1e-8)


def test_kalman_with_missing_years():
    ssm = LinearGaussianSSM(T=6, a=-0.4, q=1.3, r=0.7)
    _, y = ssm.sample(np.random.default_rng(2))
    y[[1, 4]] = np.nan
    mean, var = exact_posterior_lg(ssm, y)
    dmean, dcov = dense_posterior_lg(ssm, y)
    np.testing.assert_allclose(mean, dmean, atol=1e-8)
    np.testing.assert_allclose(var, np.diag(dcov), atol=1e-8)


def test_zero_noise_reproduces_states():
    ssm = LinearGaussianSSM(T=4, a=0.5, q=1.0, r=0.0, m0=0.3)
    phi = np.array([0.4, -0.2, 1.0, 0.1])
    y = ssm.states(phi)
    mean, var = exact_posterior_lg(ssm, y)
    np.testing.assert_allclose(mean, phi, atol=1e-12)
    np.testing.assert_allclose(var, 0.0, atol=1e-12)


def test_no_observations_gives_prior():
    ssm = LinearGaussianSSM(T=3, mu=0.4, q=2.0)
    mean, var = exact_posterior_lg(ssm, np.full(3, np.nan))
    np.testing.assert_allclose(mean, 0.4)
    np.testing.assert_allclose(var, 2.0)


def test_sweep_target_composition_stationary():
    target = DiscreteSweepTarget()
    P, mats = sweep_matrix(target)
    pi = target.stationary()
    assert len(pi) == 162
    for M in mats:
        assert np.abs(M.sum(axis=1) - 1).max() < 1e-12
        assert np.abs(pi @ M - pi).max() < 1e-10
    assert np.abs(stationary_vector(P) - pi).max() < 1e-10
    # every step moves somewhere, so the check is not vacuous
    for M in mats:
        assert np.trace(M) < M.shape[0] - 1


def test_noise_free_generation_equals_model_catches(toy3):
    from sscalib.inference import simulate

    obs = generate_synthetic(toy3.model, toy3.layout, toy3.truth, 0, noise_free=True)
    _, (c, s) = simulate(toy3.model, toy3.layout, toy3.truth)
    np.testing.assert_array_equal(obs.w, c)
    np.testing.assert_array_equal(obs.z[obs.z_mask], s[obs.z_mask])


def test_generation_is_seeded(toy3):
    a = generate_synthetic(toy3.model, toy3.layout, toy3.truth, 5, toy3.first_survey)
    b = generate_synthetic(toy3.model, toy3.layout, toy3.truth, 5, toy3.first_survey)
    c = generate_synthetic(toy3.model, toy3.layout, toy3.truth, 6, toy3.first_survey)
    assert a.w.tobytes() == b.w.tobytes()
    assert a.w.tobytes() != c.w.tobytes()


@pytest.mark.slow
def test_truth_beats_prior_draws(toy3):
    """Data generated at the truth: the truth has the higher likelihood than
    a random prior draw in >= 95 of 100 paired comparisons."""
    problem = CalibrationProblem(toy3.model, toy3.observations,
                                 toy3.run_config.prior_spec())
    pr = problem.prior
    L = toy3.layout
    rng = np.random.default_rng(8)
    ll_truth = problem.evaluate(toy3.truth).loglik
    wins = 0
    for _ in range(100):
        x = toy3.truth.copy()
        x[0] = rng.uniform(*pr.ln_kappa)
        x[L.ln_rmax] = rng.uniform(*pr.ln_rmax, L.n_species)
        x[L.phi0] = rng.uniform(*pr.phi0, L.n_species)
        x[L.phi] = rng.uniform(*pr.phi, L.n_years * L.n_species)
        try:
            ll = problem.evaluate(x).loglik
        except Exception:  # a failed simulation counts as a win for the truth
            ll = -np.inf
        wins += ll_truth > ll
    assert wins >= 95


def test_truth_is_inside_prior_support(toy3):
    problem = CalibrationProblem(toy3.model, toy3.observations, toy3.run_config.prior_spec())
    assert np.isfinite(problem.log_prior(toy3.truth))
    c17 = toy_models.load_shipped("celtic17")
    p17 = CalibrationProblem(c17.model, c17.observations, c17.run_config.prior_spec())
    assert np.isfinite(p17.log_prior(c17.truth))


@pytest.mark.parametrize("name", ["toy3", "celtic17"])
def test_shipped_data_regenerates_identically(tmp_path, name):
    defn = {"toy3": toy_models.THREE_SPECIES, "celtic17": toy_models.CELTIC_17}[name]
    toy_models.write_definition(defn, tmp_path)
    shipped = toy_models.data_dir(name)
    for f in ("species.csv", "selectivity.csv", "survey_effort.csv", "config.yaml",
              "truth.csv", "observations.csv"):
        assert filecmp.cmp(tmp_path / f, shipped / f, shallow=False), f


def test_shipped_observations_match_generator(toy3):
    """The shipped file parses to 3 x 10 matrices equal to a fresh
    generate_synthetic call with the seed recorded in its manifest."""
    import json

    d = toy_models.data_dir("toy3")
    manifest = json.loads((d / "manifest.json").read_text())
    obs = fileio.load_observations(d / "observations.csv", toy3.model.names,
                                   toy3.run_config.years.years,
                                   toy3.run_config.years.first_survey)
    assert obs.w.shape == (10, 3)
    assert obs.w_mask.all()
    assert not obs.z_mask[:3].any() and obs.z_mask[3:].all()
    fresh = generate_synthetic(toy3.model, toy3.layout, toy3.truth, manifest["seed"],
                               toy3.first_survey)
    np.testing.assert_allclose(obs.w, fresh.w, rtol=1e-15)
    np.testing.assert_allclose(obs.z[obs.z_mask], fresh.z[fresh.z_mask], rtol=1e-15)
    assert manifest["files"]["observations"]["sha256"]
    names, _rows = read_samples(d / "truth.csv")
    assert names == toy3.layout.names()


def test_celtic17_layout(toy3):
    c17 = toy_models.load_shipped("celtic17")
    L = c17.layout
    assert L.n_species == 17 and L.n_years == 24
    assert L.size == 1 + 17 + 17 + 408 + 17 + 17
    assert L.fixed_c.sum() == 2
    x = c17.truth
    np.testing.assert_array_equal(x[L.sigma2_c][L.fixed_c], [4.0, 4.0])
    assert not c17.observations.w_mask[:, L.fixed_c].any()


def test_log_likelihood_of_shipped_truth_is_finite(toy3):
    from sscalib.inference import simulate

    _, catches = simulate(toy3.model, toy3.layout, toy3.truth)
    var = toy3.layout.from_vector(toy3.truth).variances
    assert np.isfinite(log_likelihood_full(catches, toy3.observations, var))
