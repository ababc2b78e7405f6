import copy
import json
import math

import numpy as np
import pytest

from sscalib import samplers, toy_models
from sscalib.errors import ValidationError
from sscalib.fileio import HistoryMatchConfig
from sscalib.inference import (
    INNER_BAND,
    OUTER_BAND,
    CalibrationProblem,
    ProposalSpec,
    RatesTarget,
    Sampler,
    SweepPlan,
    adjust_scale,
    history_match,
    implausibility,
    read_samples,
    reduced_to_full,
    run_fit,
    tune_scale,
    write_samples,
)


def small_config(cfg, iterations=4, burn_in=1, **sampler):
    cfg = copy.deepcopy(cfg)
    cfg.run.iterations = iterations
    cfg.run.burn_in = burn_in
    cfg.run.checkpoint_every = 2
    cfg.history_match = HistoryMatchConfig(waves=1, points_per_wave=10)
    cfg.sampler.pilot_iterations = 0
    cfg.sampler.pda_transitions = 2
    cfg.sampler.prefetch_width = 2
    cfg.sampler.calderhead_proposals = 2
    for k, v in sampler.items():
        setattr(cfg.sampler, k, v)
    return cfg


# -- problem -----------------------------------------------------------------

def test_problem_caches_trajectories(toy3_problem, toy3):
    p = toy3_problem
    a = p.evaluate(toy3.truth)
    runs = p.n_runs
    b = p.evaluate(toy3.truth.copy())
    assert p.n_runs == runs
    assert a.loglik == b.loglik
    assert a.loglik == pytest.approx(a.parts.sum(), abs=1e-10)


def test_year_terms_from_advancing_match_full_loglik(toy3_problem, toy3):
    view = RatesTarget(toy3_problem, toy3.truth)
    rates = toy3.layout.phi_matrix(toy3.truth)
    state = view.initial_state()
    total = 0.0
    for t in range(rates.shape[0]):
        state = view.advance(state, t, rates[t])
        total += view.log_surrogate(state, t)
    assert total == pytest.approx(view.evaluate(rates).loglik, abs=1e-9)


def test_log_prior_rejects_changed_frozen_variance():
    shipped = toy_models.load_shipped("celtic17")
    p = CalibrationProblem(shipped.model, shipped.observations)
    x = shipped.truth.copy()
    assert np.isfinite(p.log_prior(x))
    k = shipped.layout.sigma2_c.start + int(np.flatnonzero(shipped.layout.fixed_c)[0])
    x[k] = 3.9
    assert p.log_prior(x) == -np.inf


# -- history matching --------------------------------------------------------

def test_truth_survives_with_noise_free_data(toy3):
    obs = toy_models.generate_synthetic(toy3.model, toy3.layout, toy3.truth, seed=0,
                                        first_survey=toy3.first_survey, noise_free=True)
    p = CalibrationProblem(toy3.model, obs, toy3.run_config.prior_spec())
    hm = history_match(p, HistoryMatchConfig(waves=2, points_per_wave=10), np.random.default_rng(1),
                       extra_points=[toy3.truth])
    assert hm.implausibility[0] == 0.0
    assert np.array_equal(hm.points[0], toy3.truth)


def test_infinite_threshold_keeps_everything(toy3_problem):
    hm = history_match(toy3_problem, HistoryMatchConfig(waves=2, points_per_wave=10,
                                                        threshold=math.inf),
                       np.random.default_rng(2))
    assert len(hm.points) == hm.evaluated == 20
    assert len(hm.rejected) == 0


def test_survivors_have_higher_likelihood(toy3_problem):
    hm = history_match(toy3_problem, HistoryMatchConfig(waves=2, points_per_wave=100),
                       np.random.default_rng(3))
    assert len(hm.points) and len(hm.rejected)

    def ll(x):
        return toy3_problem.evaluate(x).loglik

    keep = np.median([ll(x) for x in hm.points])
    drop = np.median([ll(x) for x in hm.rejected])
    assert keep > drop


def test_reduced_points_have_constant_rates(toy3_problem):
    S = 3
    z = np.r_[20.0, np.full(S, 20.0), np.full(S, 0.3), [0.1, 0.2, 0.3]]
    x = reduced_to_full(toy3_problem, z)
    phi = toy3_problem.layout.phi_matrix(x)
    assert np.all(phi == phi[0]) and list(phi[0]) == [0.1, 0.2, 0.3]
    assert math.isfinite(implausibility(toy3_problem, x, np.ones(S), np.ones(S)))


# -- tuning ------------------------------------------------------------------

def test_adjust_scale_rules():
    assert adjust_scale(1.0, 1.0, OUTER_BAND) > 1.0
    assert adjust_scale(1.0, 0.01, OUTER_BAND) < 1.0
    assert adjust_scale(1.0, 0.3, OUTER_BAND) == 1.0
    assert adjust_scale(0.7, 0.3, INNER_BAND) == 0.7


def test_tune_scale_on_gaussian():
    target = toy_models.GaussianTarget([0.0], [[1.0]])
    rng = np.random.default_rng(4)

    def run_block(scale, n):
        prop = samplers.RandomWalk(scale)
        x = np.zeros(1)
        cur = target.evaluate(x)
        acc = 0
        for _ in range(n):
            o = samplers.mh_step(x, target, prop, rng, cur)
            acc += o.moved
            x, cur = o.point, o.evaluation
        return acc / n

    scale, rate = tune_scale(run_block, 0.1, OUTER_BAND, 2000)
    assert OUTER_BAND[0] <= rate <= OUTER_BAND[1]
    confirm = run_block(scale, 20000)
    assert OUTER_BAND[0] <= confirm <= OUTER_BAND[1]


# -- sweeps ------------------------------------------------------------------

def test_sweep_respects_supports(toy3_problem, toy3):
    plan = SweepPlan(iterations=3, burn_in=0, pda_transitions=2, prefetch_width=2,
                     calderhead_proposals=2)
    s = Sampler(toy3_problem, plan, ProposalSpec.default(3))
    rng = np.random.default_rng(5)
    x = toy3.truth.copy()
    ev = toy3_problem.evaluate(x)
    for _ in range(3):
        x, ev, flags = s.sweep(x, ev, rng)
        assert np.isfinite(toy3_problem.log_prior(x))
        assert set(flags) >= {"mda", "pda", "calderhead", "gibbs", "order"}
    assert ev.loglik == pytest.approx(toy3_problem.evaluate(x).loglik)


def test_random_order_is_a_permutation(toy3_problem, toy3):
    plan = SweepPlan(iterations=1, burn_in=0, pda_transitions=1, prefetch_width=1,
                     calderhead_proposals=1, random_order=True)
    s = Sampler(toy3_problem, plan, ProposalSpec.default(3))
    _, _, flags = s.sweep(toy3.truth, toy3_problem.evaluate(toy3.truth),
                          np.random.default_rng(6))
    assert sorted(flags["order"]) == sorted(["mda", "pda", "calderhead", "gibbs"])


def test_plan_validation():
    with pytest.raises(ValidationError):
        SweepPlan(iterations=5, burn_in=6)
    with pytest.raises(ValidationError):
        SweepPlan(calderhead_proposals=0)


# -- fits --------------------------------------------------------------------

def test_iterations_equal_burn_in_gives_empty_samples(tmp_path, toy3_problem, toy3):
    cfg = small_config(toy3.run_config, iterations=2, burn_in=2)
    run_fit(toy3_problem, cfg, 1, tmp_path)
    names, rows = read_samples(tmp_path / "samples.csv")
    assert rows.shape[0] == 0 and names[-1] == "log_post"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_samples"] == 0 and "parameters" not in summary
    assert summary["acceptance"]["sweeps"] == 2
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["config_sha256"] == cfg.digest()


def test_fit_is_deterministic(tmp_path, toy3):
    cfg = small_config(toy3.run_config)
    outs = []
    for name in ("a", "b"):
        p = CalibrationProblem(toy3.model, toy3.observations, cfg.prior_spec())
        run_fit(p, cfg, 7, tmp_path / name)
        outs.append((tmp_path / name / "samples.csv").read_bytes())
    assert outs[0] == outs[1]
    _names, rows = read_samples(tmp_path / "a" / "samples.csv")
    assert rows.shape == (3, toy3.layout.size + 1)


def test_resume_matches_uninterrupted(tmp_path, toy3):
    cfg = small_config(toy3.run_config, iterations=5, burn_in=1)
    p = CalibrationProblem(toy3.model, toy3.observations, cfg.prior_spec())
    run_fit(p, cfg, 9, tmp_path / "full")
    p = CalibrationProblem(toy3.model, toy3.observations, cfg.prior_spec())
    assert run_fit(p, cfg, 9, tmp_path / "split", stop_after=3) is None
    p = CalibrationProblem(toy3.model, toy3.observations, cfg.prior_spec())
    run_fit(p, cfg, 9, tmp_path / "split", resume=True)
    assert ((tmp_path / "full" / "samples.csv").read_bytes()
            == (tmp_path / "split" / "samples.csv").read_bytes())


def test_resume_rejects_other_seed(tmp_path, toy3):
    cfg = small_config(toy3.run_config, iterations=3, burn_in=0)
    p = CalibrationProblem(toy3.model, toy3.observations, cfg.prior_spec())
    run_fit(p, cfg, 1, tmp_path, stop_after=1)
    with pytest.raises(ValidationError):
        run_fit(p, cfg, 2, tmp_path, resume=True)


def test_sample_file_round_trip(tmp_path):
    rows = [[0.1, 1e-300, 123456.789], [np.pi, -0.0, 2.0 / 3.0]]
    write_samples(tmp_path / "s.csv", ["a", "b", "c"], rows, [-1.5, 2.25])
    names, back = read_samples(tmp_path / "s.csv")
    assert names == ["a", "b", "c", "log_post"]
    assert back[:, :3].tobytes() == np.array(rows).tobytes()
