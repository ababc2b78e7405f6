import math
from concurrent.futures import ThreadPoolExecutor

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sscalib import samplers
from sscalib.diagnostics import ess
from sscalib.samplers import (
    CachedTarget,
    RandomWalk,
    calderhead_step,
    calderhead_transition,
    gibbs_variance_update,
    log1mexp,
    mda_step,
    mda_transition,
    mh_step,
    mh_transition,
    pda_prefetch,
    pda_step,
    pda_transition,
)
from sscalib.toy_models import (
    DiscreteRandomWalk,
    GaussianTarget,
    LGStateSpaceTarget,
    LinearGaussianSSM,
    enumerate_kernel,
    five_state_target,
    product_target,
    stationary_vector,
)
from sscalib.validation import exact_surrogate_mda, exact_surrogate_pda


class Recorder:
    """``decide`` callback that records every log-acceptance it is asked
    about and answers from a fixed script (then from ``rng``)."""

    def __init__(self, script=(), rng=None):
        self.script = list(script)
        self.rng = rng
        self.seen = []

    def __call__(self, log_alpha):
        self.seen.append(log_alpha)
        if self.script:
            return self.script.pop(0)
        return bool(log_alpha >= 0 or math.log(self.rng.random()) < log_alpha)


def _mcse_z(draws, truth):
    return (draws.mean() - truth) / (draws.std(ddof=1) / math.sqrt(ess(draws)))


# -- helpers and proposals ---------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.floats(-700, -1e-300))
def test_log1mexp_matches_high_precision(a):
    with mpmath.workdps(50):
        x = mpmath.mpf(a)
        # each form is exact to 50 digits on its own half of the range
        want = float(mpmath.log(-mpmath.expm1(x)) if a > -1 else mpmath.log1p(-mpmath.exp(x)))
    assert log1mexp(a) == pytest.approx(want, rel=1e-12, abs=1e-300)


def test_log1mexp_ends():
    assert log1mexp(0.0) == -np.inf
    assert log1mexp(-np.inf) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(0.01, 20))
def test_reflection_stays_in_bounds(y, scale):
    rw = RandomWalk(scale, 0.0, 1.5)
    r = rw.reflect(np.array([y]))[0]
    assert 0.0 <= r <= 1.5


def test_reflected_density_integrates_to_one():
    from scipy import integrate

    rw = RandomWalk(0.8, 0.0, 1.5)
    total, _ = integrate.quad(lambda y: math.exp(rw.log_density(np.array([y]),
                                                                np.array([0.3]))), 0.0, 1.5)
    assert total == pytest.approx(1.0, abs=1e-8)
    # symmetric kernel
    a = rw.log_density(np.array([1.2]), np.array([0.3]))
    b = rw.log_density(np.array([0.3]), np.array([1.2]))
    assert a == pytest.approx(b, abs=1e-12)


# -- MH ----------------------------------------------------------------------

def test_mh_degenerate_proposal_accepts():
    t = GaussianTarget([0.0], [[1.0]])
    x = np.array([0.4])
    d = Recorder([True])
    out = mh_transition(x, x.copy(), t, RandomWalk(1.0), d)
    assert d.seen == [0.0] and out.accepted


def test_mh_rejects_outside_support():
    t = GaussianTarget([0.0], [[1.0]], lower=-1.0, upper=1.0)
    d = Recorder(rng=np.random.default_rng(0))
    out = mh_transition(np.array([0.0]), np.array([2.0]), t, RandomWalk(1.0), d)
    assert d.seen == [-np.inf]
    assert np.array_equal(out.point, [0.0])


def test_mh_standard_normal_mean(rng):
    t = GaussianTarget([0.0], [[1.0]])
    prop = RandomWalk(2.38)
    x = np.zeros(1)
    cur = t.evaluate(x)
    draws = np.empty(50000)
    for i in range(draws.size):
        o = mh_step(x, t, prop, rng, cur)
        x, cur = o.point, o.evaluation
        draws[i] = x[0]
    assert abs(_mcse_z(draws, 0.0)) < 3


# -- MDA ---------------------------------------------------------------------

def test_mda_exact_surrogate_never_rejects_after_inner_accept():
    bad, inner = exact_surrogate_mda(10000, seed=3)
    assert inner > 1000
    assert bad == 0


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_mda_n1_outer_is_one_when_inner_accepts(x0, y0):
    """Randomised check of the algebraic cancellation for N=1."""
    t = GaussianTarget([0.3], [[0.7]])
    d = Recorder([True, True])
    mda_transition(np.array([x0]), [np.array([y0])], t, [np.array([0])], [RandomWalk(1.0)], d)
    assert d.seen[-1] == 0.0


def test_mda_all_inner_rejected_outer_prob_one():
    t = GaussianTarget([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], blocks=[[0], [1]])
    d = Recorder([False, False])
    x = np.array([0.1, -0.2])
    out = mda_transition(x, [np.array([1.0]), np.array([2.0])], t,
                         [np.array([0]), np.array([1])], [RandomWalk(1.0)] * 2, d)
    assert out.accepted and out.log_alpha == 0.0
    assert np.array_equal(out.point, x)


def test_mda_invalid_proposals_never_enter_composite():
    t = GaussianTarget([0.0, 0.0], np.eye(2), blocks=[[0], [1]], lower=-1.0, upper=1.0)
    d = Recorder([True, True, True])
    x = np.array([0.0, 0.0])
    out = mda_transition(x, [np.array([5.0]), np.array([0.5])], t,
                         [np.array([0]), np.array([1])], [RandomWalk(1.0)] * 2, d)
    assert d.seen[0] == -np.inf
    assert out.point[0] == 0.0


def test_mda_stage1_performs_n_concurrent_evaluations():
    n_blocks = 5
    t = GaussianTarget(np.zeros(n_blocks), np.eye(n_blocks) + 0.2,
                       blocks=[[i] for i in range(n_blocks)])
    x = np.zeros(n_blocks)
    cur = t.evaluate(x)
    runs_at_first_decision = []

    def decide(la):
        if not runs_at_first_decision:
            runs_at_first_decision.append(t.n_runs)
        return True

    t.n_runs = 0
    proposed = [np.array([0.1 * (i + 1)]) for i in range(n_blocks)]
    mda_transition(x, proposed, t, [np.array([i]) for i in range(n_blocks)],
                   [RandomWalk(1.0)] * n_blocks, decide, current=cur)
    assert runs_at_first_decision == [n_blocks]


def test_mda_run_counts():
    """Exact mode: N stage-1 runs, then the composite and one cross point per
    block (at most 2N + 1). Separable mode: N + 1."""
    n_blocks = 4
    base = GaussianTarget(np.zeros(n_blocks), np.eye(n_blocks),
                          blocks=[[i] for i in range(n_blocks)])
    x = np.zeros(n_blocks)
    proposed = [np.array([0.2])] * n_blocks
    blocks = [np.array([i]) for i in range(n_blocks)]
    for separable, expected in ((False, 2 * n_blocks + 1), (True, n_blocks + 1)):
        t = CachedTarget(base)
        cur = t.evaluate(x)
        t.n_runs = 0
        out = mda_transition(x, proposed, t, blocks, [RandomWalk(1.0)] * n_blocks,
                             Recorder([True] * n_blocks + [True]), current=cur,
                             separable=separable)
        assert out.n_runs == expected


def test_mda_2d_gaussian_covariance(rng):
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    t = GaussianTarget([1.0, -1.0], cov, blocks=[[0], [1]])
    blocks = [np.array([0]), np.array([1])]
    props = [RandomWalk(1.5), RandomWalk(2.0)]
    x = np.array([1.0, -1.0])
    cur = t.evaluate(x)
    n = 50000
    draws = np.empty((n, 2))
    for i in range(n):
        o = mda_step(x, t, blocks, props, rng, cur)
        x, cur = o.point, o.evaluation
        draws[i] = x
    err = np.linalg.norm(np.cov(draws.T) - cov) / np.linalg.norm(cov)
    assert err < 0.05


def test_mda_executor_gives_same_chain():
    t = GaussianTarget([0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]], blocks=[[0], [1]])
    blocks = [np.array([0]), np.array([1])]
    props = [RandomWalk(1.0)] * 2
    outs = []
    for ex in (None, ThreadPoolExecutor(2)):
        rng = np.random.default_rng(8)
        x = np.zeros(2)
        cur = t.evaluate(x)
        for _ in range(200):
            o = mda_step(x, t, blocks, props, rng, cur, executor=ex)
            x, cur = o.point, o.evaluation
        outs.append(x)
        if ex is not None:
            ex.shutdown()
    assert np.array_equal(outs[0], outs[1])


# -- PDA ---------------------------------------------------------------------

def _lg_target(T=6, seed=2):
    ssm = LinearGaussianSSM(T=T)
    _, y = ssm.sample(np.random.default_rng(seed))
    return LGStateSpaceTarget(ssm, y)


def test_pda_degenerate_proposal_keeps_current():
    t = _lg_target()
    rates = np.linspace(-1, 1, 6).reshape(6, 1)
    d = Recorder()
    out = pda_transition(rates, rates.copy(), t, RandomWalk(1.0), d)
    assert d.seen == []
    assert out.accepted and out.log_alpha == 0.0
    assert np.array_equal(out.point, rates)


def test_pda_exact_surrogate_t1():
    bad, inner = exact_surrogate_pda(10000, seed=4)
    assert inner > 1000
    assert bad == 0


def test_pda_trajectory_pattern():
    """All-years mode: four single-year advances per year (two tracks, each
    at the proposed and the current rate), then one full evaluation."""
    T = 7
    t = _lg_target(T)
    rates = np.zeros((T, 1))
    cur = t.evaluate(rates)
    t.n_runs = t.n_advance = 0
    out = pda_transition(rates, np.full((T, 1), 0.3), t, RandomWalk(1.0),
                         Recorder([True] * T + [True]), current=cur)
    assert t.n_advance == 4 * T
    assert t.n_runs == 1
    # four whole-horizon trajectory sweeps plus one full evaluation
    assert t.n_advance / T + t.n_runs == 5
    assert out.n_runs == 1


def test_pda_subset_perturbs_only_chosen_years(rng):
    t = _lg_target(8)
    rates = np.zeros((8, 1))
    cur = t.evaluate(rates)
    t.n_advance = 0
    pda_step(rates, t, RandomWalk(1.0), rng, cur, subset=2)
    assert t.n_advance == 4 * 2 + 2 * 6


def test_pda_lg_means(rng):
    from sscalib.validation import mc_z_scores, pda_lg_chain

    draws, mean, _ = pda_lg_chain(20000, seed=11)
    assert np.all(np.abs(mc_z_scores(draws, mean)) < 4)


def test_prefetch_is_deterministic_and_executor_independent():
    t = _lg_target(5)
    prop = RandomWalk(0.7)
    results = []
    for ex in (None, ThreadPoolExecutor(3)):
        rng = np.random.default_rng(21)
        x = np.zeros((5, 1))
        cur = t.evaluate(x)
        for _ in range(20):
            o = pda_prefetch(x, t, prop, rng, 8, width=4, current=cur, executor=ex)
            x, cur = o.point, o.evaluation
            assert len(o.info["transitions"]) == 8
        results.append(x)
        if ex is not None:
            ex.shutdown()
    assert np.array_equal(results[0], results[1])


def test_prefetch_matches_enumerated_power():
    """On a finite target, the prefetch of n transitions samples from P^n."""
    from sscalib.toy_models import DiscreteSweepTarget

    target = DiscreteSweepTarget()
    prop = DiscreteRandomWalk({-1: 0.5, 1: 0.3, 2: 0.2})
    P = enumerate_kernel(target, "pda", proposal=prop)
    P3 = np.linalg.matrix_power(P, 3)
    x0 = target.states()[40].copy()
    rng = np.random.default_rng(5)
    n = 4000
    counts = np.zeros(len(target.states()))
    view = target.pda_view(x0)
    rates0 = x0[target.rate_index]
    for _ in range(n):
        o = pda_prefetch(rates0, view, prop, rng, 3, width=2)
        y = x0.copy()
        y[target.rate_index] = o.point
        counts[target.index(y)] += 1
    expected = P3[target.index(x0)] * n
    keep = expected > 5
    chi2 = np.sum((counts[keep] - expected[keep]) ** 2 / expected[keep])
    from scipy import stats

    assert stats.chi2.sf(chi2, keep.sum() - 1) > 1e-3
    assert counts[~keep].sum() <= max(20, 3 * expected[~keep].sum() + 10)


# -- multiple proposals ------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4))
def test_calderhead_k1_equals_mh(x0, y0):
    t = GaussianTarget([0.5], [[0.8]])
    prop = RandomWalk(1.3)
    row, _, _ = calderhead_transition(np.array([x0]), [np.array([y0])], t, prop)
    d = Recorder([True])
    mh_transition(np.array([x0]), np.array([y0]), t, prop, d)
    assert row[1] == pytest.approx(math.exp(d.seen[0]), rel=1e-9, abs=1e-300)


def test_calderhead_identical_proposals_stay(rng):
    t = GaussianTarget([0.0], [[1.0]])
    x = np.array([0.3])
    row, points, _ = calderhead_transition(x, [x.copy()] * 4, t, RandomWalk(1.0))
    j = rng.choice(row.size, p=row)
    assert np.array_equal(points[j], x)


def _calderhead_chain(k, n, seed, scale=3.0):
    t = GaussianTarget([0.0], [[1.0]])
    prop = RandomWalk(scale)
    rng = np.random.default_rng(seed)
    x = np.zeros(1)
    cur = t.evaluate(x)
    draws = np.empty(n)
    moves = 0
    for i in range(n):
        o = calderhead_step(x, t, prop, rng, k, cur)
        moves += o.moved
        x, cur = o.point, o.evaluation
        draws[i] = x[0]
    return draws, moves / n


def test_calderhead_k8_mean_and_move_rate():
    draws8, rate8 = _calderhead_chain(8, 50000, 1)
    _, rate1 = _calderhead_chain(1, 50000, 2)
    assert abs(_mcse_z(draws8, 0.0)) < 3
    assert rate8 > rate1


# -- Gibbs -------------------------------------------------------------------

def test_gibbs_no_data_draws_prior(rng):
    draws = np.array([gibbs_variance_update([0.0], [0], 3.0, 2.0, [False], [1.0], rng)[0]
                      for _ in range(40000)])
    assert draws.mean() == pytest.approx(1.0, rel=0.02)  # b / (a - 1)


def test_gibbs_conjugate_mean(rng):
    draws = np.array([gibbs_variance_update([10.0], [10], 2.0, 2.0, [False], [1.0], rng)[0]
                      for _ in range(100000)])
    assert abs(draws.mean() - 7 / 6) / (7 / 6) < 0.01


def test_gibbs_frozen_bitwise(rng):
    cur = np.array([4.0, 0.123456789012345, 4.0])
    out = gibbs_variance_update([1.0, 2.0, 3.0], [5, 5, 5], 0.1, 0.1,
                                [True, False, True], cur, rng)
    assert out[0].tobytes() == cur[0].tobytes()
    assert out[2].tobytes() == cur[2].tobytes()
    assert out[1] != cur[1]


# -- enumeration -------------------------------------------------------------

def test_enumerated_rows_sum_to_one():
    t = five_state_target()
    rw = DiscreteRandomWalk({-1: 0.5, 1: 0.3, 2: 0.2}, modulus=5)
    for kernel, kw in (("mh", {"proposal": rw}),
                       ("mda", {"blocks": [np.array([0])], "proposals": [rw]}),
                       ("calderhead", {"proposal": rw, "n_proposals": 2})):
        P = enumerate_kernel(t, kernel, **kw)
        assert np.abs(P.sum(axis=1) - 1).max() < 1e-12


def test_symmetric_mh_on_uniform_is_doubly_stochastic():
    from sscalib.toy_models import DiscreteTarget

    t = DiscreteTarget(np.zeros(5), np.zeros(5))
    rw = DiscreteRandomWalk({-1: 0.5, 1: 0.5}, modulus=5)
    P = enumerate_kernel(t, "mh", proposal=rw)
    assert np.abs(P.sum(axis=0) - 1).max() < 1e-12
    assert np.abs(P.sum(axis=1) - 1).max() < 1e-12


def test_mda_five_state_stationary():
    t = five_state_target()
    rw = DiscreteRandomWalk({-1: 0.5, 1: 0.3, 2: 0.2}, modulus=5)
    P = enumerate_kernel(t, "mda", blocks=[np.array([0])], proposals=[rw])
    assert np.abs(stationary_vector(P) - t.stationary()).max() < 1e-10


def test_mda_two_blocks_stationary_on_nonseparable_target():
    t = product_target()
    rw = DiscreteRandomWalk({-1: 0.5, 1: 0.3, 2: 0.2})
    P = enumerate_kernel(t, "mda", blocks=[np.array([0]), np.array([1])], proposals=[rw, rw])
    pi = t.stationary()
    assert np.abs(pi @ P - pi).max() < 1e-10


def test_enumerate_branches_probabilities_sum_to_one():
    from sscalib.toy_models import enumerate_branches

    def run(decide):
        return (decide(math.log(0.3)), decide(math.log(0.6)), decide(0.0))

    res = enumerate_branches(run)
    assert sum(p for p, _ in res) == pytest.approx(1.0, abs=1e-15)
    assert len(res) == 4
    assert {o: p for p, o in res}[(True, False, True)] == pytest.approx(0.3 * 0.4)


def test_unknown_kernel_rejected():
    with pytest.raises(ValueError):
        enumerate_kernel(five_state_target(), "nope")


def test_rng_decider_consumes_one_uniform():
    a = np.random.default_rng(1)
    b = np.random.default_rng(1)
    d = samplers.rng_decider(a)
    d(0.0)
    d(-1.0)
    b.random(2)
    assert a.random() == b.random()
