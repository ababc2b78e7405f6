import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sscalib.diagnostics import (
    ess,
    lag_autocorrelation,
    parameter_table,
    quantiles,
    residual_report,
    summarize,
    whiteness,
)
from sscalib.errors import ValidationError
from sscalib.observation import ObservationSet


def test_quantiles_of_one_to_hundred():
    # linear rule: position p (n - 1) in the sorted sample
    p10, med, p90 = quantiles(np.arange(1, 101))
    assert med == pytest.approx(50.5, abs=1e-12)
    assert p10 == pytest.approx(10.9, abs=1e-12)
    assert p90 == pytest.approx(90.1, abs=1e-12)


def test_identical_samples_are_degenerate():
    s = summarize(np.full((50, 2), 3.25), ["a", "b"])
    assert np.all(s.p10 == s.median) and np.all(s.median == s.p90)
    assert np.all(np.isnan(s.ess))
    table = parameter_table(np.full((50, 1), 1.0), ["a"])
    assert table["a"]["degenerate"] and table["a"]["ess"] is None


def test_ess_of_independent_draws():
    rng = np.random.default_rng(0)
    n = 4000
    for _ in range(5):
        assert abs(ess(rng.standard_normal(n)) / n - 1) < 0.1


def test_ess_of_ar1_matches_closed_form():
    rng = np.random.default_rng(1)
    rho, n = 0.8, 100_000
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    for t in range(1, n):
        x[t] = rho * x[t - 1] + np.sqrt(1 - rho**2) * e[t]
    want = n * (1 - rho) / (1 + rho)
    assert ess(x) == pytest.approx(want, rel=0.1)


def test_summarize_needs_two_samples():
    with pytest.raises(ValidationError):
        summarize(np.ones((1, 3)), ["a", "b", "c"])


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(float, st.tuples(st.integers(2, 40), st.integers(1, 4)),
                  elements=st.floats(-1e6, 1e6)),
       st.randoms(use_true_random=False))
def test_quantiles_monotone_and_order_invariant(samples, rnd):
    names = [f"p{j}" for j in range(samples.shape[1])]
    a = summarize(samples, names)
    assert np.all(a.p10 <= a.median) and np.all(a.median <= a.p90)
    perm = list(range(samples.shape[0]))
    rnd.shuffle(perm)
    b = summarize(samples[perm], names)
    np.testing.assert_array_equal(a.p10, b.p10)
    np.testing.assert_array_equal(a.median, b.median)
    np.testing.assert_array_equal(a.p90, b.p90)


def test_trajectory_quantiles_monotone(toy3_problem, toy3):
    rng = np.random.default_rng(2)
    base = toy3.truth
    samples = np.array([base * (1 + 0.002 * rng.standard_normal(base.size)) for _ in range(6)])
    samples[:, toy3.layout.phi] = np.clip(samples[:, toy3.layout.phi], 0, 1.5)
    s = summarize(samples, toy3.layout.names(), toy3_problem, max_trajectories=4)
    assert len(s.trajectories) == 3 * 10 * 3
    for lo, mid, hi in s.trajectories.values():
        assert lo <= mid <= hi


def _obs(w, z, wm=None, zm=None):
    w, z = np.asarray(w, float), np.asarray(z, float)
    T, S = w.shape
    wm = np.ones((T, S), bool) if wm is None else wm
    zm = np.ones((T, S), bool) if zm is None else zm
    return ObservationSet(w, z, wm, zm, tuple(range(2000, 2000 + T)),
                          tuple(f"s{i}" for i in range(S)))


def test_perfect_fit_has_zero_residuals():
    rng = np.random.default_rng(3)
    c = rng.uniform(1, 10, (6, 2))
    s = rng.uniform(1, 10, (6, 2))
    rep = residual_report(_obs(c, s), (c, s), np.ones(2), np.full(2, 0.3))
    assert len(rep.rows) == 24
    assert all(r[3] == 0.0 for r in rep.rows)


def test_single_observation_autocorrelation_missing(tmp_path):
    w = np.ones((3, 2))
    wm = np.array([[True, True], [False, True], [False, False]])
    zm = np.zeros((3, 2), bool)
    rep = residual_report(_obs(w, w, wm, zm), (w, w), np.ones(2), np.ones(2))
    auto = {(r[0], r[1]): r for r in rep.autocorrelation}
    assert auto[("s0", "commercial")][2] == 1
    assert np.isnan(auto[("s0", "commercial")][3])
    assert auto[("s0", "commercial")][4] is None
    paths = rep.write(tmp_path)
    with open(paths["autocorrelation"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    row = next(r for r in rows if r["species"] == "s0" and r["channel"] == "commercial")
    assert row["flag"] == "missing" and row["lag1"] != "0"


def test_white_residuals_rarely_flagged():
    """Null replicates: per-series flag rate at most 5%."""
    rng = np.random.default_rng(4)
    flags = []
    for n in (10, 24):
        for _ in range(1000):
            r = rng.standard_normal((n, 1))
            flags.append(whiteness(r, ["a"], "commercial")[0][4])
    assert np.mean(flags) <= 0.05


def test_strongly_autocorrelated_residuals_flagged():
    r = np.sin(np.linspace(0, 2, 24))[:, None]
    assert whiteness(r, ["a"], "survey")[0][4] is True


def test_lag_autocorrelation_constant_is_nan():
    assert np.isnan(lag_autocorrelation(np.ones(5)))
    assert lag_autocorrelation([1.0, -1.0, 1.0, -1.0]) == pytest.approx(-0.75)
