"""Self-checks of the transition kernels on targets with known answers.

Used by ``sscalib validate-kernels``. Each check returns a
:class:`CheckResult`; none of them touches the size-spectrum model.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import samplers
from .diagnostics import ess
from .toy_models import (
    DiscreteRandomWalk,
    DiscreteSweepTarget,
    GaussianTarget,
    LGStateSpaceTarget,
    LinearGaussianSSM,
    enumerate_kernel,
    exact_posterior_lg,
    five_state_target,
    sweep_matrix,
)

logger = logging.getLogger(__name__)

STATIONARITY_TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def exact_surrogate_mda(n_iter, seed):
    """MDA with one block whose surrogate is the full log-likelihood on a
    1-D Gaussian. Returns the number of outer rejections that follow an
    inner acceptance (it must be zero) and the inner acceptance count."""
    target = GaussianTarget([0.0], [[1.0]])
    prop = samplers.RandomWalk(1.5)
    rng = np.random.default_rng(seed)
    x = np.zeros(1)
    cur = target.evaluate(x)
    blocks = [np.array([0])]
    bad = inner = 0
    for _ in range(n_iter):
        o = samplers.mda_step(x, target, blocks, [prop], rng, cur)
        if o.inner_accepted.any():
            inner += 1
            bad += not o.accepted
        x, cur = o.point, o.evaluation
    return bad, inner


def exact_surrogate_pda(n_iter, seed):
    """PDA with a single year, where the year's surrogate is the whole
    log-likelihood. Same counts as :func:`exact_surrogate_mda`."""
    ssm = LinearGaussianSSM(T=1, a=0.5, q=1.0, r=0.5)
    target = LGStateSpaceTarget(ssm, np.array([0.7]))
    prop = samplers.RandomWalk(1.5)
    rng = np.random.default_rng(seed)
    x = np.zeros((1, 1))
    cur = target.evaluate(x)
    bad = inner = 0
    for _ in range(n_iter):
        o = samplers.pda_step(x, target, prop, rng, cur)
        if o.inner_accepted.any():
            inner += 1
            bad += not o.accepted
        x, cur = o.point, o.evaluation
    return bad, inner


def stationarity_errors(include_sweep=True):
    """Largest ``|pi P - pi|`` for each enumerated kernel."""
    out = {}
    tg = five_state_target()
    pi = tg.stationary()
    rw = DiscreteRandomWalk({-1: 0.5, 1: 0.3, 2: 0.2}, modulus=5)
    for name, kernel, kw in [
            ("mh", "mh", {"proposal": rw}),
            ("mda", "mda", {"blocks": [np.array([0])], "proposals": [rw]}),
            ("calderhead", "calderhead", {"proposal": rw, "n_proposals": 3})]:
        P = enumerate_kernel(tg, kernel, **kw)
        out[name] = float(np.abs(pi @ P - pi).max())
    sw = DiscreteSweepTarget()
    pi = sw.stationary()
    if include_sweep:
        P, mats = sweep_matrix(sw)
        out["pda"] = float(np.abs(pi @ mats[1] - pi).max())
        out["gibbs"] = float(np.abs(pi @ mats[3] - pi).max())
        out["sweep"] = float(np.abs(pi @ P - pi).max())
    else:
        P = enumerate_kernel(sw, "pda", proposal=DiscreteRandomWalk({-1: 0.5, 1: 0.3, 2: 0.2}))
        out["pda"] = float(np.abs(pi @ P - pi).max())
        P = enumerate_kernel(sw, "gibbs", index=sw.variance_index)
        out["gibbs"] = float(np.abs(pi @ P - pi).max())
    return out


def pda_lg_chain(n_draws, seed, T=10, scale=0.5, burn=1000):
    """PDA draws on a linear-Gaussian model with data simulated from it.
    Returns ``(draws, exact_mean, exact_var)``."""
    ssm = LinearGaussianSSM(T=T)
    rng = np.random.default_rng(seed)
    _, y = ssm.sample(rng)
    target = LGStateSpaceTarget(ssm, y)
    mean, var = exact_posterior_lg(ssm, y)
    prop = samplers.RandomWalk(scale)
    x = mean.reshape(T, 1).copy()
    cur = target.evaluate(x)
    out = np.empty((n_draws, T))
    for i in range(burn + n_draws):
        o = samplers.pda_step(x, target, prop, rng, cur)
        x, cur = o.point, o.evaluation
        if i >= burn:
            out[i - burn] = x[:, 0]
    return out, mean, var


def mc_z_scores(draws, mean):
    """``(chain mean - exact) / MCSE`` per column, MCSE from the ESS."""
    sd = draws.std(axis=0, ddof=1)
    n_eff = np.array([ess(draws[:, j]) for j in range(draws.shape[1])])
    return (draws.mean(axis=0) - mean) / (sd / np.sqrt(n_eff))


def ks_distances(draws, mean, var, n_oracle, seed):
    rng = np.random.default_rng(seed)
    oracle = mean + np.sqrt(var) * rng.standard_normal((n_oracle, mean.size))
    return np.array([stats.ks_2samp(draws[:, j], oracle[:, j]).statistic
                     for j in range(mean.size)])


def conjugate_gibbs_mean(n_draws, seed, a=2.0, b=2.0, n=10, ss=10.0):
    rng = np.random.default_rng(seed)
    draws = np.array([samplers.gibbs_variance_update([ss], [n], a, b, [False], [1.0], rng)[0]
                      for _ in range(n_draws)])
    return float(draws.mean())


def run_suite(seed=1, quick=False):
    results = []

    def timed(name, fn):
        t0 = time.perf_counter()
        passed, detail = fn()
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - t0))
        logger.info("%s: %s (%s)", name, "pass" if passed else "FAIL", detail)

    n = 2000 if quick else 10000

    def mda_exact():
        bad, inner = exact_surrogate_mda(n, seed)
        return bad == 0 and inner > 0, f"{bad} outer rejections after {inner} inner acceptances"

    def pda_exact():
        bad, inner = exact_surrogate_pda(n, seed)
        return bad == 0 and inner > 0, f"{bad} outer rejections after {inner} inner acceptances"

    timed("mda_exact_surrogate", mda_exact)
    timed("pda_exact_surrogate", pda_exact)

    t0 = time.perf_counter()
    errs = stationarity_errors(include_sweep=not quick)
    dt = (time.perf_counter() - t0) / len(errs)
    for name, err in errs.items():
        results.append(CheckResult(f"stationary_{name}", err < STATIONARITY_TOL,
                                   f"max |pi P - pi| = {err:.2e}", dt))

    def pda_oracle():
        draws, mean, _var = pda_lg_chain(5000 if quick else 20000, seed)
        z = np.abs(mc_z_scores(draws, mean)).max()
        return z < 4.0, f"max |z| of year means = {z:.2f}"

    timed("pda_vs_kalman", pda_oracle)

    def gibbs():
        m = conjugate_gibbs_mean(20000 if quick else 100000, seed)
        rel = abs(m - 7.0 / 6.0) / (7.0 / 6.0)
        return rel < 0.01, f"mean {m:.4f} vs 7/6 (rel. error {rel:.2%})"

    timed("gibbs_conjugate", gibbs)
    return results
