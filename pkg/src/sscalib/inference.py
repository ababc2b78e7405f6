"""Posterior target for the size-spectrum model and the fitting workflow.

The flat parameter vector follows :class:`~sscalib.observation.ParameterLayout`.
:class:`CalibrationProblem` evaluates it with two caches: spin-up states
keyed on the static parameters and catch trajectories keyed on static
parameters plus fishing rates. ``n_runs`` counts trajectory evaluations
that missed the cache.

One sweep of the sampler performs, in order,

1. a marginal delayed-acceptance move over the per-species sets
   ``{ln_rmax_i, phi0_i}`` (one surrogate per species),
2. ``pda_transitions`` particle delayed-acceptance moves over the yearly
   fishing rates, prefetched ``prefetch_width`` at a time,
3. a multiple-proposal move over ``{ln_kappa, ln_rmax}``,
4. conjugate inverse-gamma draws of the unfrozen variances.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import threading
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from . import __version__, samplers
from .errors import SSCalibError, TrajectoryError, ValidationError
from .observation import (
    ParameterLayout,
    PriorSpec,
    VarianceParams,
    log_likelihood_full,
    residual_sums,
    species_terms,
    year_term,
)
from .samplers import Evaluation, RandomWalk
from .spectrum import StaticParams

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class FitAborted(SSCalibError):
    """A fit stopped on a model failure after writing a checkpoint."""


# -- forward simulation ------------------------------------------------------

def static_params(layout, x):
    x = np.asarray(x, float)
    return StaticParams(x[0], x[layout.ln_rmax], x[layout.phi0])


def simulate(model, layout, x, spin_up_years=None):
    """Spin up at ``phi0`` and run every year of ``x``.

    Returns ``(states, (commercial, survey))`` with catch arrays of shape
    (years x species); ``states[0]`` is the spun-up initial state.
    """
    static = static_params(layout, x)
    state0, metric = model.spin_up(static.phi0, static, spin_up_years)
    if metric > model.config.stationarity_tol:
        logger.debug("spin-up stationarity metric %.3g above tolerance", metric)
    states, recs = model.run_trajectory(state0, layout.phi_matrix(x), static)
    c = np.array([r.commercial for r in recs])
    s = np.array([r.survey for r in recs])
    return [state0] + states, (c, s)


class _LRU:
    def __init__(self, maxsize):
        self.maxsize = maxsize
        self.data = OrderedDict()
        self.lock = threading.Lock()

    def get(self, key):
        with self.lock:
            val = self.data.get(key)
            if val is not None:
                self.data.move_to_end(key)
            return val

    def put(self, key, val):
        with self.lock:
            self.data[key] = val
            self.data.move_to_end(key)
            while len(self.data) > self.maxsize:
                self.data.popitem(last=False)


class CalibrationProblem:
    """Prior, likelihood and cached forward runs for one data set."""

    def __init__(self, model, obs, prior=None, cache_size=512):
        if tuple(obs.species) != tuple(model.names):
            raise ValidationError("observation species do not match the model species")
        self.model = model
        self.obs = obs
        self.prior = prior or PriorSpec()
        fixed = np.array([sp.fixed_sigma2_c is not None for sp in model.species])
        self.fixed_values = np.array([sp.fixed_sigma2_c or np.nan for sp in model.species])
        self.layout = ParameterLayout(model.names, obs.years, fixed)
        self._spin = _LRU(cache_size)
        self._traj = _LRU(cache_size)
        self._count_lock = threading.Lock()
        self.n_runs = 0
        self.n_spinups = 0
        self.n_steps = 0

    # parameters
    def static(self, x):
        return static_params(self.layout, x)

    def variances(self, x):
        x = np.asarray(x, float)
        return VarianceParams(x[self.layout.sigma2_c], x[self.layout.sigma2_s],
                              self.layout.fixed_c)

    def log_prior(self, x):
        x = np.asarray(x, float)
        L, pr = self.layout, self.prior
        total = (pr.log_uniform(x[L.ln_kappa], pr.ln_kappa)
                 + pr.log_uniform(x[L.ln_rmax], pr.ln_rmax)
                 + pr.log_uniform(x[L.phi0], pr.phi0)
                 + pr.log_uniform(x[L.phi], pr.phi))
        if not np.isfinite(total):
            return -np.inf
        c = x[L.sigma2_c]
        if np.any(c[L.fixed_c] != self.fixed_values[L.fixed_c]):
            return -np.inf
        total += pr.log_inv_gamma(x[L.sigma2_s], pr.sigma2_s)
        total += pr.log_inv_gamma(c[~L.fixed_c], pr.sigma2_c)
        return float(total)

    # forward runs
    def spin_up(self, static):
        key = static.key()
        hit = self._spin.get(key)
        if hit is None:
            hit, _ = self.model.spin_up(static.phi0, static)
            self._spin.put(key, hit)
            with self._count_lock:
                self.n_spinups += 1
        return hit

    def catches(self, x):
        """Cached ``(commercial, survey)`` arrays for point ``x``."""
        x = np.asarray(x, float)
        static = self.static(x)
        phi = self.layout.phi_matrix(x)
        key = static.key() + np.ascontiguousarray(phi).tobytes()
        hit = self._traj.get(key)
        if hit is None:
            state0 = self.spin_up(static)
            _, recs = self.model.run_trajectory(state0, phi, static)
            hit = (np.array([r.commercial for r in recs]), np.array([r.survey for r in recs]))
            for arr in hit:
                arr.setflags(write=False)
            self._traj.put(key, hit)
            with self._count_lock:
                self.n_runs += 1
        return hit

    def trajectory(self, x):
        """Uncached states (including the spun-up state) and catches."""
        return simulate(self.model, self.layout, x)

    def evaluate(self, x):
        """Full log-likelihood with per-species parts; catches as payload."""
        cs = self.catches(x)
        var = self.variances(x)
        diag = {}
        ll = log_likelihood_full(cs, self.obs, var, diag)
        parts = species_terms(cs, self.obs, var)
        if ll == -np.inf:
            logger.debug("infeasible catches at %s", diag.get("infeasible"))
        return Evaluation(ll, parts, cs)

    def log_post(self, x):
        lp = self.log_prior(x)
        if lp == -np.inf:
            return -np.inf
        return lp + self.evaluate(x).loglik

    def advance(self, state, x, t, row):
        static = self.static(x)
        with self._count_lock:
            self.n_steps += 1
        return self.model.step_year(state, row, static)


class BlockTarget:
    """Block-target adapter over the full parameter vector."""

    def __init__(self, problem):
        self.problem = problem

    @property
    def n_runs(self):
        return self.problem.n_runs

    def log_prior(self, x):
        return self.problem.log_prior(x)

    def evaluate(self, x):
        return self.problem.evaluate(x)


class RatesTarget:
    """State-space view over the fishing-rate matrix at fixed other values."""

    def __init__(self, problem, x):
        self.problem = problem
        self.x = np.array(x, dtype=float)
        self.var = problem.variances(self.x)
        lo, hi = problem.prior.phi
        self._row_lp = -problem.layout.n_species * np.log(hi - lo)
        self._bounds = (lo, hi)

    @property
    def n_runs(self):
        return self.problem.n_runs

    def full_point(self, rates):
        y = self.x.copy()
        y[self.problem.layout.phi] = np.asarray(rates, float).reshape(-1)
        return y

    def initial_state(self):
        return (self.problem.spin_up(self.problem.static(self.x)), None)

    def advance(self, state, t, row):
        return self.problem.advance(state[0], self.x, t, row)

    def log_surrogate(self, state, t):
        rec = state[1]
        return year_term(t, rec.commercial, rec.survey, self.problem.obs, self.var)

    def log_prior_row(self, row, t):
        lo, hi = self._bounds
        return self._row_lp if np.all((row >= lo) & (row <= hi)) else -np.inf

    def log_prior(self, rates):
        return float(sum(self.log_prior_row(r, t) for t, r in enumerate(rates)))

    def evaluate(self, rates):
        return self.problem.evaluate(self.full_point(rates))


# -- sweep -------------------------------------------------------------------

@dataclass
class SweepPlan:
    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 1
    pda_transitions: int = 8
    prefetch_width: int = 8
    pda_subset: int | None = None
    calderhead_proposals: int = 4
    mda_separable: bool = False
    random_order: bool = False

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0 or self.burn_in > self.iterations:
            raise ValidationError("need 0 <= burn_in <= iterations")
        if self.thin < 1 or self.pda_transitions < 0 or self.prefetch_width < 1:
            raise ValidationError("thin and prefetch width must be >= 1")
        if self.calderhead_proposals < 1:
            raise ValidationError("need at least one multiple-proposal candidate")

    @classmethod
    def from_config(cls, cfg):
        s = cfg.sampler
        return cls(cfg.run.iterations, cfg.run.burn_in, cfg.run.thin, s.pda_transitions,
                   s.prefetch_width, s.pda_subset, s.calderhead_proposals, s.mda_separable,
                   s.random_order)


@dataclass
class ProposalSpec:
    """Random-walk scales per block (reflected Gaussian on the prior box)."""

    mda_scales: np.ndarray          # species x 2 (ln_rmax, phi0)
    pda_scale: np.ndarray           # species
    calderhead_scale: np.ndarray    # 1 + species (ln_kappa, ln_rmax)
    family: str = "reflected-gaussian"

    def __post_init__(self):
        for name in ("mda_scales", "pda_scale", "calderhead_scale"):
            arr = np.array(getattr(self, name), dtype=float)
            if np.any(~(arr > 0)):
                raise ValidationError(f"{name} must be > 0")
            setattr(self, name, arr)

    @classmethod
    def default(cls, n_species, sampler_cfg=None):
        from .fileio import SamplerConfig

        s = sampler_cfg or SamplerConfig()
        return cls(np.tile([s.mda_scale, s.phi0_scale], (n_species, 1)),
                   np.full(n_species, s.pda_scale),
                   np.full(n_species + 1, s.calderhead_scale))

    def to_dict(self):
        return {"mda_scales": self.mda_scales.tolist(), "pda_scale": self.pda_scale.tolist(),
                "calderhead_scale": self.calderhead_scale.tolist(), "family": self.family}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mda_scales"]), np.array(d["pda_scale"]),
                   np.array(d["calderhead_scale"]), d.get("family", "reflected-gaussian"))


@dataclass
class ChainSample:
    iteration: int
    x: np.ndarray
    log_post: float
    flags: dict = field(default_factory=dict)


STEP_NAMES = ("mda", "pda", "calderhead", "gibbs")


class Sampler:
    """Runs sweeps of the four-step scheme on a :class:`CalibrationProblem`."""

    def __init__(self, problem, plan, spec, executor=None):
        self.problem = problem
        self.plan = plan
        self.spec = spec
        self.executor = executor
        self.target = BlockTarget(problem)
        L, pr = problem.layout, problem.prior
        self.blocks = [L.species_block(i) for i in range(L.n_species)]
        self.cal_block = np.r_[0, np.arange(L.ln_rmax.start, L.ln_rmax.stop)]
        self._mda_bounds = (np.array([pr.ln_rmax[0], pr.phi0[0]]),
                            np.array([pr.ln_rmax[1], pr.phi0[1]]))
        self._cal_bounds = (np.r_[pr.ln_kappa[0], np.full(L.n_species, pr.ln_rmax[0])],
                            np.r_[pr.ln_kappa[1], np.full(L.n_species, pr.ln_rmax[1])])

    def step_mda(self, x, ev, rng):
        props = [RandomWalk(self.spec.mda_scales[i], *self._mda_bounds)
                 for i in range(len(self.blocks))]
        out = samplers.mda_step(x, self.target, self.blocks, props, rng, ev, self.executor,
                                self.plan.mda_separable)
        flags = {"inner": out.inner_accepted.astype(int).tolist(),
                 "outer": int(out.accepted and bool(out.inner_accepted.any())),
                 "attempted": int(bool(out.inner_accepted.any()))}
        return out.point, out.evaluation, flags

    def step_pda(self, x, ev, rng):
        if self.plan.pda_transitions == 0:
            return x, ev, {"moves": 0, "transitions": 0}
        lo, hi = self.problem.prior.phi
        prop = RandomWalk(self.spec.pda_scale, lo, hi)
        view = RatesTarget(self.problem, x)
        rates = self.problem.layout.phi_matrix(x)
        out = samplers.pda_prefetch(rates, view, prop, rng, self.plan.pda_transitions,
                                    self.plan.prefetch_width, ev, self.executor,
                                    self.plan.pda_subset)
        trans = out.info["transitions"]
        x2 = view.full_point(out.point)
        inner = [float(np.mean(o.inner_accepted)) for o in trans if o.inner_accepted is not None]
        flags = {"moves": int(sum(o.moved for o in trans)), "transitions": len(trans),
                 "inner_rate": float(np.mean(inner)) if inner else 0.0}
        return x2, out.evaluation, flags

    def step_calderhead(self, x, ev, rng):
        prop = RandomWalk(self.spec.calderhead_scale, *self._cal_bounds)
        out = samplers.calderhead_step(x, self.target, prop, rng,
                                       self.plan.calderhead_proposals, ev, self.executor,
                                       self.cal_block)
        return out.point, out.evaluation, {"moved": int(out.moved)}

    def step_gibbs(self, x, ev, rng):
        L, pr = self.problem.layout, self.problem.prior
        ss_c, n_c, ss_s, n_s = residual_sums(ev.payload, self.problem.obs)
        x = x.copy()
        x[L.sigma2_c] = samplers.gibbs_variance_update(ss_c, n_c, *pr.sigma2_c, L.fixed_c,
                                                       x[L.sigma2_c], rng)
        x[L.sigma2_s] = samplers.gibbs_variance_update(
            ss_s, n_s, *pr.sigma2_s, np.zeros(L.n_species, bool), x[L.sigma2_s], rng)
        return x, self.problem.evaluate(x), {}

    def sweep(self, x, ev, rng):
        order = list(range(4))
        if self.plan.random_order:
            order = list(rng.permutation(4))
        steps = (self.step_mda, self.step_pda, self.step_calderhead, self.step_gibbs)
        flags = {"order": [STEP_NAMES[k] for k in order]}
        for k in order:
            x, ev, f = steps[k](x, ev, rng)
            flags[STEP_NAMES[k]] = f
        return x, ev, flags


class AcceptanceStats:
    """Running acceptance counters per step and per block."""

    def __init__(self, n_species):
        self.mda_inner = np.zeros(n_species)
        self.mda_outer = 0
        self.mda_attempted = 0
        self.pda_moves = 0
        self.pda_transitions = 0
        self.cal_moves = 0
        self.sweeps = 0

    def update(self, flags):
        self.sweeps += 1
        m = flags["mda"]
        self.mda_inner += m["inner"]
        self.mda_outer += m["outer"]
        self.mda_attempted += m["attempted"]
        self.pda_moves += flags["pda"]["moves"]
        self.pda_transitions += flags["pda"]["transitions"]
        self.cal_moves += flags["calderhead"]["moved"]

    def rates(self):
        n = max(self.sweeps, 1)
        return {
            "mda_inner": (self.mda_inner / n).tolist(),
            "mda_outer": self.mda_outer / max(self.mda_attempted, 1),
            "pda": self.pda_moves / max(self.pda_transitions, 1),
            "calderhead": self.cal_moves / n,
            "sweeps": self.sweeps,
        }

    def to_dict(self):
        d = dict(vars(self))
        d["mda_inner"] = self.mda_inner.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        obj = cls(len(d["mda_inner"]))
        for k, v in d.items():
            setattr(obj, k, np.array(v) if k == "mda_inner" else v)
        return obj


# -- pilot tuning ------------------------------------------------------------

INNER_BAND = (0.15, 0.5)
OUTER_BAND = (0.2, 0.4)


def adjust_scale(scale, rate, band, factor=2.0):
    """Multiply by ``factor`` above the band, divide below it, else keep."""
    lo, hi = band
    if rate > hi:
        return scale * factor
    if rate < lo:
        return scale / factor
    return scale


def tune_scale(run_block, scale, band, iterations, max_rounds=10, factor=2.0):
    """Repeat short runs, adjusting ``scale`` until the acceptance rate of
    ``run_block(scale, iterations) -> rate`` falls in ``band``.

    Returns ``(scale, rate)``; stops after ``max_rounds`` rounds.
    """
    rate = run_block(scale, iterations)
    for _ in range(max_rounds):
        new = adjust_scale(scale, rate, band, factor)
        if new == scale:
            break
        scale = new
        rate = run_block(scale, iterations)
    return scale, rate


def pilot_tune(sampler, x, ev, rng, iterations, rounds=4, factor=2.0):
    """Short pilot chains, rescaling each block toward its acceptance band.

    The stage-1 moves of the marginal delayed-acceptance step target
    ``INNER_BAND``; the particle and multiple-proposal steps target
    ``OUTER_BAND``. Returns ``(spec, x, ev)`` with the chain's final state.
    """
    spec = sampler.spec
    if iterations <= 0:
        return spec, x, ev
    per_round = max(1, iterations // max(rounds, 1))
    for r in range(max(rounds, 1)):
        stats = AcceptanceStats(sampler.problem.layout.n_species)
        for _ in range(per_round):
            x, ev, flags = sampler.sweep(x, ev, rng)
            stats.update(flags)
        rates = stats.rates()
        mda = spec.mda_scales.copy()
        for i, rate in enumerate(rates["mda_inner"]):
            mda[i] = adjust_scale(mda[i], rate, INNER_BAND, factor)
        pda = adjust_scale(spec.pda_scale, rates["pda"], OUTER_BAND, factor)
        cal = adjust_scale(spec.calderhead_scale, rates["calderhead"], OUTER_BAND, factor)
        # reflection makes very large scales pointless
        width_phi = np.diff(sampler.problem.prior.phi)[0]
        pda = np.minimum(pda, width_phi)
        mda[:, 1] = np.minimum(mda[:, 1], width_phi)
        spec = ProposalSpec(mda, pda, cal, spec.family)
        sampler.spec = spec
        logger.info("pilot round %d: rates %s", r + 1, rates)
    return spec, x, ev


# -- history matching --------------------------------------------------------

@dataclass
class HistoryMatchResult:
    points: np.ndarray           # survivors (full vectors), best first
    implausibility: np.ndarray   # max implausibility of each survivor
    threshold: float
    evaluated: int
    rejected: np.ndarray = None
    rejected_implausibility: np.ndarray = None


def _ig_reference(a, b):
    """Prior mean of an inverse-gamma, or its mode when the mean is infinite."""
    return b / (a - 1.0) if a > 1.0 else b / (a + 1.0)


def reduced_to_full(problem, z, variances=None):
    """Expand ``[ln_kappa, ln_rmax, phi0, phi_level]`` to a full vector with
    rates constant over years."""
    L = problem.layout
    S = L.n_species
    x = np.empty(L.size)
    x[0] = z[0]
    x[L.ln_rmax] = z[1:1 + S]
    x[L.phi0] = z[1 + S:1 + 2 * S]
    x[L.phi] = np.tile(z[1 + 2 * S:1 + 3 * S], L.n_years)
    if variances is None:
        pr = problem.prior
        variances = (np.full(S, _ig_reference(*pr.sigma2_c)),
                     np.full(S, _ig_reference(*pr.sigma2_s)))
    c = np.array(variances[0], float)
    c[L.fixed_c] = problem.fixed_values[L.fixed_c]
    x[L.sigma2_c] = c
    x[L.sigma2_s] = variances[1]
    return x


def implausibility(problem, x, var_c, var_s):
    """Largest standardised log distance between observed and simulated
    catches; ``inf`` when a simulation fails or predicts zero catch."""
    try:
        c, s = problem.catches(x)
    except (TrajectoryError, SSCalibError, FloatingPointError):
        return np.inf
    obs = problem.obs
    with np.errstate(divide="ignore", invalid="ignore"):
        ic = np.abs(np.log(obs.w) - np.log(c)) / np.sqrt(var_c)[None, :]
        iz = np.abs(np.log(obs.z) - np.log(s)) / np.sqrt(var_s)[None, :]
    vals = np.concatenate([ic[obs.w_mask], iz[obs.z_mask]])
    if vals.size == 0:
        return 0.0
    vals = np.where(np.isnan(vals), np.inf, vals)
    return float(vals.max())


def history_match(problem, config, rng, extra_points=()):
    """Two-stage (or more) plausibility screening by direct simulation.

    Wave 1 is a Latin hypercube over the prior box of the reduced space
    (statics plus one fishing level per species); later waves draw around
    the survivors.
    Survivors of earlier waves are carried forward and rescreened. When
    nothing survives a wave, that wave's threshold is relaxed by
    ``config.relax_factor`` with a warning; the next wave starts again from
    the configured threshold.
    ``extra_points`` (full vectors) are screened alongside wave 1.
    """
    pr = problem.prior
    S = problem.layout.n_species
    ref_c, ref_s = _ig_reference(*pr.sigma2_c), _ig_reference(*pr.sigma2_s)
    mean_c = pr.sigma2_c[1] / (pr.sigma2_c[0] - 1) if pr.sigma2_c[0] > 1 else ref_c
    mean_s = pr.sigma2_s[1] / (pr.sigma2_s[0] - 1) if pr.sigma2_s[0] > 1 else ref_s
    disc_c = config.discrepancy_c if config.discrepancy_c is not None else mean_c
    disc_s = config.discrepancy_s if config.discrepancy_s is not None else mean_s
    var_c = np.where(problem.layout.fixed_c, problem.fixed_values, ref_c) + disc_c
    var_s = np.full(S, ref_s + disc_s)
    lo = np.r_[pr.ln_kappa[0], np.full(S, pr.ln_rmax[0]), np.full(S, pr.phi0[0]),
               np.full(S, pr.phi[0])]
    hi = np.r_[pr.ln_kappa[1], np.full(S, pr.ln_rmax[1]), np.full(S, pr.phi0[1]),
               np.full(S, pr.phi[1])]
    threshold = config.threshold
    pts, imps = [], []
    for x in extra_points:
        pts.append(np.asarray(x, float))
        imps.append(implausibility(problem, pts[-1], var_c, var_s))
    survivors_z = None
    for wave in range(config.waves):
        n = config.points_per_wave
        if survivors_z is None or len(survivors_z) == 0:
            design = qmc.LatinHypercube(d=lo.size, seed=rng).random(n)
            z = lo + (hi - lo) * design
        else:
            spread = np.maximum(survivors_z.std(axis=0), 0.05 * (hi - lo))
            pick = survivors_z[rng.integers(0, len(survivors_z), n)]
            z = pick + spread * rng.standard_normal((n, lo.size))
            z = RandomWalk(np.ones(lo.size), lo, hi).reflect(z)
        for zi in z:
            x = reduced_to_full(problem, zi)
            pts.append(x)
            imps.append(implausibility(problem, x, var_c, var_s))
        imp_arr = np.array(imps)
        threshold = config.threshold
        while not np.any(imp_arr <= threshold):
            finite = imp_arr[np.isfinite(imp_arr)]
            if finite.size == 0:
                raise SSCalibError("history matching: every simulated point failed")
            logger.warning("history matching wave %d: no survivors at threshold %.3g; "
                           "relaxing", wave + 1, threshold)
            threshold *= config.relax_factor
        keep = imp_arr <= threshold
        survivors_z = np.array([_reduce(problem, p) for p, k in zip(pts, keep) if k])
        logger.info("history matching wave %d: %d/%d survive (threshold %.3g)",
                    wave + 1, keep.sum(), len(pts), threshold)
    imp_arr = np.array(imps)
    keep = imp_arr <= threshold
    order = np.argsort(imp_arr[keep], kind="stable")
    all_pts = np.array(pts)
    return HistoryMatchResult(all_pts[keep][order], imp_arr[keep][order], threshold,
                              len(pts), all_pts[~keep], imp_arr[~keep])


def _reduce(problem, x):
    L = problem.layout
    return np.r_[x[0], x[L.ln_rmax], x[L.phi0], L.phi_matrix(x).mean(axis=0)]


# -- sample files ------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def write_samples(path, names, rows, log_post=()):
    """Write a sample table; ``log_post=None`` omits that column."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + ([] if log_post is None else ["log_post"]))
        lps = [None] * len(rows) if log_post is None else list(log_post)
        for row, lp in zip(rows, lps):
            vals = [_fmt(v) for v in row]
            if log_post is not None:
                vals.append(_fmt(lp))
            w.writerow(vals)


def read_samples(path):
    """Return ``(names, rows)`` of a sample table."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: sample file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty sample file") from None
        try:
            rows = np.array([[float(v) for v in r] for r in reader if r], dtype=float)
        except ValueError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    return names, rows.reshape(-1, len(names))


# -- the fit -----------------------------------------------------------------

@dataclass
class FitResult:
    output_dir: Path
    n_samples: int
    acceptance: dict
    start: np.ndarray
    spec: ProposalSpec


def _executor(threads):
    return ThreadPoolExecutor(max_workers=threads) if threads and threads > 1 else None


def _rng_state(rng):
    return rng.bit_generator.state


def _restore_rng(state):
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def find_start(problem, cfg, rng):
    """Starting point: a supplied start file, else the best history-matching
    survivor, else the centre of the prior box."""
    if cfg.run.start:
        start = Path(cfg.run.start)
        _, rows = read_samples(start if start.is_absolute() else Path(cfg.base_dir) / start)
        return rows[-1][: problem.layout.size], None
    if cfg.run.history_match:
        hm = history_match(problem, cfg.history_match, rng)
        return hm.points[0], hm
    pr = problem.prior
    S = problem.layout.n_species
    z = np.r_[np.mean(pr.ln_kappa), np.full(S, np.mean(pr.ln_rmax)),
              np.full(S, np.mean(pr.phi0)), np.full(S, np.mean(pr.phi))]
    return reduced_to_full(problem, z), None


def run_fit(problem, cfg, seed, output_dir, resume=False, threads=1, stop_after=None):
    """History matching, pilot tuning and the main chain, with checkpoints.

    Writes ``samples.csv`` (post-burn-in, thinned), ``run_log.jsonl`` (one
    record per sweep), ``checkpoint.json``, ``summary.json`` and
    ``manifest.json`` to ``output_dir``. ``stop_after`` ends the run early
    after that many main-chain iterations (leaving a checkpoint) and is
    meant for testing resumption.
    """
    from . import diagnostics, fileio

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = SweepPlan.from_config(cfg)
    layout = problem.layout
    names = layout.names()
    samples_path = out / "samples.csv"
    ckpt_path = out / "checkpoint.json"
    log_path = out / "run_log.jsonl"
    executor = _executor(threads)
    try:
        if resume and ckpt_path.exists():
            ck = json.loads(ckpt_path.read_text(encoding="utf-8"))
            if ck.get("version") != CHECKPOINT_VERSION:
                raise ValidationError("checkpoint version mismatch")
            if ck.get("config_sha256") != cfg.digest() or ck.get("seed") != seed:
                raise ValidationError("checkpoint was written for another config or seed")
            rng = _restore_rng(ck["rng_state"])
            x = np.array(ck["x"], dtype=float)
            spec = ProposalSpec.from_dict(ck["spec"])
            start = np.array(ck["start"], dtype=float)
            stats = AcceptanceStats.from_dict(ck["stats"])
            it0 = ck["iteration"]
            with open(samples_path, "r+b") as fh:
                fh.truncate(ck["samples_bytes"])
            with open(log_path, "r+b") as fh:
                fh.truncate(ck["log_bytes"])
            logger.info("resuming at iteration %d", it0)
        else:
            rng = np.random.default_rng(seed)
            start, _ = find_start(problem, cfg, rng)
            x = start.copy()
            spec = ProposalSpec.default(layout.n_species, cfg.sampler)
            sampler = Sampler(problem, plan, spec, executor)
            ev = problem.evaluate(x)
            if problem.log_prior(x) + ev.loglik == -np.inf:
                raise SSCalibError("start point has zero posterior density")
            spec, x, ev = pilot_tune(sampler, x, ev, rng, cfg.sampler.pilot_iterations,
                                     cfg.sampler.pilot_rounds)
            stats = AcceptanceStats(layout.n_species)
            it0 = 0
            write_samples(samples_path, names, [], [])
            log_path.write_text("", encoding="utf-8")

        sampler = Sampler(problem, plan, spec, executor)
        ev = problem.evaluate(x)

        def checkpoint(iteration):
            state = {
                "version": CHECKPOINT_VERSION, "code_version": __version__,
                "iteration": iteration, "seed": seed, "config_sha256": cfg.digest(),
                "x": [float(v) for v in x], "rng_state": _rng_state(rng),
                "spec": spec.to_dict(), "start": [float(v) for v in start],
                "stats": stats.to_dict(), "parameter_names": names,
                "samples_bytes": samples_path.stat().st_size,
                "log_bytes": log_path.stat().st_size,
            }
            tmp = ckpt_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(state), encoding="utf-8")
            os.replace(tmp, ckpt_path)

        every = max(1, cfg.run.checkpoint_every)
        it = it0
        with open(samples_path, "a", newline="", encoding="utf-8") as sf, \
                open(log_path, "a", encoding="utf-8") as lf:
            writer = csv.writer(sf, lineterminator="\n")
            while it < plan.iterations:
                t0 = time.perf_counter()
                runs0 = problem.n_runs
                try:
                    x_new, ev_new, flags = sampler.sweep(x, ev, rng)
                except Exception as exc:
                    sf.flush()
                    lf.flush()
                    checkpoint(it)
                    raise FitAborted(f"iteration {it}: {exc}") from exc
                x, ev = x_new, ev_new
                it += 1
                stats.update(flags)
                lp = problem.log_prior(x) + ev.loglik
                if it > plan.burn_in and (it - plan.burn_in - 1) % plan.thin == 0:
                    writer.writerow([_fmt(v) for v in x] + [_fmt(lp)])
                record = {"iteration": it, "log_post": lp, "flags": flags,
                          "model_runs": problem.n_runs - runs0,
                          "seconds": round(time.perf_counter() - t0, 6)}
                lf.write(json.dumps(record) + "\n")
                if it % every == 0 or it == plan.iterations:
                    sf.flush()
                    lf.flush()
                    checkpoint(it)
                if stop_after is not None and it - it0 >= stop_after:
                    sf.flush()
                    lf.flush()
                    checkpoint(it)
                    return None
    finally:
        if executor is not None:
            executor.shutdown()

    _, rows = read_samples(samples_path)
    summary = {"iterations": plan.iterations, "burn_in": plan.burn_in, "thin": plan.thin,
               "n_samples": int(rows.shape[0]), "acceptance": stats.rates(),
               "proposal": spec.to_dict(), "start": [float(v) for v in start]}
    if rows.shape[0] >= 2:
        table = diagnostics.parameter_table(rows, names + ["log_post"])
        summary["parameters"] = table
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n",
                                      encoding="utf-8")
    fileio.write_manifest(out, {"samples": samples_path, "summary": out / "summary.json",
                                "run_log": log_path, "checkpoint": ckpt_path}, cfg, seed)
    return FitResult(out, int(rows.shape[0]), stats.rates(), start, spec)

