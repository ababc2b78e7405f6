"""Validation targets with known answers.

* Gaussian block targets for the Metropolis-type kernels.
* A linear-Gaussian state-space model whose exact posterior over the
  per-year driving terms comes from Kalman filtering and RTS smoothing
  (with a dense conditioning cross-check).
* Finite targets plus :func:`enumerate_kernel`, which builds exact
  transition matrices by walking every proposal and every accept/reject
  branch of the kernel code.
* Shipped size-spectrum configurations (3 species, and a 17-species
  layout) with synthetic-data generation.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import linalg

from . import samplers
from .errors import ValidationError
from .observation import ObservationSet, ParameterLayout
from .samplers import Evaluation

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def _norm_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


# -- continuous targets ------------------------------------------------------

class GaussianTarget:
    """Multivariate normal posterior with a flat prior on a box.

    ``blocks`` defines the surrogate parts: part ``i`` is the exact log
    conditional density of block ``i`` given the rest, so stage-1 ratios of
    the marginal delayed-acceptance kernel equal the exact conditional
    ratios. With a single block covering everything the part is the full
    log-likelihood.
    """

    def __init__(self, mean, cov, blocks=None, lower=-np.inf, upper=np.inf):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        d = self.mean.size
        self.prec = np.linalg.inv(self.cov)
        self.blocks = [np.arange(d)] if blocks is None else [np.atleast_1d(b) for b in blocks]
        self.lower = np.broadcast_to(np.asarray(lower, float), (d,))
        self.upper = np.broadcast_to(np.asarray(upper, float), (d,))
        self._logdet = np.linalg.slogdet(self.cov)[1]
        self.n_runs = 0

    def log_prior(self, x):
        x = np.asarray(x, float)
        return 0.0 if np.all((x >= self.lower) & (x <= self.upper)) else -np.inf

    def loglik(self, x):
        r = np.asarray(x, float) - self.mean
        return float(-0.5 * (r @ self.prec @ r + self._logdet + self.mean.size * LOG_2PI))

    def conditional_logpdf(self, x, block):
        """log p(x_block | x_rest) from the precision-matrix form."""
        r = np.asarray(x, float) - self.mean
        rest = np.setdiff1d(np.arange(self.mean.size), block)
        p_bb = self.prec[np.ix_(block, block)]
        cmean = -np.linalg.solve(p_bb, self.prec[np.ix_(block, rest)] @ r[rest])
        d = r[block] - cmean
        return float(-0.5 * (d @ p_bb @ d - np.linalg.slogdet(p_bb)[1] + block.size * LOG_2PI))

    def evaluate(self, x):
        self.n_runs += 1
        ll = self.loglik(x)
        if len(self.blocks) == 1 and self.blocks[0].size == self.mean.size:
            parts = np.array([ll])
        else:
            parts = np.array([self.conditional_logpdf(x, b) for b in self.blocks])
        return Evaluation(ll, parts)


# -- linear-Gaussian state-space model ---------------------------------------

@dataclass(frozen=True)
class LinearGaussianSSM:
    """``M_t = a M_{t-1} + phi_t``, ``phi_t ~ N(mu, q)``, ``y_t ~ N(M_t, r)``.

    ``M_0 = m0`` is known; the ``phi_t`` play the role of the per-year
    fishing rates. ``r = 0`` is allowed (exact observation).
    """

    T: int
    a: float = 0.5
    q: float = 1.0
    r: float = 0.5
    mu: float = 0.0
    m0: float = 0.0

    def __post_init__(self):
        if self.T < 1:
            raise ValidationError("need at least one year")
        if not self.q > 0 or self.r < 0:
            raise ValidationError("process variance must be > 0, observation variance >= 0")

    def states(self, phi):
        m = np.empty(self.T)
        prev = self.m0
        for t in range(self.T):
            prev = self.a * prev + phi[t]
            m[t] = prev
        return m

    def sample(self, rng):
        phi = self.mu + np.sqrt(self.q) * rng.standard_normal(self.T)
        y = self.states(phi) + np.sqrt(self.r) * rng.standard_normal(self.T)
        return phi, y


def exact_posterior_lg(ssm, y):
    """Exact marginal posterior means and variances of ``phi_1..phi_T``.

    Kalman filter plus RTS smoother over ``M_t``; ``phi_t = M_t - a M_{t-1}``
    so its moments follow from the smoothed lag-one covariance. ``NaN``
    entries of ``y`` are treated as missing.
    """
    T, a, q, r = ssm.T, ssm.a, ssm.q, ssm.r
    y = np.asarray(y, dtype=float)
    mp, pp = np.empty(T), np.empty(T)
    mf, pf = np.empty(T), np.empty(T)
    m, p = ssm.m0, 0.0
    for t in range(T):
        mp[t] = a * m + ssm.mu
        pp[t] = a * a * p + q
        if np.isnan(y[t]):
            m, p = mp[t], pp[t]
        else:
            k = pp[t] / (pp[t] + r)
            m = mp[t] + k * (y[t] - mp[t])
            p = (1.0 - k) * pp[t]
        mf[t], pf[t] = m, p
    ms, ps = mf.copy(), pf.copy()
    cross = np.zeros(T)  # Cov(M_t, M_{t-1} | y); zero at t=0 since M_0 is known
    for t in range(T - 2, -1, -1):
        j = pf[t] * a / pp[t + 1]
        ms[t] = mf[t] + j * (ms[t + 1] - mp[t + 1])
        ps[t] = pf[t] + j * j * (ps[t + 1] - pp[t + 1])
        cross[t + 1] = j * ps[t + 1]
    prev_m = np.r_[ssm.m0, ms[:-1]]
    prev_p = np.r_[0.0, ps[:-1]]
    mean = ms - a * prev_m
    var = ps + a * a * prev_p - 2.0 * a * cross
    return mean, var


def dense_posterior_lg(ssm, y):
    """Brute-force Gaussian conditioning on the joint of ``phi`` and ``y``.

    Returns the posterior mean vector and full covariance matrix.
    """
    T, a = ssm.T, ssm.a
    y = np.asarray(y, dtype=float)
    idx = np.arange(T)
    L = np.where(idx[:, None] >= idx[None, :], a ** (idx[:, None] - idx[None, :]), 0.0)
    offset = a ** (idx + 1) * ssm.m0
    prior_mean = np.full(T, ssm.mu)
    prior_cov = ssm.q * np.eye(T)
    obs = ~np.isnan(y)
    if not obs.any():
        return prior_mean, prior_cov
    H = L[obs]
    S = H @ prior_cov @ H.T + ssm.r * np.eye(obs.sum())
    G = linalg.solve(S, H @ prior_cov, assume_a="pos").T
    mean = prior_mean + G @ (y[obs] - H @ prior_mean - offset[obs])
    cov = prior_cov - G @ H @ prior_cov
    return mean, cov


class LGStateSpaceTarget:
    """The linear-Gaussian model as a state-space target over a (T x 1)
    rate matrix. Counts full evaluations and single-year advances."""

    def __init__(self, ssm, y):
        self.ssm = ssm
        self.y = np.asarray(y, dtype=float)
        self.n_runs = 0
        self.n_advance = 0

    def initial_state(self):
        return self.ssm.m0

    def advance(self, m, t, row):
        self.n_advance += 1
        return self.ssm.a * m + float(row[0])

    def log_surrogate(self, m, t):
        if np.isnan(self.y[t]):
            return 0.0
        return float(_norm_logpdf(self.y[t], m, self.ssm.r))

    def log_prior_row(self, row, t):
        return float(_norm_logpdf(row[0], self.ssm.mu, self.ssm.q))

    def log_prior(self, rates):
        rates = np.asarray(rates, float).reshape(-1)
        return float(np.sum(_norm_logpdf(rates, self.ssm.mu, self.ssm.q)))

    def evaluate(self, rates):
        self.n_runs += 1
        m = self.ssm.states(np.asarray(rates, float).reshape(-1))
        ok = ~np.isnan(self.y)
        terms = np.zeros(self.ssm.T)
        terms[ok] = _norm_logpdf(self.y[ok], m[ok], self.ssm.r)
        return Evaluation(float(terms.sum()), terms)


# -- finite targets ----------------------------------------------------------

class DiscreteRandomWalk:
    """Integer random walk with step distribution ``{step: prob}``.

    Applied independently to every coordinate. With ``modulus`` the walk
    wraps around ``0..modulus-1``; otherwise steps may leave the support
    and are rejected through the prior.
    """

    def __init__(self, steps, modulus=None):
        self.steps = {int(k): float(v) for k, v in dict(steps).items() if v > 0}
        total = sum(self.steps.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError("step probabilities must sum to 1")
        self.modulus = modulus

    def _wrap(self, v):
        return v % self.modulus if self.modulus else v

    def _step_logpdf(self, y, x):
        total = 0.0
        for k, p in self.steps.items():
            if self._wrap(x + k) == y:
                total += p
        return np.log(total) if total > 0 else -np.inf

    def support(self, x):
        """All reachable points from ``x`` with their probabilities."""
        x = np.atleast_1d(np.asarray(x, float))
        per_coord = []
        for xc in x:
            opts = {}
            for k, p in self.steps.items():
                v = float(self._wrap(int(round(xc)) + k))
                opts[v] = opts.get(v, 0.0) + p
            per_coord.append(list(opts.items()))
        out = []
        for combo in itertools.product(*per_coord):
            out.append((np.array([v for v, _ in combo]), float(np.prod([p for _, p in combo]))))
        return out

    def sample(self, rng, x):
        x = np.atleast_1d(np.asarray(x, float))
        keys = list(self.steps)
        probs = [self.steps[k] for k in keys]
        draws = rng.choice(len(keys), size=x.size, p=probs)
        return np.array([self._wrap(int(round(v)) + keys[d]) for v, d in zip(x, draws)],
                        dtype=float)

    def log_density(self, y, x):
        y = np.atleast_1d(np.asarray(y, float))
        x = np.atleast_1d(np.asarray(x, float))
        return float(sum(self._step_logpdf(int(round(b)), int(round(a))) for a, b in zip(x, y)))

    def log_ratio(self, x, y):
        return self.log_density(x, y) - self.log_density(y, x)


class DiscreteTarget:
    """Posterior on a finite grid ``{0..n_1-1} x ... x {0..n_d-1}``.

    ``log_prior_table`` and ``loglik_table`` have the grid's shape; each
    entry of ``surrogate_tables`` gives one surrogate part (another table on
    the grid, so it may depend on every coordinate).
    """

    def __init__(self, log_prior_table, loglik_table, surrogate_tables=()):
        self.lp = np.asarray(log_prior_table, float)
        self.ll = np.asarray(loglik_table, float)
        if self.lp.shape != self.ll.shape:
            raise ValueError("prior and likelihood tables must share a shape")
        self.shape = self.lp.shape
        self.surrogates = [np.asarray(s, float) for s in surrogate_tables]
        self.n_runs = 0

    def _index(self, x):
        x = np.atleast_1d(np.asarray(x, float))
        idx = np.rint(x).astype(int)
        if np.any(idx != x) or np.any(idx < 0) or np.any(idx >= self.shape):
            return None
        return tuple(idx)

    def states(self):
        return [np.array(s, dtype=float) for s in np.ndindex(*self.shape)]

    def index(self, x):
        idx = self._index(x)
        return int(np.ravel_multi_index(idx, self.shape))

    def log_prior(self, x):
        idx = self._index(x)
        return -np.inf if idx is None else float(self.lp[idx])

    def evaluate(self, x):
        self.n_runs += 1
        idx = self._index(x)
        parts = np.array([s[idx] for s in self.surrogates]) if self.surrogates else None
        return Evaluation(float(self.ll[idx]), parts)

    def stationary(self):
        lw = (self.lp + self.ll).reshape(-1)
        w = np.exp(lw - lw.max())
        return w / w.sum()


def five_state_target(seed=7, n_parts=1):
    """A fixed, non-uniform 5-state target with inexact surrogates."""
    rng = np.random.default_rng(seed)
    lp = np.log(rng.dirichlet(np.full(5, 3.0)))
    ll = rng.normal(0.0, 1.0, 5)
    parts = [ll + rng.normal(0.0, 0.7, 5) for _ in range(n_parts)]
    return DiscreteTarget(lp, ll, parts)


def product_target(shape=(5, 5), seed=11):
    """Non-separable target on a 2-D grid; surrogate ``i`` is an inexact
    function of both coordinates."""
    rng = np.random.default_rng(seed)
    lp = np.log(rng.dirichlet(np.full(int(np.prod(shape)), 3.0))).reshape(shape)
    ll = rng.normal(0.0, 1.0, shape)
    parts = [ll + rng.normal(0.0, 0.5, shape) for _ in shape]
    return DiscreteTarget(lp, ll, parts)


class DiscreteSweepTarget:
    """Finite analogue of the calibration problem for the composed sweep.

    Coordinates ``(s1, s2, r1, r2, v)``: two static parameters, two yearly
    rates driving a scalar state, and a variance level. The state starts at
    ``0.5 (s1 + s2)`` and follows ``m_t = 0.6 m_{t-1} + 0.4 r_t + 0.2 s1``;
    year ``t`` is observed with variance ``(0.5, 1.5)[v]``, and a static
    observation ties ``s1`` and ``s2`` together.
    """

    y = (1.1, 0.7)
    variances = (0.5, 1.5)

    def __init__(self, n_levels=3, seed=3):
        rng = np.random.default_rng(seed)
        self.n = n_levels
        self.shape = (n_levels, n_levels, n_levels, n_levels, 2)
        self.prior = [np.log(rng.dirichlet(np.full(k, 4.0))) for k in self.shape]
        self.surrogate_noise = rng.normal(0.0, 0.3, (2,) + self.shape)
        self.static = np.array([0, 1])
        self.rate_index = np.array([[2], [3]])
        self.variance_index = 4
        self.n_runs = 0

    # grid helpers
    def _index(self, x):
        x = np.asarray(x, float)
        idx = np.rint(x).astype(int)
        if np.any(idx != x) or np.any(idx < 0) or np.any(idx >= self.shape):
            return None
        return tuple(idx)

    def states(self):
        return [np.array(s, dtype=float) for s in np.ndindex(*self.shape)]

    def index(self, x):
        return int(np.ravel_multi_index(self._index(x), self.shape))

    # model
    def m0(self, x):
        return 0.5 * (x[0] + x[1])

    def step(self, m, x, rate):
        return 0.6 * m + 0.4 * rate + 0.2 * x[0]

    def year_term(self, m, t, v):
        return float(_norm_logpdf(self.y[t], m, self.variances[int(v)]))

    def loglik(self, x):
        m = self.m0(x)
        total = float(_norm_logpdf(1.0, 0.3 * x[0] - 0.2 * x[1] + 0.5, 0.5))
        for t in range(2):
            m = self.step(m, x, x[2 + t])
            total += self.year_term(m, t, x[4])
        return total

    def log_prior(self, x):
        idx = self._index(x)
        if idx is None:
            return -np.inf
        return float(sum(p[i] for p, i in zip(self.prior, idx)))

    def evaluate(self, x):
        self.n_runs += 1
        idx = self._index(x)
        ll = self.loglik(np.asarray(x, float))
        parts = np.array([0.8 * ll + self.surrogate_noise[k][idx] for k in range(2)])
        return Evaluation(ll, parts)

    def stationary(self):
        w = np.array([self.log_prior(s) + self.loglik(s) for s in self.states()])
        w = np.exp(w - w.max())
        return w / w.sum()

    def pda_view(self, x):
        return _SweepRatesView(self, np.asarray(x, float))

    def gibbs_conditional(self, x, index):
        out = []
        for v in range(self.shape[index]):
            y = np.array(x, float)
            y[index] = v
            out.append((y, self.log_prior(y) + self.loglik(y)))
        lw = np.array([w for _, w in out])
        p = np.exp(lw - lw.max())
        p /= p.sum()
        return [(y, float(pi)) for (y, _), pi in zip(out, p)]


class _SweepRatesView:
    """State-space view of :class:`DiscreteSweepTarget` over its rates."""

    def __init__(self, target, x):
        self.target = target
        self.x = x

    @property
    def n_runs(self):
        return self.target.n_runs

    def _full(self, rates):
        y = self.x.copy()
        y[self.target.rate_index.reshape(-1)] = np.asarray(rates, float).reshape(-1)
        return y

    def initial_state(self):
        return self.target.m0(self.x)

    def advance(self, m, t, row):
        return self.target.step(m, self.x, float(row[0]))

    def log_surrogate(self, m, t):
        return self.target.year_term(m, t, self.x[self.target.variance_index])

    def log_prior_row(self, row, t):
        v = float(row[0])
        if v != round(v) or not 0 <= v < self.target.n:
            return -np.inf
        return float(self.target.prior[2 + t][int(v)])

    def log_prior(self, rates):
        return float(sum(self.log_prior_row(r, t) for t, r in enumerate(rates)))

    def evaluate(self, rates):
        return self.target.evaluate(self._full(rates))


# -- exact enumeration -------------------------------------------------------

def enumerate_branches(run):
    """Call ``run(decide)`` along every accept/reject path.

    ``decide(log_alpha)`` returns the branch for the current path; each
    path's probability is the product of ``exp(log_alpha)`` (accept) and
    ``1 - exp(log_alpha)`` (reject) factors. Returns ``[(prob, result)]``.
    """
    results = []
    pending = [()]
    while pending:
        script = pending.pop()
        taken = []
        prob = 1.0

        def decide(log_alpha):
            nonlocal prob
            p_acc = 1.0 if log_alpha >= 0.0 else float(np.exp(log_alpha))
            d = len(taken)
            if d < len(script):
                choice = script[d]
            else:
                choice = p_acc > 0.0
                if 0.0 < p_acc < 1.0:
                    pending.append(tuple(taken) + (False,))
            prob *= p_acc if choice else 1.0 - p_acc
            taken.append(choice)
            return choice

        out = run(decide)
        if prob > 0.0:
            results.append((prob, out))
    return results


def enumerate_kernel(target, kernel, **cfg):
    """Exact transition matrix of one kernel on a finite target.

    ``kernel`` is one of ``"mh"``, ``"mda"``, ``"pda"``, ``"calderhead"`` or
    ``"gibbs"``; configuration:

    * mh: ``proposal``, optional ``block``
    * mda: ``blocks``, ``proposals``, optional ``separable``
    * pda: ``proposal`` (acts on one year's row); target needs ``pda_view``
      and ``rate_index``
    * calderhead: ``proposal``, ``n_proposals``, optional ``block``
    * gibbs: ``index``; target needs ``gibbs_conditional``
    """
    states = target.states()
    n = len(states)
    P = np.zeros((n, n))
    for a, x in enumerate(states):
        for prob, y in _kernel_outcomes(target, kernel, x, cfg):
            P[a, target.index(y)] += prob
    return P


def _kernel_outcomes(target, kernel, x, cfg):
    out = []
    if kernel == "mh":
        prop, block = cfg["proposal"], cfg.get("block")
        base = x if block is None else x[block]
        for yb, q in prop.support(base):
            y = x.copy()
            if block is None:
                y = yb
            else:
                y[block] = yb
            for p, o in enumerate_branches(
                    lambda d: samplers.mh_transition(x, y, target, prop, d, block=block)):
                out.append((q * p, o.point))
    elif kernel == "mda":
        blocks, props = cfg["blocks"], cfg["proposals"]
        supports = [pr.support(x[b]) for b, pr in zip(blocks, props)]
        for combo in itertools.product(*supports):
            q = float(np.prod([c[1] for c in combo]))
            proposed = [c[0] for c in combo]
            for p, o in enumerate_branches(
                    lambda d: samplers.mda_transition(x, proposed, target, blocks, props, d,
                                                      separable=cfg.get("separable", False))):
                out.append((q * p, o.point))
    elif kernel == "pda":
        prop = cfg["proposal"]
        ridx = target.rate_index
        view = target.pda_view(x)
        rates = x[ridx]
        supports = [prop.support(rates[t]) for t in range(rates.shape[0])]
        for combo in itertools.product(*supports):
            q = float(np.prod([c[1] for c in combo]))
            proposed = np.array([c[0] for c in combo])
            for p, o in enumerate_branches(
                    lambda d: samplers.pda_transition(rates, proposed, view, prop, d)):
                y = x.copy()
                y[ridx] = o.point
                out.append((q * p, y))
    elif kernel == "calderhead":
        prop, k, block = cfg["proposal"], cfg["n_proposals"], cfg.get("block")
        base = x if block is None else x[block]
        support = prop.support(base)
        for combo in itertools.product(support, repeat=k):
            q = float(np.prod([c[1] for c in combo]))
            pts = []
            for yb, _ in combo:
                y = x.copy()
                if block is None:
                    y = yb
                else:
                    y[block] = yb
                pts.append(y)
            row, points, _ = samplers.calderhead_transition(x, pts, target, prop, block=block)
            out.extend((q * r, pt) for r, pt in zip(row, points) if r > 0)
    elif kernel == "gibbs":
        out.extend((p, y) for y, p in target.gibbs_conditional(x, cfg["index"]))
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return out


def stationary_vector(P):
    """Left eigenvector of ``P`` for eigenvalue 1, normalised to sum 1."""
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.r_[np.zeros(n), 1.0]
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


def sweep_matrix(target, n_pda=2, n_proposals=2):
    """Composed four-step sweep on :class:`DiscreteSweepTarget`:
    MDA over the statics, ``n_pda`` PDA transitions over the rates,
    multiple-proposal move over the statics, Gibbs over the variance."""
    rw1 = DiscreteRandomWalk({-1: 0.5, 1: 0.3, 2: 0.2})
    rw_static = DiscreteRandomWalk({-2: 0.15, -1: 0.25, 0: 0.2, 1: 0.25, 2: 0.15})
    mats = [
        enumerate_kernel(target, "mda", blocks=[np.array([0]), np.array([1])],
                         proposals=[rw1, rw1]),
        np.linalg.matrix_power(enumerate_kernel(target, "pda", proposal=rw1), n_pda),
        enumerate_kernel(target, "calderhead", proposal=rw_static, n_proposals=n_proposals,
                         block=target.static),
        enumerate_kernel(target, "gibbs", index=target.variance_index),
    ]
    P = mats[0]
    for M in mats[1:]:
        P = P @ M
    return P, mats


# -- shipped size-spectrum configurations ------------------------------------

DATA_ROOT = "data"


def data_dir(name):
    """Path of a shipped configuration directory (``toy3`` or ``celtic17``)."""
    path = Path(str(resources.files("sscalib") / DATA_ROOT / name))
    if not path.is_dir():
        raise ValidationError(f"no shipped configuration named {name!r}")
    return path


def species_row(name, w_inf, w_mat_frac=0.25, w_egg=1e-3, kappa=np.exp(20.0), lam=2.05,
                fixed_sigma2_c=None):
    """Species-table row with generic allometric defaults.

    The search-volume coefficient gives a feeding level of 0.6 on the
    reference resource spectrum; background mortality scales as
    ``0.6 w_inf^-1/4``.
    """
    from .spectrum import default_search_volume

    h, beta, width = 40.0, 100.0, 2.0
    return {
        "name": name, "w_egg": w_egg, "w_mat": w_mat_frac * w_inf, "w_inf": float(w_inf),
        "max_intake_coeff": h, "intake_exponent": 2.0 / 3.0,
        "search_volume_coeff": float(default_search_volume(h, kappa, lam, beta, width)),
        "search_exponent": lam - 2.0 + 2.0 / 3.0,
        "ppmr_location": beta, "ppmr_width": width,
        "background_mortality_coeff": 0.6 * w_inf ** -0.25,
        "recruitment_efficiency": 0.1, "assimilation_efficiency": 0.6,
        "metabolism_coeff": 4.0, "metabolism_exponent": 0.7, "maturity_sharpness": 10.0,
        "fixed_sigma2_c": fixed_sigma2_c,
    }


def selectivity_rows(name, w_inf, n_points=25, w_min=1e-3):
    """Logistic commercial selectivity (50% at 0.3 w_inf) and a survey gear
    retaining smaller fish (50% at 0.05 w_inf, scaled by 0.05)."""
    from .spectrum import sigmoid_selectivity

    w = np.geomspace(w_min, w_inf, n_points)
    q = sigmoid_selectivity(w, 0.3 * w_inf)
    qs = 0.05 * sigmoid_selectivity(w, 0.05 * w_inf)
    return [[name, float(a), float(b), float(c)] for a, b, c in zip(w, q, qs)]


@dataclass(frozen=True)
class ToyDefinition:
    """In-code definition from which a shipped data directory is written."""

    name: str
    species: tuple          # (name, w_inf, fixed_sigma2_c)
    first_year: int
    n_years: int
    first_survey: int
    n_bins: int
    spin_up_years: int
    truth_seed: int
    data_seed: int
    ln_kappa: float
    ln_rmax: tuple
    sigma2_c: float = 0.05
    sigma2_s: float = 0.2
    history_points: int = 100


THREE_SPECIES = ToyDefinition(
    name="toy3",
    species=(("sprat", 30.0, None), ("whiting", 500.0, None), ("cod", 10000.0, None)),
    first_year=2001, n_years=10, first_survey=2004, n_bins=60, spin_up_years=60,
    truth_seed=20, data_seed=21, ln_kappa=20.0, ln_rmax=(22.0, 21.0, 19.0),
)

# Placeholder asymptotic weights (grams); the calibrated trait values of the
# regional model are not available.
CELTIC_17 = ToyDefinition(
    name="celtic17",
    species=(("herring", 330.0, None), ("sprat", 32.0, None), ("cod", 40000.0, None),
             ("haddock", 4300.0, None), ("whiting", 1900.0, None),
             ("blue_whiting", 700.0, None), ("norway_pout", 100.0, 4.0),
             ("poor_cod", 110.0, 4.0), ("hake", 18000.0, None),
             ("monkfish", 45000.0, None), ("horse_mackerel", 600.0, None),
             ("mackerel", 1200.0, None), ("dab", 300.0, None), ("plaice", 3000.0, None),
             ("megrim", 1200.0, None), ("sole", 900.0, None), ("boarfish", 100.0, None)),
    first_year=1991, n_years=24, first_survey=1997, n_bins=50, spin_up_years=40,
    truth_seed=30, data_seed=31, ln_kappa=20.0,
    ln_rmax=(21.0, 22.0, 17.0, 18.0, 19.0, 20.0, 21.0, 21.0, 17.0, 16.0, 20.0, 19.0,
             20.0, 18.0, 19.0, 19.0, 21.0),
    history_points=10,
)


def true_parameters(defn, layout):
    """Known truth: smooth fishing-rate histories inside the prior support."""
    rng = np.random.default_rng(defn.truth_seed)
    S, T = len(defn.species), defn.n_years
    base = rng.uniform(0.2, 0.8, S)
    trend = rng.uniform(-0.02, 0.02, S)
    wiggle = 0.1 * rng.standard_normal((T, S))
    phi = np.clip(base[None, :] + trend[None, :] * np.arange(T)[:, None] + wiggle, 0.05, 1.4)
    x = np.empty(layout.size)
    x[layout.ln_kappa] = defn.ln_kappa
    x[layout.ln_rmax] = defn.ln_rmax
    x[layout.phi0] = np.round(base, 2)
    x[layout.phi] = np.round(phi, 3).reshape(-1)
    fixed = [f for _, _, f in defn.species]
    x[layout.sigma2_c] = [defn.sigma2_c if f is None else f for f in fixed]
    x[layout.sigma2_s] = defn.sigma2_s
    return x


def generate_synthetic(model, layout, truth, seed, first_survey=0, noise_free=False,
                       commercial_mask=None):
    """Observations from the trajectory at ``truth`` with log-normal noise.

    ``noise_free`` returns the model catches themselves. Entries with a
    zero model catch, or masked out by ``commercial_mask``, are left
    unobserved.
    """
    from .inference import simulate

    truth = np.asarray(truth, float)
    _, (c, s) = simulate(model, layout, truth)
    pv = layout.from_vector(truth)
    rng = np.random.default_rng(seed)
    T, S = c.shape
    ec = rng.standard_normal((T, S))
    es = rng.standard_normal((T, S))
    if noise_free:
        w, z = c.copy(), s.copy()
    else:
        w = c * np.exp(np.sqrt(pv.variances.sigma2_c)[None, :] * ec)
        z = s * np.exp(np.sqrt(pv.variances.sigma2_s)[None, :] * es)
    w_mask = c > 0
    if commercial_mask is not None:
        w_mask &= np.asarray(commercial_mask, bool)
    z_mask = s > 0
    z_mask[:first_survey] = False
    w = np.where(w_mask, w, 1.0)
    z = np.where(z_mask, z, 1.0)
    return ObservationSet(w, z, w_mask, z_mask, layout.years, layout.species, first_survey)


def write_definition(defn, directory):
    """Write the full data directory of ``defn`` (tables, config, truth and
    synthetic observations with a manifest)."""
    import yaml

    from . import fileio
    from .inference import write_samples

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = [species_row(n, w, fixed_sigma2_c=f) for n, w, f in defn.species]
    fileio.write_species_table(directory / "species.csv", rows)
    sel = [r for n, w, _ in defn.species for r in selectivity_rows(n, w)]
    fileio.write_table(directory / "selectivity.csv",
                       ["species", "weight", "catchability", "survey_catchability"], sel)
    years = list(range(defn.first_year, defn.first_year + defn.n_years))
    effort = [[y, n, 1.0 if y >= defn.first_survey else 0.0]
              for y in years for n, _, _ in defn.species]
    fileio.write_table(directory / "survey_effort.csv", ["year", "species", "effort"], effort)
    config = {
        "years": {"first": defn.first_year, "n": defn.n_years, "first_survey": defn.first_survey},
        "model": {"n_bins": defn.n_bins, "spin_up_years": defn.spin_up_years},
        "history_match": {"points_per_wave": defn.history_points},
        "output": f"{defn.name}_output",
    }
    (directory / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=True),
                                           encoding="utf-8")
    cfg = fileio.load_config(directory / "config.yaml")
    model = fileio.build_model(cfg)
    fixed = np.array([f is not None for _, _, f in defn.species])
    layout = ParameterLayout(model.names, cfg.years.years, fixed)
    truth = true_parameters(defn, layout)
    write_samples(directory / "truth.csv", layout.names(), [truth], log_post=None)
    first = defn.first_survey - defn.first_year
    mask = np.broadcast_to(~fixed, (defn.n_years, len(fixed)))
    obs = generate_synthetic(model, layout, truth, defn.data_seed, first, commercial_mask=mask)
    fileio.write_observations(directory / "observations.csv", obs)
    fileio.write_manifest(directory, {"observations": directory / "observations.csv",
                                      "truth": directory / "truth.csv"}, cfg,
                          seed=defn.data_seed, extra={"generator": "generate_synthetic"})
    return directory


@dataclass
class ThreeSpeciesConfig:
    """The shipped 3-species configuration with its known truth."""

    run_config: object
    model: object
    layout: ParameterLayout
    truth: np.ndarray
    observations: ObservationSet

    @property
    def first_survey(self):
        return self.observations.first_survey


def load_shipped(name="toy3", backend=None):
    """Load a shipped configuration, its truth vector and observations."""
    return load_directory(data_dir(name), backend)


def load_directory(directory, backend=None):
    """Load a directory written by :func:`write_definition`."""
    from . import fileio
    from .inference import read_samples

    directory = Path(directory)
    cfg = fileio.load_config(directory / "config.yaml")
    model, obs = fileio.load_problem_inputs(cfg, backend)
    fixed = np.array([sp.fixed_sigma2_c is not None for sp in model.species])
    layout = ParameterLayout(model.names, cfg.years.years, fixed)
    _, rows = read_samples(directory / "truth.csv")
    return ThreeSpeciesConfig(cfg, model, layout, rows[0][: layout.size], obs)
