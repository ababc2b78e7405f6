"""MCMC transition kernels.

Every kernel is split into a proposal draw and a deterministic transition
that receives its accept/reject coin flips through a ``decide`` callback
(``decide(log_alpha) -> bool``). The ``*_step`` functions drive the
transition with a random generator; :func:`sscalib.toy_models.enumerate_kernel`
drives the same code with every branch to build exact transition matrices.

Targets
-------
A block target provides ``log_prior(x)`` and ``evaluate(x) -> Evaluation``
over flat parameter vectors. ``Evaluation.parts`` holds the surrogate
log-likelihoods (one per block for the marginal delayed-acceptance kernel).

A state-space target (for the particle delayed-acceptance kernel) works on
a (years x d) rate matrix and provides ``initial_state()``,
``advance(state, t, row)``, ``log_surrogate(state, t)``,
``log_prior_row(row, t)``, ``log_prior(rates)`` and ``evaluate(rates)``.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .errors import SSCalibError, TrajectoryError

logger = logging.getLogger(__name__)


@dataclass
class Evaluation:
    loglik: float
    parts: np.ndarray | None = None
    payload: Any = None


@dataclass
class KernelOutcome:
    point: np.ndarray
    accepted: bool
    evaluation: Evaluation | None = None
    inner_accepted: np.ndarray | None = None
    log_alpha: float = 0.0
    n_runs: int = 0
    moved: bool = False
    info: dict = field(default_factory=dict)


def log1mexp(a):
    """``log(1 - exp(a))`` for ``a <= 0``, stable at both ends."""
    if a == -np.inf:
        return 0.0
    if a >= 0.0:
        return -np.inf
    if a > -np.log(2.0):
        return float(np.log(-np.expm1(a)))
    return float(np.log1p(-np.exp(a)))


def rng_decider(rng):
    """Coin flips from ``rng``; one uniform is consumed per decision."""

    def decide(log_alpha):
        u = rng.random()
        return bool(log_alpha >= 0.0 or np.log(u) < log_alpha)

    return decide


# -- proposals ---------------------------------------------------------------

class RandomWalk:
    """Gaussian random walk, reflected into ``[lower, upper]`` when bounded.

    Reflection keeps the kernel symmetric, so ``log_ratio`` is zero.
    """

    symmetric = True

    def __init__(self, scale, lower=-np.inf, upper=np.inf):
        self.scale = np.asarray(scale, dtype=float)
        if np.any(~(self.scale > 0)):
            raise ValueError("proposal scales must be > 0")
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.lower >= self.upper):
            raise ValueError("proposal bounds must satisfy lower < upper")

    def with_scale(self, scale):
        return RandomWalk(scale, self.lower, self.upper)

    def reflect(self, y):
        lo = np.broadcast_to(self.lower, y.shape)
        hi = np.broadcast_to(self.upper, y.shape)
        out = np.array(y, dtype=float)
        both = np.isfinite(lo) & np.isfinite(hi)
        lo_f = np.where(np.isfinite(lo), lo, 0.0)
        hi_f = np.where(np.isfinite(hi), hi, 0.0)
        width = np.where(both, hi_f - lo_f, 1.0)
        u = np.mod(out - lo_f, 2.0 * width)
        u = np.where(u > width, 2.0 * width - u, u)
        out = np.where(both, lo_f + u, out)
        only_lo = np.isfinite(lo) & ~np.isfinite(hi)
        out = np.where(only_lo, lo_f + np.abs(out - lo_f), out)
        only_hi = ~np.isfinite(lo) & np.isfinite(hi)
        out = np.where(only_hi, hi_f - np.abs(hi_f - out), out)
        return out

    def sample(self, rng, x):
        x = np.asarray(x, dtype=float)
        z = rng.standard_normal(x.shape)
        return self.reflect(x + np.broadcast_to(self.scale, x.shape) * z)

    def log_density(self, y, x):
        """``log f(y | x)``, summing reflected images of the Gaussian."""
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        return float(np.sum(_reflected_logpdf(y, x, self.scale, self.lower, self.upper)))

    def pairwise_log_density(self, points):
        """Matrix ``L[j, k] = log f(points[k] | points[j])``."""
        pts = np.array([np.asarray(p, dtype=float).reshape(-1) for p in points])
        terms = _reflected_logpdf(pts[None, :, :], pts[:, None, :], self.scale,
                                  self.lower, self.upper)
        return terms.sum(axis=-1)

    def log_ratio(self, x, y):
        """``log f(x | y) - log f(y | x)``."""
        return 0.0


def _norm_logpdf(d, s):
    return -0.5 * (d / s) ** 2 - np.log(s) - 0.5 * np.log(2.0 * np.pi)


def _reflected_logpdf(y, x, s, lo, hi):
    """Elementwise log density of the reflected Gaussian walk."""
    y, x, s, lo, hi = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                            for a in (y, x, s, lo, hi)))
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    lo_f = np.where(fin_lo, lo, 0.0)
    hi_f = np.where(fin_hi, hi, 0.0)
    out = _norm_logpdf(y - x, s)
    both = fin_lo & fin_hi
    if both.any():
        width = np.where(both, hi_f - lo_f, 1.0)
        n_img = int(np.ceil(np.max(8.0 * s[both] / (2.0 * width[both])))) + 1
        shifts = 2.0 * width[..., None] * np.arange(-n_img, n_img + 1)
        sb = s[..., None]
        terms = np.concatenate([_norm_logpdf((y - x)[..., None] - shifts, sb),
                                _norm_logpdf((y + x - 2.0 * lo_f)[..., None] - shifts, sb)],
                               axis=-1)
        out = np.where(both, logsumexp(terms, axis=-1), out)
    only_lo = fin_lo & ~fin_hi
    if only_lo.any():
        out = np.where(only_lo, np.logaddexp(out, _norm_logpdf(y + x - 2.0 * lo_f, s)), out)
    only_hi = fin_hi & ~fin_lo
    if only_hi.any():
        out = np.where(only_hi, np.logaddexp(out, _norm_logpdf(2.0 * hi_f - y - x, s)), out)
    outside = (fin_lo & (y < lo_f)) | (fin_hi & (y > hi_f))
    return np.where(outside, -np.inf, out)


# -- evaluation helpers ------------------------------------------------------

class CachedTarget:
    """Memoising wrapper that counts distinct model evaluations.

    ``n_runs`` counts calls that reached the wrapped ``evaluate``; results
    are keyed by the exact bytes of the point.
    """

    def __init__(self, target, maxsize=4096):
        self.target = target
        self.maxsize = maxsize
        self.n_runs = 0
        self._cache = {}
        self._lock = threading.Lock()

    def log_prior(self, x):
        return self.target.log_prior(x)

    def evaluate(self, x):
        key = np.ascontiguousarray(x, dtype=float).tobytes()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        ev = self.target.evaluate(np.array(x, dtype=float))
        with self._lock:
            self.n_runs += 1
            if len(self._cache) >= self.maxsize:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = ev
        return ev

    def __getattr__(self, name):
        return getattr(self.target, name)


def _runs(target):
    return getattr(target, "n_runs", 0)


def evaluate_many(target, points, executor=None):
    """Evaluate ``points`` (possibly concurrently); order is preserved."""
    if executor is None or len(points) < 2:
        return [target.evaluate(p) for p in points]
    return list(executor.map(target.evaluate, points))


def _safe_evaluate(target, x):
    try:
        return target.evaluate(x)
    except (TrajectoryError, SSCalibError, FloatingPointError) as exc:
        logger.warning("model evaluation failed, proposal rejected: %s", exc)
        return Evaluation(-np.inf, None)


# -- Metropolis-Hastings -----------------------------------------------------

def mh_log_alpha(lp_x, ll_x, lp_y, ll_y, log_q_ratio=0.0):
    """Log acceptance probability ``min(0, log r)``; ``-inf`` when the
    proposal has zero posterior density."""
    if lp_y == -np.inf or ll_y == -np.inf:
        return -np.inf
    return min(0.0, lp_y + ll_y - lp_x - ll_x + log_q_ratio)


def mh_transition(x, y, target, proposal, decide, current=None, block=None):
    x = np.asarray(x, dtype=float)
    runs0 = _runs(target)
    cur = current or target.evaluate(x)
    lp_x = target.log_prior(x)
    lp_y = target.log_prior(y)
    ev_y = _safe_evaluate(target, y) if lp_y > -np.inf else Evaluation(-np.inf)
    bx = x if block is None else x[block]
    by = y if block is None else y[block]
    la = mh_log_alpha(lp_x, cur.loglik, lp_y, ev_y.loglik, proposal.log_ratio(bx, by))
    acc = decide(la)
    moved = acc and not np.array_equal(x, y)
    return KernelOutcome(np.array(y if acc else x), acc, ev_y if acc else cur,
                         log_alpha=la, n_runs=_runs(target) - runs0, moved=moved)


def mh_step(x, target, proposal, rng, current=None, block=None):
    """One random-walk Metropolis-Hastings step (optionally on one block)."""
    x = np.asarray(x, dtype=float)
    y = x.copy()
    if block is None:
        y = proposal.sample(rng, x)
    else:
        y[block] = proposal.sample(rng, x[block])
    return mh_transition(x, y, target, proposal, rng_decider(rng), current, block)


# -- marginal delayed acceptance ---------------------------------------------

def mda_transition(x, proposed, target, blocks, proposals, decide, current=None,
                   executor=None, separable=False):
    """Marginal delayed-acceptance transition given block proposals.

    ``proposed[i]`` is the proposed value of block ``blocks[i]``; the
    surrogate of block ``i`` is ``evaluate(.).parts[i]``. With
    ``separable=True`` the surrogates are declared insensitive to other
    blocks and cross-point evaluations are replaced by cached values.
    """
    x = np.asarray(x, dtype=float)
    runs0 = _runs(target)
    n_blocks = len(blocks)
    cur = current or target.evaluate(x)
    lp_x = target.log_prior(x)

    cand = []
    for b, val in zip(blocks, proposed):
        xi = x.copy()
        xi[b] = val
        cand.append(xi)
    lp_cand = np.array([target.log_prior(xi) for xi in cand])
    live = [i for i in range(n_blocks) if lp_cand[i] > -np.inf]
    evs = dict(zip(live, evaluate_many_safe(target, [cand[i] for i in live], executor)))

    la_fwd = np.full(n_blocks, -np.inf)
    for i in live:
        part = evs[i].parts[i] if evs[i].parts is not None else -np.inf
        if part > -np.inf:
            la_fwd[i] = min(0.0, lp_cand[i] - lp_x + part - cur.parts[i])
    inner = np.array([decide(la_fwd[i]) for i in range(n_blocks)], dtype=bool)

    if not inner.any():
        return KernelOutcome(x.copy(), True, cur, inner, 0.0,
                             _runs(target) - runs0, False, {"stage1": la_fwd})

    x2 = x.copy()
    for i in np.flatnonzero(inner):
        x2[blocks[i]] = proposed[i]
    # accepted blocks whose proposal equals the current value contribute 1
    changed = [i for i in range(n_blocks)
               if inner[i] and not np.array_equal(proposed[i], x[blocks[i]])]
    unchanged = [i for i in range(n_blocks) if not inner[i]]
    if not changed:
        return KernelOutcome(x.copy(), True, cur, inner, 0.0,
                             _runs(target) - runs0, False, {"stage1": la_fwd})

    # points needed for the reverse-move terms
    reverse_pts = {}
    if not separable:
        for i in changed:
            y = x2.copy()
            y[blocks[i]] = x[blocks[i]]
            reverse_pts[i] = y
        for i in unchanged:
            if lp_cand[i] > -np.inf:
                y = x2.copy()
                y[blocks[i]] = proposed[i]
                reverse_pts[i] = y
    keys = list(reverse_pts)
    batch = [x2] + [reverse_pts[i] for i in keys]
    res = evaluate_many_safe(target, batch, executor)
    ev2 = res[0]
    rev_evs = dict(zip(keys, res[1:]))
    lp2 = target.log_prior(x2)

    if ev2.loglik == -np.inf or lp2 == -np.inf:
        decide(-np.inf)
        return KernelOutcome(x.copy(), False, cur, inner, -np.inf,
                             _runs(target) - runs0, False, {"stage1": la_fwd})

    log_r = lp2 + ev2.loglik - lp_x - cur.loglik
    for i in changed:
        b = blocks[i]
        log_r += proposals[i].log_ratio(x[b], proposed[i])
        if separable:
            la_rev = min(0.0, lp_x - lp_cand[i] + cur.parts[i] - evs[i].parts[i])
        else:
            y = reverse_pts[i]
            la_rev = min(0.0, target.log_prior(y) - lp2 + rev_evs[i].parts[i] - ev2.parts[i]) \
                if rev_evs[i].parts is not None else -np.inf
        log_r += la_rev - la_fwd[i]
    for i in unchanged:
        if lp_cand[i] == -np.inf:
            continue
        if la_fwd[i] == 0.0:
            raise SSCalibError(f"block {i} rejected with forward acceptance 1")
        if separable:
            la_rev = la_fwd[i]
        else:
            ev_y = rev_evs[i]
            part = ev_y.parts[i] if ev_y.parts is not None else -np.inf
            la_rev = -np.inf if part == -np.inf else min(
                0.0, target.log_prior(reverse_pts[i]) - lp2 + part - ev2.parts[i])
        log_r += log1mexp(la_rev) - log1mexp(la_fwd[i])

    la_outer = min(0.0, log_r)
    acc = decide(la_outer)
    point = x2 if acc else x.copy()
    return KernelOutcome(point, acc, ev2 if acc else cur, inner, la_outer,
                         _runs(target) - runs0, acc and bool(changed),
                         {"stage1": la_fwd})


def evaluate_many_safe(target, points, executor=None):
    if executor is None or len(points) < 2:
        return [_safe_evaluate(target, p) for p in points]
    return list(executor.map(lambda p: _safe_evaluate(target, p), points))


def mda_step(x, target, blocks, proposals, rng, current=None, executor=None,
             separable=False):
    """One marginal delayed-acceptance iteration.

    Stage 1 runs an independent MH move for each block under its surrogate;
    stage 2 accepts the composite with the exact correction for the
    surrogates (reverse terms evaluated at the required cross points).
    """
    x = np.asarray(x, dtype=float)
    proposed = [p.sample(rng, x[b]) for b, p in zip(blocks, proposals)]
    return mda_transition(x, proposed, target, blocks, proposals, rng_decider(rng),
                          current, executor, separable)


# -- particle delayed acceptance ---------------------------------------------

def pda_transition(rates, proposed, target, proposal, decide, current=None, executor=None):
    """Particle delayed-acceptance transition given per-year proposals.

    Two trajectories are kept: ``M`` follows the rates accepted so far and
    ``Q`` follows the current rates; ``Q`` supplies the reverse-move terms.
    Years whose proposal equals the current value are skipped (factor 1).
    """
    rates = np.asarray(rates, dtype=float)
    proposed = np.asarray(proposed, dtype=float)
    n_t = rates.shape[0]
    runs0 = _runs(target)
    cur = current or target.evaluate(rates)

    m_prev = q_prev = target.initial_state()
    new = rates.copy()
    degenerate = np.array([np.array_equal(proposed[t], rates[t]) for t in range(n_t)])
    la_fwd = np.zeros(n_t)
    la_q_fwd = np.zeros(n_t)
    la_q_back = np.zeros(n_t)
    inner = np.zeros(n_t, dtype=bool)
    try:
        for t in range(n_t):
            if degenerate[t]:
                if executor is None:
                    m_t = target.advance(m_prev, t, rates[t])
                    q_t = target.advance(q_prev, t, rates[t])
                else:
                    m_t, q_t = executor.map(lambda a: target.advance(a, t, rates[t]),
                                            [m_prev, q_prev])
                m_prev, q_prev = m_t, q_t
                continue
            jobs = [(m_prev, proposed[t]), (m_prev, rates[t]),
                    (q_prev, proposed[t]), (q_prev, rates[t])]
            if executor is None:
                m_new, m_t, q_new, q_t = [target.advance(s, t, r) for s, r in jobs]
            else:
                m_new, m_t, q_new, q_t = executor.map(
                    lambda job: target.advance(job[0], t, job[1]), jobs)
            lp_new = target.log_prior_row(proposed[t], t)
            lp_cur = target.log_prior_row(rates[t], t)
            k_m_new = target.log_surrogate(m_new, t)
            k_m = target.log_surrogate(m_t, t)
            k_q_new = target.log_surrogate(q_new, t)
            k_q = target.log_surrogate(q_t, t)
            la_fwd[t] = _log_alpha_ratio(lp_new + k_m_new, lp_cur + k_m)
            la_q_fwd[t] = _log_alpha_ratio(lp_new + k_q_new, lp_cur + k_q)
            la_q_back[t] = _log_alpha_ratio(lp_cur + k_q, lp_new + k_q_new)
            inner[t] = decide(la_fwd[t])
            if inner[t]:
                new[t] = proposed[t]
                m_prev = m_new
            else:
                m_prev = m_t
            q_prev = q_t
    except (TrajectoryError, SSCalibError, FloatingPointError) as exc:
        logger.warning("trajectory failed during PDA sweep, composite rejected: %s", exc)
        return KernelOutcome(rates.copy(), False, cur, inner, -np.inf,
                             _runs(target) - runs0, False, {"error": str(exc)})

    if not inner.any() or np.array_equal(new, rates):
        return KernelOutcome(rates.copy(), True, cur, inner, 0.0,
                             _runs(target) - runs0, False)

    ev2 = _safe_evaluate(target, new)
    lp2 = target.log_prior(new)
    if ev2.loglik == -np.inf or lp2 == -np.inf:
        decide(-np.inf)
        return KernelOutcome(rates.copy(), False, cur, inner, -np.inf,
                             _runs(target) - runs0, False)
    log_r = lp2 + ev2.loglik - target.log_prior(rates) - cur.loglik
    for t in range(n_t):
        if degenerate[t]:
            continue
        if inner[t]:
            log_r += proposal.log_ratio(rates[t], proposed[t])
            log_r += la_q_back[t] - la_fwd[t]
        else:
            if la_fwd[t] == 0.0:
                raise SSCalibError(f"year {t} rejected with forward acceptance 1")
            log_r += log1mexp(la_q_fwd[t]) - log1mexp(la_fwd[t])
    la_outer = min(0.0, log_r)
    acc = decide(la_outer)
    return KernelOutcome(new if acc else rates.copy(), acc, ev2 if acc else cur, inner,
                         la_outer, _runs(target) - runs0, acc)


def _log_alpha_ratio(num, den):
    if num == -np.inf:
        return -np.inf
    if den == -np.inf:
        return 0.0
    return min(0.0, num - den)


def pda_step(rates, target, proposal, rng, current=None, executor=None, subset=None):
    """One particle delayed-acceptance iteration over the rate matrix.

    ``subset`` (an int) perturbs only that many randomly chosen years; the
    rest receive the degenerate proposal.
    """
    rates = np.asarray(rates, dtype=float)
    n_t = rates.shape[0]
    proposed = np.array([proposal.sample(rng, rates[t]) for t in range(n_t)])
    if subset is not None and subset < n_t:
        keep = rng.choice(n_t, size=n_t - subset, replace=False)
        proposed[keep] = rates[keep]
    return pda_transition(rates, proposed, target, proposal, rng_decider(rng),
                          current, executor)


def pda_prefetch(rates, target, proposal, rng, n_transitions, width=8, current=None,
                 executor=None, subset=None):
    """Run ``n_transitions`` PDA transitions, speculating ``width`` at a time.

    Candidates are built concurrently from the current point, each from its
    own seeded generator, and consumed in order. After a move the remaining
    candidates are stale and are dropped; a fresh batch is launched from the
    new point. The resulting chain is exactly ``n_transitions`` PDA steps
    and does not depend on whether an executor is used.
    """
    rates = np.asarray(rates, dtype=float)
    cur = current or target.evaluate(rates)
    outcomes = []
    remaining = n_transitions
    runs0 = _runs(target)
    while remaining > 0:
        batch = min(width, remaining)
        seeds = rng.integers(0, 2 ** 63 - 1, size=batch)

        def candidate(seed, _rates=rates, _cur=cur):
            return pda_step(_rates, target, proposal, np.random.default_rng(seed),
                            _cur, None, subset)

        if executor is None:
            stream = (candidate(s) for s in seeds)
        else:
            futures = [executor.submit(candidate, s) for s in seeds]
            stream = (f.result() for f in futures)
        for out in stream:
            remaining -= 1
            outcomes.append(out)
            if out.moved:
                rates, cur = out.point, out.evaluation
                break
        if executor is not None:
            for f in futures:
                f.cancel()
    return KernelOutcome(rates.copy(), any(o.moved for o in outcomes), cur,
                         np.array([o.accepted for o in outcomes]),
                         n_runs=_runs(target) - runs0,
                         moved=any(o.moved for o in outcomes),
                         info={"transitions": outcomes})


# -- multiple proposals ------------------------------------------------------

def calderhead_probabilities(points, log_posts, proposal, block=None):
    """Stationary index distribution over the ``K + 1`` points.

    ``p(j)`` is proportional to the posterior at point ``j`` times the
    density of generating all other points from it.
    """
    n = len(points)
    lw = np.full(n, -np.inf)
    pts = [np.asarray(p) if block is None else np.asarray(p)[block] for p in points]
    if hasattr(proposal, "pairwise_log_density"):
        L = proposal.pairwise_log_density(pts)
    else:
        L = np.array([[proposal.log_density(pts[k], pts[j]) if k != j else 0.0
                       for k in range(n)] for j in range(n)])
    for j in range(n):
        if log_posts[j] == -np.inf:
            continue
        lw[j] = log_posts[j] + sum(L[j, k] for k in range(n) if k != j)
    if np.all(lw == -np.inf):
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return np.exp(lw - logsumexp(lw))


def index_transition_row(p, i):
    """Metropolised-Gibbs transition row from index ``i`` under weights ``p``.

    Moves to ``j != i`` with probability ``min(p_j/(1-p_i), p_j/(1-p_j))``;
    this reduces to the Metropolis-Hastings rule when there are two points.
    """
    p = np.asarray(p, dtype=float)
    row = np.zeros_like(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(p.size):
            if j == i or p[j] == 0.0:
                continue
            a = p[j] / (1.0 - p[i]) if p[i] < 1.0 else 0.0
            b = p[j] / (1.0 - p[j]) if p[j] < 1.0 else np.inf
            row[j] = min(a, b)
    total = row.sum()
    if total > 1.0:
        row /= total
        total = 1.0
    row[i] = 1.0 - total
    return row


def calderhead_transition(x, proposals_pts, target, proposal, current=None,
                          executor=None, block=None):
    """Deterministic part of the multi-proposal move.

    Returns the transition row over ``[x] + proposals_pts`` plus the
    evaluations, so callers may sample from it or enumerate it.
    """
    x = np.asarray(x, dtype=float)
    cur = current or target.evaluate(x)
    points = [x] + [np.asarray(p, dtype=float) for p in proposals_pts]
    lps = [target.log_prior(p) for p in points]
    live = [j for j in range(1, len(points)) if lps[j] > -np.inf]
    evs = {0: cur}
    evs.update(zip(live, evaluate_many_safe(target, [points[j] for j in live], executor)))
    log_posts = np.array([lps[j] + evs[j].loglik if j in evs else -np.inf
                          for j in range(len(points))])
    p = calderhead_probabilities(points, log_posts, proposal, block)
    return index_transition_row(p, 0), points, evs


def calderhead_step(x, target, proposal, rng, n_proposals, current=None,
                    executor=None, block=None):
    """Draw ``n_proposals`` points from the current one, evaluate them, and
    move to one of the ``K + 1`` points via the index transition."""
    if n_proposals < 1:
        raise ValueError("need at least one proposal")
    x = np.asarray(x, dtype=float)
    runs0 = _runs(target)
    props = []
    for _ in range(n_proposals):
        y = x.copy()
        if block is None:
            y = proposal.sample(rng, x)
        else:
            y[block] = proposal.sample(rng, x[block])
        props.append(y)
    row, points, evs = calderhead_transition(x, props, target, proposal, current,
                                             executor, block)
    j = int(rng.choice(row.size, p=row))
    moved = j != 0 and not np.array_equal(points[j], x)
    return KernelOutcome(points[j].copy(), j != 0, evs[j], log_alpha=float(np.log1p(-row[0]))
                         if row[0] < 1 else -np.inf,
                         n_runs=_runs(target) - runs0, moved=moved,
                         info={"index": j, "row": row})


# -- conjugate variance update -----------------------------------------------

def gibbs_variance_update(residual_ss, n_obs, a, b, frozen, current, rng):
    """Draw variances from their inverse-gamma full conditionals.

    For each unfrozen entry, ``sigma2 ~ IG(a + n/2, b + SS/2)``; frozen
    entries are returned bit-for-bit. One gamma variate is drawn per entry
    regardless of the mask so the random stream does not depend on it.
    """
    residual_ss = np.asarray(residual_ss, dtype=float)
    n_obs = np.asarray(n_obs, dtype=float)
    current = np.asarray(current, dtype=float)
    frozen = np.asarray(frozen, dtype=bool)
    shape = a + 0.5 * n_obs
    rate = b + 0.5 * residual_ss
    draws = rate / rng.gamma(shape)
    return np.where(frozen, current, draws)
