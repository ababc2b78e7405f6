"""Posterior summaries, effective sample size and residual checks.

Quantiles interpolate linearly between order statistics (the ``linear``
rule: the ``p`` quantile of ``n`` sorted values sits at position
``p (n - 1)``). ESS uses Geyer's initial monotone sequence estimator.
Outputs are tidy tables for an external plotting tool.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .fileio import write_table

logger = logging.getLogger(__name__)

QUANTILES = (0.1, 0.5, 0.9)


def quantiles(values, probs=QUANTILES, axis=0):
    return np.quantile(np.asarray(values, float), probs, axis=axis, method="linear")


def autocovariance(x):
    """Biased autocovariance at every lag, via FFT."""
    x = np.asarray(x, float)
    n = x.size
    d = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, m)
    return np.fft.irfft(f * np.conj(f), m)[:n] / n


def ess(x):
    """Effective sample size; ``nan`` for a constant chain.

    Sums of adjacent autocovariance pairs are truncated at the first
    non-positive pair and forced to be non-increasing.
    """
    x = np.asarray(x, float)
    n = x.size
    if n < 2:
        return float("nan")
    gamma = autocovariance(x)
    if not gamma[0] > 0:
        return float("nan")
    n_pairs = n // 2
    pairs = gamma[0:2 * n_pairs:2] + gamma[1:2 * n_pairs:2]
    total = 0.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        total += g
        prev = g
    tau = -1.0 + 2.0 * total / gamma[0]
    tau = max(tau, 1.0 / np.log10(max(n, 10)))
    return float(n / tau)


def lag_autocorrelation(x, lag=1):
    """Sample autocorrelation at ``lag``; ``nan`` if undefined."""
    x = np.asarray(x, float)
    if x.size <= lag or x.size < 2:
        return float("nan")
    d = x - x.mean()
    den = np.dot(d, d)
    if den == 0:
        return float("nan")
    return float(np.dot(d[:-lag], d[lag:]) / den)


def parameter_table(samples, names):
    """Per-column median, p10, p90 and ESS as a JSON-friendly dict."""
    samples = np.asarray(samples, float)
    if samples.shape[0] < 2:
        raise ValidationError("need at least 2 samples to summarise")
    q = quantiles(samples)
    out = {}
    for j, name in enumerate(names):
        e = ess(samples[:, j])
        out[name] = {"p10": float(q[0, j]), "median": float(q[1, j]), "p90": float(q[2, j]),
                     "ess": None if np.isnan(e) else e, "degenerate": bool(np.isnan(e))}
    return out


@dataclass
class PosteriorSummary:
    names: list
    p10: np.ndarray
    median: np.ndarray
    p90: np.ndarray
    ess: np.ndarray
    n_samples: int
    trajectories: dict = field(default_factory=dict)

    def table(self):
        return [[n, a, b, c, (None if np.isnan(e) else e)]
                for n, a, b, c, e in zip(self.names, self.p10, self.median, self.p90, self.ess)]

    def write(self, directory):
        """Write ``parameters.csv`` and ``trajectories.csv``; return paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"parameters": directory / "parameters.csv"}
        write_table(paths["parameters"], ["parameter", "p10", "median", "p90", "ess"],
                    self.table())
        if self.trajectories:
            rows = []
            for (quantity, year, species), (lo, mid, hi) in sorted(self.trajectories.items()):
                rows.append([quantity, year, species, lo, mid, hi])
            paths["trajectories"] = directory / "trajectories.csv"
            write_table(paths["trajectories"],
                        ["quantity", "year", "species", "p10", "median", "p90"], rows)
        return paths


def summarize(samples, names, problem=None, max_trajectories=200):
    """Quantiles and ESS per parameter, plus trajectory quantiles.

    With a ``problem``, commercial catch, survey catch and SSB trajectories
    are recomputed for up to ``max_trajectories`` evenly spaced samples.
    """
    samples = np.asarray(samples, float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValidationError("need at least 2 post-burn-in samples")
    q = quantiles(samples)
    e = np.array([ess(samples[:, j]) for j in range(samples.shape[1])])
    summary = PosteriorSummary(list(names), q[0], q[1], q[2], e, samples.shape[0])
    if problem is not None:
        summary.trajectories = trajectory_quantiles(problem, samples, max_trajectories)
    return summary


def _subsample(n, k):
    if k is None or k >= n:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, k).round().astype(int))


def trajectory_quantiles(problem, samples, max_trajectories=200):
    layout = problem.layout
    idx = _subsample(samples.shape[0], max_trajectories)
    cc, ss, bb = [], [], []
    for k in idx:
        states, (c, s) = problem.trajectory(samples[k, : layout.size])
        cc.append(c)
        ss.append(s)
        bb.append(np.array([problem.model.ssb(st) for st in states[1:]]))
    out = {}
    for quantity, arr in (("commercial", cc), ("survey", ss), ("ssb", bb)):
        qs = quantiles(np.array(arr))
        for t, year in enumerate(layout.years):
            for i, sp in enumerate(layout.species):
                out[(quantity, year, sp)] = tuple(float(v) for v in qs[:, t, i])
    return out


# -- residuals ---------------------------------------------------------------

@dataclass
class ResidualReport:
    rows: list            # (year, species, channel, standardized residual)
    autocorrelation: list  # (species, channel, n, rho or nan, flag or None)

    def flagged(self):
        return [r for r in self.autocorrelation if r[4]]

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        p1 = directory / "residuals.csv"
        p2 = directory / "residual_autocorrelation.csv"
        write_table(p1, ["year", "species", "channel", "residual"], self.rows)
        write_table(p2, ["species", "channel", "n", "lag1", "flag"],
                    [[s, c, n, None if np.isnan(r) else r,
                      "missing" if f is None else ("nonwhite" if f else "ok")]
                     for s, c, n, r, f in self.autocorrelation])
        return {"residuals": p1, "autocorrelation": p2}


def standardized_residuals(obs, catches, sigma2_c, sigma2_s):
    """Matrices ``(ln obs - ln model) / sigma`` with ``nan`` where masked."""
    c, s = catches
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = (np.log(obs.w) - np.log(c)) / np.sqrt(sigma2_c)[None, :]
        rs = (np.log(obs.z) - np.log(s)) / np.sqrt(sigma2_s)[None, :]
    return np.where(obs.w_mask, rc, np.nan), np.where(obs.z_mask, rs, np.nan)


def whiteness(resid, species, channel):
    """Lag-1 autocorrelation over a species' present residuals.

    The flag is ``None`` (missing) with fewer than two residuals, otherwise
    ``|rho| > 2 / sqrt(n)``.
    """
    out = []
    for i, sp in enumerate(species):
        r = resid[:, i]
        r = r[~np.isnan(r)]
        n = r.size
        rho = lag_autocorrelation(r) if n >= 2 else float("nan")
        flag = None if np.isnan(rho) else bool(abs(rho) > 2.0 / np.sqrt(n))
        out.append((sp, channel, n, rho, flag))
    return out


def residual_check(problem, samples):
    """Residuals at the posterior-median trajectory.

    The model is run once at the sample median of every parameter; residuals
    are standardised by the median variances.
    """
    samples = np.atleast_2d(np.asarray(samples, float))
    layout = problem.layout
    med = np.median(samples[:, : layout.size], axis=0)
    catches = problem.catches(med)
    return residual_report(problem.obs, catches, med[layout.sigma2_c], med[layout.sigma2_s])


def residual_report(obs, catches, sigma2_c, sigma2_s):
    rc, rs = standardized_residuals(obs, catches, np.asarray(sigma2_c), np.asarray(sigma2_s))
    rows = []
    for t, year in enumerate(obs.years):
        for i, sp in enumerate(obs.species):
            if obs.w_mask[t, i]:
                rows.append([year, sp, "commercial", float(rc[t, i])])
            if obs.z_mask[t, i]:
                rows.append([year, sp, "survey", float(rs[t, i])])
    auto = whiteness(rc, obs.species, "commercial") + whiteness(rs, obs.species, "survey")
    return ResidualReport(rows, auto)


def write_summary_json(path, summary):
    data = {"n_samples": summary.n_samples,
            "parameters": {n: {"p10": float(a), "median": float(b), "p90": float(c),
                               "ess": None if np.isnan(e) else float(e)}
                           for n, a, b, c, e in zip(summary.names, summary.p10, summary.median,
                                                    summary.p90, summary.ess)}}
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")
