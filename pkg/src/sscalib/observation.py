"""Observation model, priors and parameter layout.

Commercial catches ``w`` and survey catches ``z`` are log-normal around the
modelled catches ``c`` and ``s``:

    ln w[t, i] ~ N(ln c[t, i], sigma2_c[i])
    ln z[t, i] ~ N(ln s[t, i], sigma2_s[i])      (survey years only)

Year indices in this module are 0-based rows of the observation matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import ValidationError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ObservationSet:
    """Catch matrices (years x species) with availability masks.

    ``first_survey`` is the first row in which survey observations enter the
    likelihood.
    """

    w: np.ndarray
    z: np.ndarray
    w_mask: np.ndarray
    z_mask: np.ndarray
    years: tuple
    species: tuple
    first_survey: int = 0

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        z = np.array(self.z, dtype=float)
        wm = np.array(self.w_mask, dtype=bool)
        zm = np.array(self.z_mask, dtype=bool)
        shape = (len(self.years), len(self.species))
        for name, arr in (("w", w), ("z", z), ("w_mask", wm), ("z_mask", zm)):
            if arr.shape != shape:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
        if np.any(~(w[wm] > 0)) or np.any(~(z[zm] > 0)):
            raise ValidationError("observed catches must be strictly positive")
        if not 0 <= self.first_survey <= shape[0]:
            raise ValidationError("first_survey outside the year range")
        zm[: self.first_survey] = False
        for name, arr in (("w", w), ("z", z), ("w_mask", wm), ("z_mask", zm)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        object.__setattr__(self, "species", tuple(self.species))

    @property
    def n_years(self):
        return len(self.years)

    @property
    def n_species(self):
        return len(self.species)

    def n_obs(self):
        """Counts of present commercial and survey entries per species."""
        return self.w_mask.sum(axis=0), self.z_mask.sum(axis=0)


@dataclass(frozen=True)
class VarianceParams:
    sigma2_c: np.ndarray
    sigma2_s: np.ndarray
    fixed_c: np.ndarray = None

    def __post_init__(self):
        c = np.array(self.sigma2_c, dtype=float)
        s = np.array(self.sigma2_s, dtype=float)
        fixed = (np.zeros(c.shape, bool) if self.fixed_c is None
                 else np.array(self.fixed_c, dtype=bool))
        if c.shape != s.shape or fixed.shape != c.shape:
            raise ValidationError("variance vectors must share one length")
        if np.any(~(c > 0)) or np.any(~(s > 0)):
            raise ValidationError("variances must be > 0")
        for name, arr in (("sigma2_c", c), ("sigma2_s", s), ("fixed_c", fixed)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors on every uncertain quantity.

    Uniform priors are closed intervals; variances are inverse-gamma with
    shape ``a`` and scale ``b``.
    """

    ln_rmax: tuple = (0.0, 50.0)
    ln_kappa: tuple = (0.0, 40.0)
    phi0: tuple = (0.0, 1.5)
    phi: tuple = (0.0, 1.5)
    sigma2_s: tuple = (2.0, 2.0)
    sigma2_c: tuple = (0.1, 0.1)

    @staticmethod
    def log_uniform(x, bounds):
        lo, hi = bounds
        x = np.asarray(x, dtype=float)
        if not np.all((x >= lo) & (x <= hi)):
            return -np.inf
        return -x.size * np.log(hi - lo)

    @staticmethod
    def log_inv_gamma(x, params):
        a, b = params
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            return 0.0
        if not np.all(x > 0):
            return -np.inf
        return float(np.sum(a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x))


def inv_gamma_logpdf(x, a, b):
    """Log density of the inverse-gamma(a, b) distribution at ``x``."""
    return PriorSpec.log_inv_gamma(np.atleast_1d(x), (a, b))


@dataclass(frozen=True)
class ParameterVector:
    ln_kappa: float
    ln_rmax: np.ndarray
    phi0: np.ndarray
    phi: np.ndarray
    variances: VarianceParams

    def __post_init__(self):
        object.__setattr__(self, "ln_kappa", float(self.ln_kappa))
        for name in ("ln_rmax", "phi0", "phi"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def log_prior(pv, prior=None):
    """Sum of prior log densities; ``-inf`` outside any support.

    Frozen commercial variances are constants and contribute nothing.
    """
    prior = prior or PriorSpec()
    var = pv.variances
    total = (prior.log_uniform(pv.ln_kappa, prior.ln_kappa)
             + prior.log_uniform(pv.ln_rmax, prior.ln_rmax)
             + prior.log_uniform(pv.phi0, prior.phi0)
             + prior.log_uniform(pv.phi, prior.phi))
    if not np.isfinite(total):
        return -np.inf
    total += prior.log_inv_gamma(var.sigma2_s, prior.sigma2_s)
    total += prior.log_inv_gamma(var.sigma2_c[~var.fixed_c], prior.sigma2_c)
    return float(total)


@dataclass
class ParameterLayout:
    """Mapping between :class:`ParameterVector` and a flat float vector.

    Order: ``ln_kappa``, ``ln_rmax`` (species), ``phi0`` (species), ``phi``
    (year-major, species within year), ``sigma2_c``, ``sigma2_s``.
    """

    species: tuple
    years: tuple
    fixed_c: np.ndarray = field(default=None)

    def __post_init__(self):
        self.species = tuple(self.species)
        self.years = tuple(int(y) for y in self.years)
        S, T = len(self.species), len(self.years)
        if self.fixed_c is None:
            self.fixed_c = np.zeros(S, dtype=bool)
        self.fixed_c = np.asarray(self.fixed_c, dtype=bool)
        self.ln_kappa = slice(0, 1)
        self.ln_rmax = slice(1, 1 + S)
        self.phi0 = slice(1 + S, 1 + 2 * S)
        self.phi = slice(1 + 2 * S, 1 + 2 * S + T * S)
        self.sigma2_c = slice(self.phi.stop, self.phi.stop + S)
        self.sigma2_s = slice(self.sigma2_c.stop, self.sigma2_c.stop + S)
        self.size = self.sigma2_s.stop

    @property
    def n_species(self):
        return len(self.species)

    @property
    def n_years(self):
        return len(self.years)

    def names(self):
        sp, yr = self.species, self.years
        return (["ln_kappa"]
                + [f"ln_rmax_{s}" for s in sp]
                + [f"phi0_{s}" for s in sp]
                + [f"phi_{y}_{s}" for y in yr for s in sp]
                + [f"sigma2_c_{s}" for s in sp]
                + [f"sigma2_s_{s}" for s in sp])

    def to_vector(self, pv):
        x = np.empty(self.size)
        x[self.ln_kappa] = pv.ln_kappa
        x[self.ln_rmax] = pv.ln_rmax
        x[self.phi0] = pv.phi0
        x[self.phi] = np.asarray(pv.phi).reshape(-1)
        x[self.sigma2_c] = pv.variances.sigma2_c
        x[self.sigma2_s] = pv.variances.sigma2_s
        return x

    def from_vector(self, x):
        x = np.asarray(x, dtype=float)
        return ParameterVector(
            ln_kappa=x[0],
            ln_rmax=x[self.ln_rmax],
            phi0=x[self.phi0],
            phi=x[self.phi].reshape(self.n_years, self.n_species),
            variances=VarianceParams(x[self.sigma2_c], x[self.sigma2_s], self.fixed_c),
        )

    def static_indices(self):
        return np.r_[0, np.arange(self.ln_rmax.start, self.phi0.stop)]

    def species_block(self, i):
        """Indices of ``{ln_rmax_i, phi0_i}``."""
        return np.array([self.ln_rmax.start + i, self.phi0.start + i])

    def year_block(self, t):
        start = self.phi.start + t * self.n_species
        return np.arange(start, start + self.n_species)

    def phi_matrix(self, x):
        return np.asarray(x)[self.phi].reshape(self.n_years, self.n_species)


def catch_arrays(catches):
    """Stack a list of catch records into (years x species) arrays."""
    if len(catches) == 0:
        return np.zeros((0, 0)), np.zeros((0, 0))
    if isinstance(catches, tuple) and len(catches) == 2 and np.ndim(catches[0]) == 2:
        return np.asarray(catches[0], float), np.asarray(catches[1], float)
    c = np.array([rec.commercial for rec in catches], dtype=float)
    s = np.array([rec.survey for rec in catches], dtype=float)
    return c, s


def _normal_terms(obs_vals, model_vals, var, mask):
    """Elementwise log N(ln obs | ln model, var); masked entries give 0.

    Returns (terms, infeasible) where infeasible marks observed entries with
    a non-positive model value.
    """
    infeasible = mask & ~(model_vals > 0)
    terms = np.zeros(mask.shape)
    ok = mask & ~infeasible
    var_b = np.broadcast_to(var, mask.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.log(obs_vals) - np.log(model_vals)
        terms[ok] = -0.5 * (LOG_2PI + np.log(var_b[ok]) + resid[ok] ** 2 / var_b[ok])
    terms[infeasible] = -np.inf
    return terms, infeasible


def _record(diagnostics, infeasible_c, infeasible_s):
    if diagnostics is None:
        return
    bad = [(int(t), int(i), "commercial") for t, i in np.argwhere(infeasible_c)]
    bad += [(int(t), int(i), "survey") for t, i in np.argwhere(infeasible_s)]
    diagnostics["infeasible"] = bad


def log_likelihood_full(catches, obs, var, diagnostics=None):
    """Log of the full catch likelihood over all years and species.

    A non-positive model catch where an observation exists gives ``-inf``;
    pass a dict as ``diagnostics`` to receive the offending entries.
    """
    c, s = catch_arrays(catches)
    if c.shape != obs.w.shape:
        raise ValidationError(f"model catches {c.shape} vs observations {obs.w.shape}")
    tc, bad_c = _normal_terms(obs.w, c, var.sigma2_c[None, :], obs.w_mask)
    tz, bad_s = _normal_terms(obs.z, s, var.sigma2_s[None, :], obs.z_mask)
    _record(diagnostics, bad_c, bad_s)
    if bad_c.any() or bad_s.any():
        return -np.inf
    return float(tc.sum() + tz.sum())


def log_likelihood_species(i, catches, obs, var, diagnostics=None):
    """Likelihood factor of species ``i`` over every year."""
    c, s = catch_arrays(catches)
    tc, bad_c = _normal_terms(obs.w[:, i], c[:, i], var.sigma2_c[i], obs.w_mask[:, i])
    tz, bad_s = _normal_terms(obs.z[:, i], s[:, i], var.sigma2_s[i], obs.z_mask[:, i])
    _record(diagnostics, bad_c[:, None], bad_s[:, None])
    if bad_c.any() or bad_s.any():
        return -np.inf
    return float(tc.sum() + tz.sum())


def log_likelihood_year(t, catches, obs, var, diagnostics=None):
    """Likelihood factor of year row ``t``; survey terms only from
    ``obs.first_survey`` on."""
    c, s = catch_arrays(catches)
    return year_term(t, c[t], s[t], obs, var, diagnostics)


def year_term(t, c_t, s_t, obs, var, diagnostics=None):
    """Year-``t`` likelihood factor from that year's catches alone."""
    tc, bad_c = _normal_terms(obs.w[t], np.asarray(c_t, float), var.sigma2_c, obs.w_mask[t])
    total = tc.sum()
    bad_s = np.zeros_like(bad_c)
    if t >= obs.first_survey:
        tz, bad_s = _normal_terms(obs.z[t], np.asarray(s_t, float), var.sigma2_s, obs.z_mask[t])
        total += tz.sum()
    _record(diagnostics, bad_c[None, :], bad_s[None, :])
    if bad_c.any() or bad_s.any():
        return -np.inf
    return float(total)


def species_terms(catches, obs, var):
    """Vector of per-species likelihood factors (one pass over the data)."""
    c, s = catch_arrays(catches)
    tc, _ = _normal_terms(obs.w, c, var.sigma2_c[None, :], obs.w_mask)
    tz, _ = _normal_terms(obs.z, s, var.sigma2_s[None, :], obs.z_mask)
    return tc.sum(axis=0) + tz.sum(axis=0)


def residual_sums(catches, obs):
    """Per-species sums of squared log residuals and observation counts.

    Returns ``(ss_c, n_c, ss_s, n_s)``; infeasible entries give ``inf``.
    """
    c, s = catch_arrays(catches)
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = np.where(obs.w_mask, np.log(np.where(obs.w_mask, obs.w, 1.0)) - np.log(c), 0.0)
        rs = np.where(obs.z_mask, np.log(np.where(obs.z_mask, obs.z, 1.0)) - np.log(s), 0.0)
    ss_c = np.where(obs.w_mask, rc ** 2, 0.0).sum(axis=0)
    ss_s = np.where(obs.z_mask, rs ** 2, 0.0).sum(axis=0)
    n_c, n_s = obs.n_obs()
    return ss_c, n_c, ss_s, n_s
