"""Deterministic multi-species size-spectrum process model.

The state holds abundance densities of each fish species on a log-spaced
weight grid plus a background resource spectrum on an extended grid. One
call to :meth:`SpectrumModel.step_year` integrates a year of feeding, growth,
predation, fishing and Beverton-Holt recruitment with a semi-implicit upwind
scheme, accumulating commercial and survey removals as catches.

Units: weights in grams, rates per year, densities per gram per system
volume, catches and SSB in tonnes.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import (
    ClippingLimitError,
    IntegrationBlowupError,
    TrajectoryError,
    ValidationError,
)

logger = logging.getLogger(__name__)

GRAMS_PER_TONNE = 1e6


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WeightGrid:
    """Log-spaced fish weight grid with a resource extension below it.

    ``edges`` bound the fish bins; each bin is represented by its left edge,
    following the usual size-spectrum convention.
    """

    edges: np.ndarray
    resource_extension: int

    def __post_init__(self):
        edges = _frozen(self.edges)
        if edges.ndim != 1 or edges.size < 3:
            raise ValidationError("weight grid needs at least two bins")
        if not np.all(edges > 0) or not np.all(np.diff(edges) > 0):
            raise ValidationError("grid edges must be positive and strictly increasing")
        ratios = edges[1:] / edges[:-1]
        if np.max(np.abs(ratios / ratios[0] - 1.0)) > 1e-12:
            raise ValidationError("grid edges are not log-uniform")
        if self.resource_extension < 0:
            raise ValidationError("resource_extension must be >= 0")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def log_spaced(cls, w_min, w_max, n_bins, resource_decades=4.0):
        ratio = (w_max / w_min) ** (1.0 / n_bins)
        edges = w_min * ratio ** np.arange(n_bins + 1)
        n_ext = int(np.ceil(resource_decades / np.log10(ratio) - 1e-9))
        return cls(edges, n_ext)

    @property
    def n_bins(self):
        return self.edges.size - 1

    @property
    def ratio(self):
        return self.edges[1] / self.edges[0]

    @property
    def w(self):
        return self.edges[:-1]

    @property
    def dw(self):
        return np.diff(self.edges)

    @property
    def full_edges(self):
        k = np.arange(-self.resource_extension, self.n_bins + 1)
        full = self.edges[0] * self.ratio ** k
        # the fish part must coincide exactly with ``edges``
        full[self.resource_extension:] = self.edges
        return full

    @property
    def w_full(self):
        return self.full_edges[:-1]

    @property
    def dw_full(self):
        return np.diff(self.full_edges)

    def bin_of(self, weight):
        """Index of the bin containing ``weight`` (left-closed)."""
        idx = int(np.searchsorted(self.edges, weight * (1 + 1e-12), side="right")) - 1
        return min(max(idx, 0), self.n_bins - 1)


@dataclass(frozen=True)
class SpeciesParams:
    """Fixed life-history traits of one species.

    ``catchability`` and ``survey_catchability`` are per-bin values on the
    model grid; commercial catchability is renormalised to a maximum of 1.
    """

    name: str
    w_egg: float
    w_mat: float
    w_inf: float
    max_intake_coeff: float = 40.0
    intake_exponent: float = 2.0 / 3.0
    search_volume_coeff: float = 1e-9
    search_exponent: float = 0.8
    ppmr_location: float = 100.0
    ppmr_width: float = 2.0
    background_mortality_coeff: float = 0.1
    recruitment_efficiency: float = 0.1
    assimilation_efficiency: float = 0.6
    metabolism_coeff: float = 4.0
    metabolism_exponent: float = 0.7
    maturity_sharpness: float = 10.0
    catchability: np.ndarray | None = None
    survey_catchability: np.ndarray | None = None
    survey_effort_by_year: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fixed_sigma2_c: float | None = None

    def __post_init__(self):
        if not (0 < self.w_egg < self.w_mat < self.w_inf):
            raise ValidationError(f"{self.name}: need 0 < w_egg < w_mat < w_inf")
        positive = ("max_intake_coeff", "intake_exponent", "search_volume_coeff",
                    "search_exponent", "ppmr_location", "ppmr_width",
                    "recruitment_efficiency", "assimilation_efficiency",
                    "maturity_sharpness")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f"{self.name}: {name} must be > 0")
        if self.background_mortality_coeff < 0 or self.metabolism_coeff < 0:
            raise ValidationError(f"{self.name}: mortality/metabolism must be >= 0")
        if self.catchability is not None:
            q = np.asarray(self.catchability, dtype=float)
            if np.any(q < 0) or not np.all(np.isfinite(q)):
                raise ValidationError(f"{self.name}: catchability must be finite and >= 0")
            if q.max() > 0:
                q = q / q.max()
            object.__setattr__(self, "catchability", _frozen(q))
        if self.survey_catchability is not None:
            qs = np.asarray(self.survey_catchability, dtype=float)
            if np.any(qs < 0) or not np.all(np.isfinite(qs)):
                raise ValidationError(f"{self.name}: survey catchability must be >= 0")
            object.__setattr__(self, "survey_catchability", _frozen(qs))
        effort = np.asarray(self.survey_effort_by_year, dtype=float)
        if np.any(effort < 0):
            raise ValidationError(f"{self.name}: survey effort must be >= 0")
        object.__setattr__(self, "survey_effort_by_year", _frozen(effort))

    def maturity(self, w):
        """Smooth maturity ogive in log-weight, 0.5 at ``w_mat``."""
        return 1.0 / (1.0 + (np.asarray(w) / self.w_mat) ** (-self.maturity_sharpness))


@dataclass(frozen=True)
class ResourceParams:
    kappa: float = np.exp(20.0)
    lam: float = 2.05
    regen_rate_coeff: float = 10.0
    regen_exponent: float = 2.0 / 3.0
    w_cutoff: float = 10.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValidationError("kappa must be > 0")
        if not 1.5 < self.lam < 2.5:
            raise ValidationError("resource slope lambda must lie in (1.5, 2.5)")
        if not self.regen_rate_coeff > 0:
            raise ValidationError("regeneration rate must be > 0")


@dataclass(frozen=True)
class ModelConfig:
    n_bins: int = 100
    resource_decades: float = 4.0
    substeps: int = 10
    spin_up_years: int = 300
    stationarity_tol: float = 1e-6
    clip_fraction_limit: float = 1e-3
    initial_fraction: float = 0.1
    spin_up_survey_effort: float = 0.0


@dataclass(frozen=True)
class StaticParams:
    """Static parameters entering the process model."""

    ln_kappa: float
    ln_rmax: np.ndarray
    phi0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ln_kappa", float(self.ln_kappa))
        object.__setattr__(self, "ln_rmax", _frozen(self.ln_rmax))
        object.__setattr__(self, "phi0", _frozen(self.phi0))

    def key(self):
        return (np.float64(self.ln_kappa).tobytes() + self.ln_rmax.tobytes()
                + self.phi0.tobytes())


@dataclass(frozen=True)
class FishingRates:
    phi: np.ndarray

    def __post_init__(self):
        phi = _frozen(self.phi)
        if phi.ndim != 1:
            raise ValidationError("fishing rates must be a vector")
        if not np.all(np.isfinite(phi)) or np.any(phi < 0) or np.any(phi > 1.5):
            raise ValidationError("fishing rates must lie in [0, 1.5]")
        object.__setattr__(self, "phi", phi)


@dataclass(frozen=True)
class ModelState:
    n: np.ndarray
    n_resource: np.ndarray
    year_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n", _frozen(self.n))
        object.__setattr__(self, "n_resource", _frozen(self.n_resource))

    def digest(self):
        h = hashlib.sha256()
        h.update(self.n.tobytes())
        h.update(self.n_resource.tobytes())
        h.update(str(self.year_index).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class CatchRecord:
    commercial: np.ndarray
    survey: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "commercial", _frozen(self.commercial))
        object.__setattr__(self, "survey", _frozen(self.survey))


class SpectrumModel:
    """The process model for a fixed species table, resource and grid.

    Everything that does not depend on the static parameters (the feeding
    kernel, allometric rates, selectivities) is precomputed here, so a model
    instance is immutable and safe to share between threads.
    """

    def __init__(self, species, resource=None, config=None, grid=None, backend=None):
        self.species = tuple(species)
        if not self.species:
            raise ValidationError("at least one species is required")
        names = [sp.name for sp in self.species]
        if len(set(names)) != len(names):
            raise ValidationError("species names must be unique")
        self.resource = resource or ResourceParams()
        self.config = config or ModelConfig()
        if grid is None:
            grid = WeightGrid.log_spaced(
                min(sp.w_egg for sp in self.species),
                max(sp.w_inf for sp in self.species),
                self.config.n_bins, self.config.resource_decades)
        self.grid = grid
        self._advance = kernels.get_advance_year(backend)
        self.backend = backend or kernels.BACKEND
        self._precompute()

    @property
    def n_species(self):
        return len(self.species)

    @property
    def names(self):
        return [sp.name for sp in self.species]

    def _precompute(self):
        g = self.grid
        w = g.w
        w_full, dw_full = g.w_full, g.dw_full
        n_sp, n_bins = self.n_species, g.n_bins
        self.w_full = _frozen(w_full)
        self.dw_full = _frozen(dw_full)

        self.egg_idx = np.empty(n_sp, dtype=np.intp)
        self.end_idx = np.empty(n_sp, dtype=np.intp)
        kern = np.zeros((n_sp, n_bins, w_full.size))
        intake = np.zeros((n_sp, n_bins))
        metab = np.zeros((n_sp, n_bins))
        psi = np.zeros((n_sp, n_bins))
        mort_bg = np.zeros((n_sp, n_bins))
        q_c = np.zeros((n_sp, n_bins))
        q_s = np.zeros((n_sp, n_bins))
        self.maturity = np.zeros((n_sp, n_bins))
        log_ratio = np.log(w[:, None] / w_full[None, :])
        for i, sp in enumerate(self.species):
            lo = g.bin_of(sp.w_egg)
            hi = int(np.searchsorted(g.edges, sp.w_inf, side="left"))
            hi = min(max(hi, lo + 1), n_bins)
            self.egg_idx[i], self.end_idx[i] = lo, hi
            pref = np.exp(-(log_ratio - np.log(sp.ppmr_location)) ** 2
                          / (2.0 * sp.ppmr_width ** 2))
            kern[i] = sp.search_volume_coeff * w[:, None] ** sp.search_exponent * pref
            intake[i] = sp.max_intake_coeff * w ** sp.intake_exponent
            metab[i] = sp.metabolism_coeff * w ** sp.metabolism_exponent
            mat = sp.maturity(w)
            self.maturity[i] = mat
            psi[i] = np.minimum(mat * (w / sp.w_inf) ** (1.0 - sp.intake_exponent), 1.0)
            mort_bg[i] = sp.background_mortality_coeff
            if sp.catchability is not None:
                q_c[i] = self._on_grid(sp.catchability, sp.name)
            if sp.survey_catchability is not None:
                q_s[i] = self._on_grid(sp.survey_catchability, sp.name)
        self.kern = _frozen(kern)
        self.intake_max = _frozen(intake)
        self.metab = _frozen(metab)
        self.psi = _frozen(psi)
        self.assim = _frozen([sp.assimilation_efficiency for sp in self.species])
        self.mort_bg = _frozen(mort_bg)
        self.q_c = _frozen(q_c)
        self.q_s = _frozen(q_s)
        self.maturity = _frozen(self.maturity)
        self.rep_coeff = _frozen([sp.recruitment_efficiency / (2.0 * sp.w_egg)
                                  for sp in self.species])
        self.egg_idx.setflags(write=False)
        self.end_idx.setflags(write=False)
        res = self.resource
        regen = res.regen_rate_coeff * w_full ** (res.regen_exponent - 1.0)
        self.regen = _frozen(np.where(w_full < res.w_cutoff, regen, 0.0))
        self._live = np.zeros((n_sp, n_bins), dtype=bool)
        for i in range(n_sp):
            self._live[i, self.egg_idx[i]:self.end_idx[i]] = True
        self._live.setflags(write=False)

    def _on_grid(self, values, name):
        values = np.asarray(values, dtype=float)
        if values.shape != (self.grid.n_bins,):
            raise ValidationError(
                f"{name}: selectivity has {values.shape} entries, grid has {self.grid.n_bins} bins")
        return values

    def capacity(self, ln_kappa):
        """Resource carrying capacity per bin on the full grid."""
        cap = np.exp(ln_kappa) * self.w_full ** (-self.resource.lam)
        return np.where(self.w_full < self.resource.w_cutoff, cap, 0.0)

    def initial_state(self, static):
        """Power-law initial slope used to start the spin-up."""
        cap = self.capacity(static.ln_kappa)
        w = self.grid.w
        frac = self.config.initial_fraction / self.n_species
        n = np.where(self._live,
                     frac * np.exp(static.ln_kappa) * w[None, :] ** (-self.resource.lam),
                     0.0)
        return ModelState(n, cap, 0)

    def survey_effort(self, year_index):
        """Per-species survey effort in (1-based) year ``year_index``."""
        out = np.zeros(self.n_species)
        for i, sp in enumerate(self.species):
            eff = sp.survey_effort_by_year
            if 1 <= year_index <= eff.size:
                out[i] = eff[year_index - 1]
        return out

    def step_year(self, state, rates, static, survey_effort=None):
        """Advance ``state`` by one year under fishing ``rates``.

        Returns the new state and the catches removed during the year.
        ``survey_effort`` defaults to the effort schedule of the year being
        simulated.
        """
        phi = rates.phi if isinstance(rates, FishingRates) else FishingRates(rates).phi
        if phi.size != self.n_species:
            raise ValidationError(f"expected {self.n_species} fishing rates, got {phi.size}")
        year = state.year_index + 1
        effort = (self.survey_effort(year) if survey_effort is None
                  else np.broadcast_to(np.asarray(survey_effort, float),
                                       (self.n_species,)).copy())
        n = np.array(state.n, dtype=float, order="C")
        n_res = np.array(state.n_resource, dtype=float, order="C")
        catch_c = np.zeros(self.n_species)
        catch_s = np.zeros(self.n_species)
        sub = self.config.substeps
        clipped = self._advance(
            n, n_res, self.kern, self.w_full, self.dw_full,
            self.grid.resource_extension, self.intake_max, self.metab, self.psi,
            self.assim, self.mort_bg, self.q_c, self.q_s, self.egg_idx,
            self.end_idx, self.rep_coeff, np.exp(static.ln_rmax),
            self.regen, self.capacity(static.ln_kappa), np.ascontiguousarray(phi),
            effort, 1.0 / sub, sub, catch_c, catch_s)
        self._check(n, n_res, clipped)
        return (ModelState(n, n_res, year),
                CatchRecord(catch_c / GRAMS_PER_TONNE, catch_s / GRAMS_PER_TONNE))

    def _check(self, n, n_res, clipped):
        if not np.all(np.isfinite(n)):
            i, k = np.argwhere(~np.isfinite(n))[0]
            raise IntegrationBlowupError(self.species[i].name, int(k))
        if not np.all(np.isfinite(n_res)):
            k = int(np.argwhere(~np.isfinite(n_res))[0][0])
            raise IntegrationBlowupError("resource", k)
        if clipped:
            updates = self._live.sum() * self.config.substeps
            logger.warning("clipped %d negative density updates", clipped)
            if clipped > self.config.clip_fraction_limit * updates:
                raise ClippingLimitError(
                    f"{clipped} of {updates} bin updates clipped in one year")

    def spin_up(self, rates0, static, years=None):
        """Project from the initial slope under constant ``rates0``.

        Returns ``(state, metric)`` where ``metric`` is the largest relative
        change in per-species SSB over the final year. The returned state has
        year index 0.
        """
        years = self.config.spin_up_years if years is None else int(years)
        if years < 1:
            raise ValidationError("spin-up needs at least one year")
        rates0 = rates0 if isinstance(rates0, FishingRates) else FishingRates(rates0)
        effort = self.config.spin_up_survey_effort
        state = self.initial_state(static)
        prev = state
        for _ in range(years):
            prev = state
            state, _ = self.step_year(replace(state, year_index=0), rates0, static,
                                      survey_effort=effort)
        state = replace(state, year_index=0)
        return state, stationarity_metric(self.ssb(prev), self.ssb(state))

    def run_trajectory(self, state0, phi_matrix, static):
        """Apply ``step_year`` once per row of ``phi_matrix``.

        Starting from any cached intermediate state resumes the trajectory:
        the year index carried by ``state0`` selects the survey effort.
        """
        phi_matrix = np.asarray(phi_matrix, dtype=float)
        if phi_matrix.size == 0:
            return [], []
        phi_matrix = phi_matrix.reshape(-1, self.n_species)
        states, catches = [], []
        state = state0
        for row in phi_matrix:
            try:
                state, rec = self.step_year(state, row, static)
            except (IntegrationBlowupError, ClippingLimitError) as exc:
                raise TrajectoryError(state.year_index + 1, exc) from exc
            states.append(state)
            catches.append(rec)
        return states, catches

    def ssb(self, state):
        """Spawning stock biomass per species in tonnes."""
        n = np.asarray(state.n)
        return (n * self.maturity * (self.grid.w * self.grid.dw)[None, :]).sum(axis=1) \
            / GRAMS_PER_TONNE

    def biomass(self, state):
        n = np.asarray(state.n)
        return (n * (self.grid.w * self.grid.dw)[None, :]).sum(axis=1) / GRAMS_PER_TONNE


def stationarity_metric(ssb_prev, ssb_now):
    ssb_prev = np.asarray(ssb_prev, float)
    ssb_now = np.asarray(ssb_now, float)
    scale = np.maximum(np.abs(ssb_now), np.abs(ssb_prev))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, np.abs(ssb_now - ssb_prev) / scale, 0.0)
    return float(rel.max()) if rel.size else 0.0


def default_search_volume(max_intake, kappa, lam, ppmr_location, ppmr_width,
                          feeding_level=0.6):
    """Search-volume coefficient giving ``feeding_level`` on a pure power-law
    prey spectrum of coefficient ``kappa`` and slope ``lam``."""
    return (feeding_level * max_intake * ppmr_location ** (lam - 2.0)
            / ((1.0 - feeding_level) * np.sqrt(2.0 * np.pi) * kappa * ppmr_width))


def sigmoid_selectivity(w, w50, sharpness=6.0):
    """Logistic selectivity in log-weight, normalised to a maximum of 1."""
    s = 1.0 / (1.0 + np.exp(-sharpness * (np.log(w) - np.log(w50))))
    return s / s.max() if s.max() > 0 else s
