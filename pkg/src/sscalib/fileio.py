"""File formats, configuration and schema validation.

Tables are comma-separated text with a header row. Numbers are parsed with
``float`` (``.`` decimal separator regardless of locale) and written with
``repr`` so every value round-trips exactly.

Species table columns: ``name``, ``w_egg``, ``w_mat``, ``w_inf`` and
optionally any other :class:`~sscalib.spectrum.SpeciesParams` trait plus
``fixed_sigma2_c`` (blank when the commercial variance is sampled).

Selectivity table: ``species,weight,catchability,survey_catchability``;
values are interpolated in log-weight onto the model grid.

Survey effort: ``year,species,effort``.

Observations: ``year,species,channel,value`` with channel ``commercial`` or
``survey``; missing rows are masked.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ValidationError
from .observation import ObservationSet, PriorSpec
from .spectrum import (
    ModelConfig,
    ResourceParams,
    SpeciesParams,
    SpectrumModel,
    WeightGrid,
)

SPECIES_FLOAT_FIELDS = tuple(
    f.name for f in dataclasses.fields(SpeciesParams)
    if f.name not in ("name", "catchability", "survey_catchability",
                      "survey_effort_by_year", "fixed_sigma2_c"))
CHANNELS = ("commercial", "survey")


def _read_rows(path, required):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in required if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing columns {missing}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            rows.append((lineno, {k.strip(): (v or "").strip() for k, v in row.items()
                                  if k is not None}))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows


def _num(value, path, lineno, column):
    try:
        return float(value)
    except ValueError:
        raise ValidationError(f"{path}:{lineno}: {column}={value!r} is not a number") from None


def write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


# -- species and selectivity -------------------------------------------------

def read_species_table(path):
    """Species rows as dicts of traits (selectivity not yet attached)."""
    rows = _read_rows(path, ("name", "w_egg", "w_mat", "w_inf"))
    out, seen = [], set()
    for lineno, row in rows:
        name = row["name"]
        if not name or "," in name or " " in name:
            raise ValidationError(f"{path}:{lineno}: invalid species name {name!r}")
        if name in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate species {name!r}")
        seen.add(name)
        traits = {"name": name}
        for col in SPECIES_FLOAT_FIELDS:
            if row.get(col, "") != "":
                traits[col] = _num(row[col], path, lineno, col)
        fixed = row.get("fixed_sigma2_c", "")
        traits["fixed_sigma2_c"] = _num(fixed, path, lineno, "fixed_sigma2_c") if fixed else None
        out.append(traits)
    return out


def write_species_table(path, species_rows):
    cols = ["name"] + list(SPECIES_FLOAT_FIELDS) + ["fixed_sigma2_c"]
    write_table(path, cols, [[r.get(c) for c in cols] for r in species_rows])


def read_selectivity(path, names):
    """Per-species ``(log_weights, q, q_survey)`` tables."""
    rows = _read_rows(path, ("species", "weight", "catchability", "survey_catchability"))
    tables = {n: [] for n in names}
    for lineno, row in rows:
        sp = row["species"]
        if sp not in tables:
            raise ValidationError(f"{path}:{lineno}: unknown species {sp!r}")
        w = _num(row["weight"], path, lineno, "weight")
        q = _num(row["catchability"], path, lineno, "catchability")
        qs = _num(row["survey_catchability"], path, lineno, "survey_catchability")
        if w <= 0 or q < 0 or qs < 0:
            raise ValidationError(f"{path}:{lineno}: weights must be > 0, catchabilities >= 0")
        tables[sp].append((w, q, qs))
    out = {}
    for sp, entries in tables.items():
        if not entries:
            continue
        arr = np.array(sorted(entries))
        out[sp] = (np.log(arr[:, 0]), arr[:, 1], arr[:, 2])
    return out


def selectivity_on_grid(table, grid):
    logw, q, qs = table
    lw = np.log(grid.w)
    return np.interp(lw, logw, q), np.interp(lw, logw, qs)


def read_survey_effort(path, names, years):
    rows = _read_rows(path, ("year", "species", "effort"))
    idx = {y: k for k, y in enumerate(years)}
    effort = {n: np.zeros(len(years)) for n in names}
    for lineno, row in rows:
        sp = row["species"]
        if sp not in effort:
            raise ValidationError(f"{path}:{lineno}: unknown species {sp!r}")
        year = int(_num(row["year"], path, lineno, "year"))
        if year not in idx:
            raise ValidationError(f"{path}:{lineno}: year {year} outside the model years")
        val = _num(row["effort"], path, lineno, "effort")
        if val < 0:
            raise ValidationError(f"{path}:{lineno}: negative effort")
        effort[sp][idx[year]] = val
    return effort


# -- observations ------------------------------------------------------------

def load_observations(path, species, years, first_survey_year):
    """Parse an observation file into an :class:`ObservationSet`.

    Zero or negative values, unknown species, duplicate rows and survey rows
    before ``first_survey_year`` are hard errors naming the offending rows.
    """
    rows = _read_rows(path, ("year", "species", "channel", "value"))
    species = list(species)
    years = [int(y) for y in years]
    s_idx = {s: k for k, s in enumerate(species)}
    y_idx = {y: k for k, y in enumerate(years)}
    shape = (len(years), len(species))
    mats = {ch: np.ones(shape) for ch in CHANNELS}
    masks = {ch: np.zeros(shape, dtype=bool) for ch in CHANNELS}
    seen = {}
    errors = []
    early = []
    for lineno, row in rows:
        sp, ch = row["species"], row["channel"]
        if sp not in s_idx:
            errors.append(f"line {lineno}: unknown species {sp!r}")
            continue
        if ch not in CHANNELS:
            errors.append(f"line {lineno}: channel must be one of {CHANNELS}")
            continue
        year = int(_num(row["year"], path, lineno, "year"))
        if year not in y_idx:
            errors.append(f"line {lineno}: year {year} outside {years[0]}-{years[-1]}")
            continue
        val = _num(row["value"], path, lineno, "value")
        if not val > 0:
            errors.append(f"line {lineno}: value {val} must be > 0 (mask zero catches)")
            continue
        key = (year, sp, ch)
        if key in seen:
            errors.append(f"line {lineno}: duplicate of line {seen[key]} {key}")
            continue
        seen[key] = lineno
        if ch == "survey" and year < first_survey_year:
            early.append(lineno)
            continue
        t, i = y_idx[year], s_idx[sp]
        mats[ch][t, i] = val
        masks[ch][t, i] = True
    if early:
        errors.append(f"survey rows before {first_survey_year} at lines {early}")
    if errors:
        raise ValidationError(f"{path}: " + "; ".join(errors))
    first = sum(1 for y in years if y < first_survey_year)
    return ObservationSet(mats["commercial"], mats["survey"], masks["commercial"],
                          masks["survey"], tuple(years), tuple(species), first)


def write_observations(path, obs):
    rows = []
    for t, year in enumerate(obs.years):
        for i, sp in enumerate(obs.species):
            if obs.w_mask[t, i]:
                rows.append([year, sp, "commercial", float(obs.w[t, i])])
            if obs.z_mask[t, i]:
                rows.append([year, sp, "survey", float(obs.z[t, i])])
    write_table(path, ["year", "species", "channel", "value"], rows)


# -- run configuration -------------------------------------------------------

@dataclass
class YearsConfig:
    first: int = 1991
    n: int = 24
    first_survey: int = 1997

    @property
    def years(self):
        return tuple(range(self.first, self.first + self.n))


@dataclass
class SamplerConfig:
    pda_transitions: int = 8
    prefetch_width: int = 8
    pda_subset: int | None = None
    calderhead_proposals: int = 4
    mda_separable: bool = False
    random_order: bool = False
    mda_scale: float = 0.5
    phi0_scale: float = 0.3
    pda_scale: float = 0.05
    calderhead_scale: float = 0.05
    pilot_iterations: int = 0
    pilot_rounds: int = 4


@dataclass
class HistoryMatchConfig:
    waves: int = 2
    points_per_wave: int = 200
    threshold: float = 3.0
    discrepancy_c: float | None = None
    discrepancy_s: float | None = None
    relax_factor: float = 1.5

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValidationError("history-matching threshold must be > 0")
        if self.points_per_wave < 10:
            raise ValidationError("history matching needs >= 10 points per wave")


@dataclass
class RunSection:
    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 1
    seed: int = 1
    checkpoint_every: int = 500
    start: str | None = None
    history_match: bool = True


@dataclass
class RunConfig:
    """Everything a fit needs; relative paths resolve against ``base_dir``."""

    species: str = "species.csv"
    selectivity: str = "selectivity.csv"
    survey_effort: str = "survey_effort.csv"
    observations: str = "observations.csv"
    years: YearsConfig = field(default_factory=YearsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    resource: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    history_match: HistoryMatchConfig = field(default_factory=HistoryMatchConfig)
    run: RunSection = field(default_factory=RunSection)
    output: str = "output"
    base_dir: str = "."

    _SECTIONS = {"years": YearsConfig, "model": ModelConfig, "sampler": SamplerConfig,
                 "history_match": HistoryMatchConfig, "run": RunSection}

    @classmethod
    def from_dict(cls, data, base_dir="."):
        data = dict(data or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            section = cls._SECTIONS.get(key)
            if section is not None:
                value = dict(value or {})
                allowed = {f.name for f in dataclasses.fields(section)}
                bad = set(value) - allowed
                if bad:
                    raise ValidationError(f"unknown keys in [{key}]: {sorted(bad)}")
                kwargs[key] = section(**value)
            else:
                kwargs[key] = value
        kwargs.setdefault("base_dir", str(base_dir))
        return cls(**kwargs)

    def to_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "base_dir":
                continue
            value = getattr(self, f.name)
            out[f.name] = dataclasses.asdict(value) if dataclasses.is_dataclass(value) else value
        return out

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def path(self, name):
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def prior_spec(self):
        return PriorSpec(**{k: tuple(v) for k, v in self.prior.items()})

    def resource_params(self):
        return ResourceParams(**self.resource)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: config file not found")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: malformed config: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a mapping")
    return RunConfig.from_dict(data, base_dir=path.parent)


def check_inputs(cfg, need_observations=True):
    """Fail early if a referenced file is missing."""
    names = ["species", "selectivity", "survey_effort"]
    if need_observations:
        names.append("observations")
    for name in names:
        p = cfg.path(name)
        if not p.exists():
            raise ValidationError(f"{name} file not found: {p}")


def build_model(cfg, backend=None):
    """Species table + selectivity + effort -> :class:`SpectrumModel`."""
    check_inputs(cfg, need_observations=False)
    traits = read_species_table(cfg.path("species"))
    names = [t["name"] for t in traits]
    mc = cfg.model
    grid = WeightGrid.log_spaced(min(t["w_egg"] for t in traits),
                                 max(t["w_inf"] for t in traits),
                                 mc.n_bins, mc.resource_decades)
    sel = read_selectivity(cfg.path("selectivity"), names)
    effort = read_survey_effort(cfg.path("survey_effort"), names, cfg.years.years)
    species = []
    for t in traits:
        name = t["name"]
        q = qs = None
        if name in sel:
            q, qs = selectivity_on_grid(sel[name], grid)
        species.append(SpeciesParams(catchability=q, survey_catchability=qs,
                                     survey_effort_by_year=effort[name], **t))
    return SpectrumModel(species, cfg.resource_params(), mc, grid, backend=backend)


def load_problem_inputs(cfg, backend=None):
    model = build_model(cfg, backend)
    obs = load_observations(cfg.path("observations"), model.names, cfg.years.years,
                            cfg.years.first_survey)
    return model, obs


# -- outputs -----------------------------------------------------------------

def write_manifest(directory, files, cfg=None, seed=None, extra=None):
    """Write ``manifest.json`` with config hash, code version and seed."""
    directory = Path(directory)
    entries = {}
    for label, p in files.items():
        p = Path(p)
        entries[label] = {"path": p.name,
                          "sha256": hashlib.sha256(p.read_bytes()).hexdigest()
                          if p.exists() else None}
    manifest = {"code_version": __version__, "seed": seed,
                "config_sha256": cfg.digest() if cfg is not None else None,
                "files": entries}
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def thread_cap(requested=None):
    """Thread cap: ``SSCALIB_THREADS`` overrides the requested value."""
    env = os.environ.get("SSCALIB_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValidationError(f"SSCALIB_THREADS={env!r} is not an integer") from None
    else:
        value = requested if requested is not None else 1
    if value < 1:
        raise ValidationError("thread cap must be >= 1")
    return value
