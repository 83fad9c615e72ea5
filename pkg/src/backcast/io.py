"""CSV ingestion with schema validation, run configuration, and manifests.

Input schemas (header row required, exact column names):

* deaths:       ``year,age_lo,age_hi,deaths``
* population:   ``age_lo,age_hi,population``
* births:       ``year,births``
* immigration:  ``year,total,shape,scale``

Death files must use the same contiguous, non-overlapping age bins in every
year, with no missing years; violations are rejected with the offending
row numbers. Emitted tables all have a paired loader and are written with
shortest round-trip float formatting, so loading and re-writing a table
reproduces it byte for byte.

Configuration is a flat INI file of ``[section] key = value`` entries;
unknown sections or keys are rejected to catch typos.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .eki import LogHazardPrior
from .errors import ValidationError
from .grid import AgeTimeGrid, BinnedCounts, BinningScheme, make_grid
from .onset import KernelSamplerConfig
from .pipeline import PipelineSettings


# ---------------------------------------------------------------------------
# generic CSV helpers

def _read_rows(path, expected_header: list[str]) -> list[tuple[int, list[str]]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if [h.strip() for h in header] != expected_header:
            raise ValidationError(
                f"{path}: header must be {','.join(expected_header)!r}, got {','.join(header)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected_header):
                raise ValidationError(f"{path}: row {lineno} has {len(row)} fields")
            rows.append((lineno, [c.strip() for c in row]))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows


def _parse(path, lineno: int, text: str, kind, what: str):
    try:
        return kind(text)
    except ValueError:
        raise ValidationError(f"{path}: row {lineno}: {what} {text!r} is not a {kind.__name__}") from None


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# input loaders

def _check_bins(path, bins: list[tuple[float, float, int]], label: str) -> None:
    """bins: (lo, hi, lineno) sorted by lo; contiguity and overlap checks."""
    for (lo, hi, ln) in bins:
        if hi <= lo:
            raise ValidationError(f"{path}: row {ln}: empty {label} bin [{lo}, {hi})")
    for (lo1, hi1, ln1), (lo2, hi2, ln2) in zip(bins[:-1], bins[1:]):
        if lo2 < hi1 - 1e-9:
            raise ValidationError(
                f"{path}: rows {ln1} and {ln2}: overlapping {label} bins [{lo1},{hi1}) and [{lo2},{hi2})"
            )
        if lo2 > hi1 + 1e-9:
            raise ValidationError(
                f"{path}: rows {ln1} and {ln2}: gap in {label} bins between {hi1} and {lo2}"
            )


def load_deaths_csv(path) -> BinnedCounts:
    """Observed death counts; the binning scheme is inferred from the file."""
    rows = _read_rows(path, ["year", "age_lo", "age_hi", "deaths"])
    by_year: dict[int, list[tuple[float, float, float, int]]] = {}
    for ln, (y, lo, hi, d) in rows:
        year = _parse(path, ln, y, int, "year")
        age_lo = _parse(path, ln, lo, float, "age_lo")
        age_hi = _parse(path, ln, hi, float, "age_hi")
        deaths = _parse(path, ln, d, float, "deaths")
        if deaths < 0:
            raise ValidationError(f"{path}: row {ln}: negative deaths {deaths}")
        by_year.setdefault(year, []).append((age_lo, age_hi, deaths, ln))

    years = sorted(by_year)
    missing = [y for y in range(years[0], years[-1] + 1) if y not in by_year]
    if missing:
        raise ValidationError(f"{path}: missing data for years {missing}")

    reference = None
    for y in years:
        entries = sorted(by_year[y])
        _check_bins(path, [(lo, hi, ln) for lo, hi, _, ln in entries], "age")
        edges = [e[0] for e in entries] + [entries[-1][1]]
        if reference is None:
            reference = edges
        elif not np.allclose(edges, reference, atol=1e-9):
            raise ValidationError(f"{path}: year {y} uses different age bins (ragged years)")
    counts = np.empty((len(reference) - 1, len(years)))
    for j, y in enumerate(years):
        counts[:, j] = [e[2] for e in sorted(by_year[y])]
    scheme = BinningScheme(np.asarray(reference), np.arange(years[0], years[-1] + 2, dtype=float))
    return BinnedCounts(scheme, counts)


def load_population_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Census age bins; returns (edges, totals)."""
    rows = _read_rows(path, ["age_lo", "age_hi", "population"])
    entries = []
    for ln, (lo, hi, p) in rows:
        age_lo = _parse(path, ln, lo, float, "age_lo")
        age_hi = _parse(path, ln, hi, float, "age_hi")
        pop = _parse(path, ln, p, float, "population")
        if pop < 0:
            raise ValidationError(f"{path}: row {ln}: negative population {pop}")
        entries.append((age_lo, age_hi, pop, ln))
    entries.sort()
    _check_bins(path, [(lo, hi, ln) for lo, hi, _, ln in entries], "age")
    edges = np.array([e[0] for e in entries] + [entries[-1][1]])
    return edges, np.array([e[2] for e in entries])


def load_births_csv(path) -> dict[int, float]:
    rows = _read_rows(path, ["year", "births"])
    births: dict[int, float] = {}
    for ln, (y, b) in rows:
        year = _parse(path, ln, y, int, "year")
        value = _parse(path, ln, b, float, "births")
        if value < 0:
            raise ValidationError(f"{path}: row {ln}: negative births {value}")
        if year in births:
            raise ValidationError(f"{path}: row {ln}: duplicate year {year}")
        births[year] = value
    return births


def load_immigration_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-year immigration totals and Weibull age-profile parameters."""
    rows = _read_rows(path, ["year", "total", "shape", "scale"])
    seen: dict[int, tuple[float, float, float]] = {}
    for ln, (y, t, k, s) in rows:
        year = _parse(path, ln, y, int, "year")
        total = _parse(path, ln, t, float, "total")
        shape = _parse(path, ln, k, float, "shape")
        scale = _parse(path, ln, s, float, "scale")
        if total < 0:
            raise ValidationError(f"{path}: row {ln}: negative total {total}")
        if shape <= 0 or scale <= 0:
            raise ValidationError(f"{path}: row {ln}: Weibull parameters must be positive")
        if year in seen:
            raise ValidationError(f"{path}: row {ln}: duplicate year {year}")
        seen[year] = (total, shape, scale)
    years = np.array(sorted(seen))
    vals = np.array([seen[y] for y in years])
    return years, vals[:, 0], vals[:, 1], vals[:, 2]


def write_deaths_csv(path, binned: BinnedCounts) -> None:
    rows = []
    edges = binned.scheme.age_edges
    for j, year in enumerate(binned.year_labels()):
        for k in range(binned.scheme.n_age_bins):
            rows.append((int(year), edges[k], edges[k + 1], binned.counts[k, j]))
    write_csv(path, ["year", "age_lo", "age_hi", "deaths"], rows)


def write_population_csv(path, edges, totals) -> None:
    edges = np.asarray(edges, dtype=float)
    write_csv(path, ["age_lo", "age_hi", "population"],
              zip(edges[:-1], edges[1:], np.asarray(totals, dtype=float)))


def write_births_csv(path, births: Mapping[int, float]) -> None:
    write_csv(path, ["year", "births"],
              ((int(y), float(births[y])) for y in sorted(births)))


def write_immigration_csv(path, years, totals, shapes, scales) -> None:
    write_csv(path, ["year", "total", "shape", "scale"],
              zip(np.asarray(years, dtype=int), totals, shapes, scales))


def write_truth_incidence_csv(path, year_labels, age_edges, rates) -> None:
    rows = []
    for j, y in enumerate(np.asarray(year_labels, dtype=int)):
        for k in range(len(age_edges) - 1):
            rows.append((y, age_edges[k], age_edges[k + 1], rates[k, j]))
    write_csv(path, ["year", "age_lo", "age_hi", "rate"], rows)


def load_truth_incidence_csv(path):
    rows = _read_rows(path, ["year", "age_lo", "age_hi", "rate"])
    years = sorted({int(r[0]) for _, r in rows})
    age_los = sorted({float(r[1]) for _, r in rows})
    rates = np.zeros((len(age_los), len(years)))
    hi_max = 0.0
    for _, r in rows:
        rates[age_los.index(float(r[1])), years.index(int(r[0]))] = float(r[3])
        hi_max = max(hi_max, float(r[2]))
    return np.array(years), np.array(age_los + [hi_max]), rates


# ---------------------------------------------------------------------------
# emitted tables and their paired loaders

def write_yearly_table(path, years, lower, median, upper) -> None:
    write_csv(path, ["year", "median", "lo99", "hi99"],
              zip(np.asarray(years, dtype=int), median, lower, upper))


def load_yearly_table(path):
    rows = _read_rows(path, ["year", "median", "lo99", "hi99"])
    data = [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for _, r in rows]
    years = np.array([d[0] for d in data])
    med = np.array([d[1] for d in data])
    lo = np.array([d[2] for d in data])
    hi = np.array([d[3] for d in data])
    return years, lo, med, hi


def write_surface_table(path, years, age_edges, lower, median, upper) -> None:
    rows = []
    for j, y in enumerate(np.asarray(years, dtype=int)):
        for k in range(len(age_edges) - 1):
            rows.append((y, age_edges[k], age_edges[k + 1],
                         median[k, j], lower[k, j], upper[k, j]))
    write_csv(path, ["year", "age_lo", "age_hi", "median", "lo99", "hi99"], rows)


def load_surface_table(path):
    rows = _read_rows(path, ["year", "age_lo", "age_hi", "median", "lo99", "hi99"])
    years = sorted({int(r[0]) for _, r in rows})
    age_los = sorted({float(r[1]) for _, r in rows})
    year_ix = {y: j for j, y in enumerate(years)}
    age_ix = {a: k for k, a in enumerate(age_los)}
    shape = (len(age_los), len(years))
    med, lo, hi = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    age_hi_max = 0.0
    for _, r in rows:
        k, j = age_ix[float(r[1])], year_ix[int(r[0])]
        age_hi_max = max(age_hi_max, float(r[2]))
        med[k, j], lo[k, j], hi[k, j] = float(r[3]), float(r[4]), float(r[5])
    edges = np.array(age_los + [age_hi_max])
    return np.array(years), edges, lo, med, hi


def write_lcurve_table(path, selection) -> None:
    rows = []
    for i, beta in enumerate(selection.betas):
        rows.append((beta, selection.residual_norms[i], selection.seminorms[i],
                     selection.curvatures[i] if np.isfinite(selection.curvatures[i]) else float("nan"),
                     int(beta == selection.beta)))
    write_csv(path, ["beta", "residual_norm", "seminorm", "curvature", "selected"], rows)


def load_lcurve_table(path):
    rows = _read_rows(path, ["beta", "residual_norm", "seminorm", "curvature", "selected"])
    vals = np.array([[float(c) for c in r] for _, r in rows])
    return vals[:, 0], vals[:, 1], vals[:, 2], vals[:, 3], vals[:, 4].astype(int)


# ---------------------------------------------------------------------------
# configuration

_SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {"a_min": (float, 0.0), "a_max": (float, 100.0),
             "t_min": (float, None), "t_max": (float, None), "step": (float, 0.25)},
    "ensemble": {"size": (int, 100), "seed": (int, 0), "workers": (int, 1)},
    "eki": {"noise_floor": (float, 25.0), "prior_base": (float, 1e-4),
            "prior_coeff": (float, 3e-5), "prior_age_scale": (float, 10.5),
            "prior_gp_std": (float, 0.3), "prior_gp_length": (float, 10.0)},
    "onset": {"scale_mean": (float, 6.3841), "scale_std": (float, 0.411),
              "shape_mean": (float, 1.4769), "shape_std": (float, 0.0068),
              "horizon_years": (int, 30), "dispersion": (str, "std")},
    "backcalc": {"beta": ("beta", 1e6), "lcurve_min": (float, 1e-2),
                 "lcurve_max": (float, 1e10), "lcurve_points": (int, 13),
                 "onset_floor": (float, 40.0), "age_bin_years": (float, 1.0)},
    "pipeline": {"clamp_negative": (bool, True),
                 "immigration_perturb_std": (float, 0.05)},
    "inputs": {"population": (str, None), "births": (str, None),
               "immigration": (str, None), "deaths_all_cause": (str, None),
               "deaths_disease": (str, None)},
    "output": {"directory": (str, None)},
    "synthetic": {"noise": (bool, False), "row_bin_years": (float, 5.0)},
}


def _convert(section: str, key: str, raw: str):
    kind = _SCHEMA[section][key][0]
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "beta":
            return "lcurve" if raw.strip().lower() == "lcurve" else float(raw)
        return kind(raw)
    except ValueError:
        raise ValidationError(f"config value {section}.{key} = {raw!r} is malformed") from None


@dataclass(frozen=True)
class RunConfig:
    """Fully validated configuration of a pipeline run."""

    values: Mapping[str, object]          # "section.key" -> typed value
    corrections: Mapping[int, float]
    config_path: Path | None = None

    def __getitem__(self, dotted: str):
        return self.values[dotted]

    @classmethod
    def from_file(cls, path, overrides: Mapping[str, object] | None = None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file {path} does not exist")
        parser.read(path)
        values: dict[str, object] = {}
        corrections: dict[int, float] = {}
        for section in parser.sections():
            if section == "corrections":
                for key, raw in parser.items(section):
                    try:
                        year = int(key)
                    except ValueError:
                        raise ValidationError(f"correction year {key!r} is not an integer") from None
                    corrections[year] = _parse(path, 0, raw, float, f"correction factor for {key}")
                continue
            if section not in _SCHEMA:
                raise ValidationError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ValidationError(f"unknown config key {section}.{key}")
                values[f"{section}.{key}"] = _convert(section, key, raw)
        for section, keys in _SCHEMA.items():
            for key, (_, default) in keys.items():
                values.setdefault(f"{section}.{key}", default)
        for dotted, value in (overrides or {}).items():
            if value is not None:
                values[dotted] = value
        return cls(values, corrections, path)

    def require(self, dotted: str):
        value = self.values[dotted]
        if value is None:
            raise ValidationError(f"config key {dotted} is required for this command")
        return value

    def make_grid(self) -> AgeTimeGrid:
        return make_grid(self["grid.a_min"], self["grid.a_max"],
                         self.require("grid.t_min"), self.require("grid.t_max"),
                         self["grid.step"])

    def prior(self) -> LogHazardPrior:
        return LogHazardPrior(self["eki.prior_base"], self["eki.prior_coeff"],
                              self["eki.prior_age_scale"], self["eki.prior_gp_std"],
                              self["eki.prior_gp_length"])

    def onset_config(self) -> KernelSamplerConfig:
        return KernelSamplerConfig(self["onset.scale_mean"], self["onset.scale_std"],
                                   self["onset.shape_mean"], self["onset.shape_std"],
                                   self["onset.horizon_years"], self["onset.dispersion"])

    def lcurve_betas(self) -> np.ndarray:
        lo, hi = self["backcalc.lcurve_min"], self["backcalc.lcurve_max"]
        n = self["backcalc.lcurve_points"]
        if n < 5:
            raise ValidationError("backcalc.lcurve_points must be at least 5")
        return np.logspace(np.log10(lo), np.log10(hi), n)

    def pipeline_settings(self) -> PipelineSettings:
        return PipelineSettings(
            ensemble_size=self["ensemble.size"], seed=self["ensemble.seed"],
            workers=self["ensemble.workers"], noise_floor=self["eki.noise_floor"],
            prior=self.prior(), onset=self.onset_config(),
            beta=self["backcalc.beta"], lcurve_betas=tuple(self.lcurve_betas()),
            onset_floor=self["backcalc.onset_floor"],
            age_bin_years=self["backcalc.age_bin_years"],
            corrections=dict(self.corrections),
            clamp_negative=self["pipeline.clamp_negative"],
            immigration_perturb_std=self["pipeline.immigration_perturb_std"],
        )

    def input_path(self, name: str) -> Path:
        return Path(self.require(f"inputs.{name}"))

    def output_dir(self) -> Path:
        return Path(self.require("output.directory"))

    def manifest_dict(self) -> dict:
        flat = {k: (repr(v) if isinstance(v, float) else v)
                for k, v in sorted(self.values.items())}
        flat["corrections"] = {str(y): repr(f) for y, f in sorted(self.corrections.items())}
        return flat


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, config: RunConfig, input_paths: Mapping[str, Path]) -> dict:
    """Manifest = config echo + input content hashes + a combined hash that
    changes exactly when a config value or an input file changes."""
    body = {
        "config": config.manifest_dict(),
        "inputs": {name: {"path": str(p), "sha256": file_sha256(p)}
                   for name, p in sorted(input_paths.items())},
    }
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    body["manifest_hash"] = hashlib.sha256(canonical.encode()).hexdigest()
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return body
