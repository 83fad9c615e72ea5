"""Ensemble Monte Carlo pipeline: sample inputs, calibrate mortality,
back-calculate incidence per member, and aggregate quantile bands.

Randomness is organized as counter-based streams keyed by
(master seed, purpose, member index): purpose 0 covers census allocation
and immigration perturbations, purpose 1 the prior hazard draw plus one
observation perturbation per assimilated year, purpose 2 the delay-kernel
draw. Adding members never changes earlier members, the stages can be
re-run independently (the CLI caches calibration and re-derives the rest),
and parallel execution cannot reorder draws because every draw happens
before work is dispatched.

Reported quantiles are nearest-rank on the sorted member values, averaging
the two central ranks when the rank boundary is exact (the 50% level of an
even-sized ensemble averages the two middle members). Stratum totals are
sums of the per-age quantile surfaces over the stratum's age bins, so the
all-ages total equals the sum of its parts exactly; the bands are
pointwise bands summed, a deliberately conservative width.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import backcalc
from .demography import (DemographicInputs, death_counts, simulate_population,
                         simulate_population_annual)
from .eki import EkiResult, LogHazardPrior, ObservationModel, member_streams, run_eki
from .errors import ValidationError
from .grid import (AgeTimeGrid, BinnedCounts, BinningScheme, Field,
                   sum_population_bins, yearly_scheme)
from .onset import KernelSamplerConfig, WeibullKernel, sample_kernel, year_weights

_QUANTILES = (0.005, 0.5, 0.995)
#: stratum boundaries in years of age; the lower bound of "under 70" is the
#: onset floor of the incidence basis
_STRATA_CUTS = (70.0, 85.0)


@dataclass(frozen=True, eq=False)
class ScenarioData:
    """Everything the pipeline ingests: observed counts plus demographic data."""

    all_cause_deaths: BinnedCounts
    disease_deaths: BinnedCounts
    census_age_edges: np.ndarray
    census_totals: np.ndarray
    births: Mapping[int, float]
    immigration_years: np.ndarray
    immigration_totals: np.ndarray
    immigration_shapes: np.ndarray
    immigration_scales: np.ndarray


@dataclass(frozen=True)
class PipelineSettings:
    """Knobs of one full reconstruction run."""

    ensemble_size: int = 100
    seed: int = 0
    workers: int = 1
    noise_floor: float = 25.0
    prior: LogHazardPrior = field(default_factory=LogHazardPrior)
    onset: KernelSamplerConfig = field(default_factory=KernelSamplerConfig)
    beta: float | str = 1e6
    lcurve_betas: tuple = tuple(np.logspace(-2, 10, 13))
    onset_floor: float = 40.0
    age_bin_years: float = 1.0
    corrections: Mapping[int, float] = field(default_factory=dict)
    clamp_negative: bool = True
    immigration_perturb_std: float = 0.05

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValidationError("the ensemble needs at least 2 members")
        if isinstance(self.beta, str) and self.beta != "lcurve":
            raise ValidationError(f"beta must be a number or 'lcurve', got {self.beta!r}")


def sample_member_inputs(census_age_edges, census_totals, births,
                         immigration_years, immigration_totals,
                         immigration_shapes, immigration_scales,
                         grid: AgeTimeGrid, rng: np.random.Generator,
                         perturb_std: float = 0.05) -> DemographicInputs:
    """Draw one member's demographic inputs.

    Census bin totals are honored exactly; the split across a bin's age
    nodes is uniform on the simplex. Immigration Weibull parameters get an
    independent lognormal perturbation per year before the age profile is
    scaled to the year's total. Births are shared by all members.
    """
    edges = np.asarray(census_age_edges, dtype=float)
    totals = np.asarray(census_totals, dtype=float)
    if totals.shape != (edges.size - 1,):
        raise ValidationError("census totals do not match the census bins")
    if np.any(totals < 0):
        raise ValidationError("census totals must be nonnegative")
    edge_nodes = [grid.age_node_index(a) for a in edges]
    u0 = np.zeros(grid.n_a)
    for k in range(edges.size - 1):
        lo, hi = edge_nodes[k], edge_nodes[k + 1]
        if k == edges.size - 2 and hi < grid.n_a:
            hi += 1  # the top bin owns its upper edge
        n_nodes = hi - lo
        if n_nodes <= 0:
            raise ValidationError(f"census bin {k} covers no grid nodes")
        u0[lo:hi] = totals[k] * rng.dirichlet(np.ones(n_nodes))

    years = np.asarray(immigration_years, dtype=int)
    needed = int(round(grid.t_min)) + np.arange(grid.n_years)
    order = {int(y): i for i, y in enumerate(years)}
    missing = [y for y in needed if y not in order]
    if missing:
        raise ValidationError(f"immigration data missing for years {missing}")

    npy = grid.nodes_per_year
    xi = np.zeros((grid.n_a, grid.n_t))
    cell_edges = np.append(grid.ages, grid.a_max + grid.step)
    for j, y in enumerate(needed):
        i = order[y]
        total = float(immigration_totals[i])
        if total < 0:
            raise ValidationError(f"immigration total for {y} is negative")
        shape = float(immigration_shapes[i]) * np.exp(perturb_std * rng.standard_normal())
        scale = float(immigration_scales[i]) * np.exp(perturb_std * rng.standard_normal())
        if total == 0.0:
            continue
        kernel = WeibullKernel(shape=shape, scale=scale)
        mass = np.clip(np.diff(kernel.cdf(cell_edges)), 0.0, None)
        if mass.sum() <= 0:
            raise ValidationError(f"immigration age profile for {y} has no mass on the grid")
        profile = total * mass / mass.sum()
        lo, hi = j * npy, (j + 1) * npy
        xi[:, lo:hi] = profile[:, None]
        if j == grid.n_years - 1:
            xi[:, -1] = profile
    return DemographicInputs(u0, dict(births), Field(grid, xi))


def apply_reporting_corrections(deaths: BinnedCounts,
                                corrections: Mapping[int, float]) -> BinnedCounts:
    """Scale listed years' death columns by their correction factors."""
    if not corrections:
        return deaths
    labels = list(deaths.year_labels())
    counts = deaths.counts.copy()
    for year, factor in corrections.items():
        if not 0 < float(factor) <= 2:
            raise ValidationError(f"correction factor for {year} must be in (0, 2]")
        if int(year) not in labels:
            raise ValidationError(f"correction year {year} is not a data year")
        counts[:, labels.index(int(year))] *= float(factor)
    return BinnedCounts(deaths.scheme, counts)


def incidence_basis(grid: AgeTimeGrid, onset_floor: float,
                    age_bin_years: float = 1.0) -> BinningScheme:
    """Yearly incidence basis from the onset floor up to the age cap."""
    span = grid.a_max - onset_floor
    n_bins = int(round(span / age_bin_years))
    if n_bins < 2 or abs(span - n_bins * age_bin_years) > 1e-9 * max(span, 1.0):
        raise ValidationError(
            f"basis span {span!r} is not a multiple of the bin width {age_bin_years!r}"
        )
    edges = onset_floor + age_bin_years * np.arange(n_bins + 1)
    return yearly_scheme(grid, edges)


def person_years_by_bin(u: Field, col_scheme: BinningScheme) -> np.ndarray:
    """Person-years per incidence basis bin, shape (K', J')."""
    py = backcalc.person_years(u)
    grid = u.grid
    year0 = int(round(grid.t_min))
    col_years = np.round(col_scheme.year_edges[:-1]).astype(int) - year0
    per_bin = sum_population_bins(py.T, col_scheme.age_edges, grid)  # (n_years, K')
    return per_bin[col_years].T


@dataclass(frozen=True, eq=False)
class EnsembleRun:
    """One Monte Carlo member's full reconstruction chain."""

    member_id: int
    kernel: WeibullKernel
    inputs: DemographicInputs
    annual_log_hazard: np.ndarray         # (n_years, n_a)
    population: Field
    solution: backcalc.IncidenceSolution
    person_years_bins: np.ndarray         # (K', J')
    col_scheme: BinningScheme

    @property
    def incidence_rates(self) -> np.ndarray:
        return self.solution.surface


def run_member(member_id: int, inputs: DemographicInputs,
               annual_log_hazard: np.ndarray, kernel: WeibullKernel,
               disease_deaths: BinnedCounts, col_scheme: BinningScheme,
               beta: float, horizon_years: int) -> EnsembleRun:
    """Post-calibration chain for one member: re-simulate the population with
    the member's posterior hazards, assemble the death operator with the
    member's delay kernel, and solve the regularized inversion."""
    grid = inputs.immigration.grid
    try:
        u = simulate_population_annual(inputs, np.exp(annual_log_hazard), grid)
        gamma = year_weights(kernel, horizon_years)
        system = backcalc.assemble_operator(
            u, gamma, disease_deaths.scheme, col_scheme).with_deaths(disease_deaths)
        reg = backcalc.build_regularizer(col_scheme.n_age_bins,
                                         col_scheme.n_year_bins, beta)
        solution = backcalc.solve_tikhonov(system, reg)
        py = person_years_by_bin(u, col_scheme)
    except Exception as exc:
        raise type(exc)(f"member {member_id}: {exc}") from exc
    return EnsembleRun(member_id, kernel, inputs, np.asarray(annual_log_hazard),
                       u, solution, py, col_scheme)


def _quantiles(values: np.ndarray) -> np.ndarray:
    return np.quantile(values, _QUANTILES, axis=0, method="averaged_inverted_cdf")


@dataclass(frozen=True, eq=False)
class AggregateEstimates:
    """Quantile surfaces over the ensemble plus per-stratum yearly totals.

    Surfaces are (age bin, year); strata map a name to a (3, years) array
    of lower/median/upper rows. ``raw_rates`` keeps the unclamped member
    incidence rates for diagnostics.
    """

    year_labels: np.ndarray
    age_edges: np.ndarray
    hazard_lower: np.ndarray
    hazard_median: np.ndarray
    hazard_upper: np.ndarray
    incidence_lower: np.ndarray
    incidence_median: np.ndarray
    incidence_upper: np.ndarray
    strata: Mapping[str, np.ndarray]
    raw_rates: np.ndarray

    def stratum_table(self, name: str) -> np.ndarray:
        return self.strata[name]


def _stratum_masks(age_edges: np.ndarray) -> dict[str, np.ndarray]:
    lows = age_edges[:-1]
    for cut in _STRATA_CUTS:
        if not np.any(np.abs(age_edges - cut) < 1e-9):
            raise ValidationError(f"stratum boundary {cut} is not a basis bin edge")
    return {
        "all": np.ones(lows.size, dtype=bool),
        "under70": lows < _STRATA_CUTS[0] - 1e-9,
        "70to85": (lows >= _STRATA_CUTS[0] - 1e-9) & (lows < _STRATA_CUTS[1] - 1e-9),
        "85plus": lows >= _STRATA_CUTS[1] - 1e-9,
    }


def aggregate(runs: Sequence[EnsembleRun], clamp_negative: bool = True) -> AggregateEstimates:
    """Quantile bands over members; incidence multiplies each member's rates
    by that member's own person-years before quantiling."""
    if len(runs) < 2:
        raise ValidationError("aggregation needs at least 2 ensemble runs")
    col = runs[0].solution
    raw = np.stack([r.incidence_rates for r in runs])
    rates = np.maximum(raw, 0.0) if clamp_negative else raw
    py = np.stack([r.person_years_bins for r in runs])
    counts = rates * py

    hz_lo, hz_med, hz_hi = _quantiles(rates)
    inc_lo, inc_med, inc_hi = _quantiles(counts)

    scheme = runs[0].col_scheme
    for r in runs[1:]:
        if r.incidence_rates.shape != raw.shape[1:]:
            raise ValidationError("ensemble runs use different incidence bases")
    masks = _stratum_masks(scheme.age_edges)
    strata = {}
    for name, mask in masks.items():
        strata[name] = np.stack([
            inc_lo[mask].sum(axis=0), inc_med[mask].sum(axis=0), inc_hi[mask].sum(axis=0)
        ])
    return AggregateEstimates(
        year_labels=np.round(scheme.year_edges[:-1]).astype(int),
        age_edges=scheme.age_edges.copy(),
        hazard_lower=hz_lo, hazard_median=hz_med, hazard_upper=hz_hi,
        incidence_lower=inc_lo, incidence_median=inc_med, incidence_upper=inc_hi,
        strata=strata, raw_rates=raw,
    )


@dataclass(frozen=True, eq=False)
class PipelineResult:
    """Artifacts of one full reconstruction."""

    grid: AgeTimeGrid
    col_scheme: BinningScheme
    calibration: EkiResult
    runs: tuple
    estimates: AggregateEstimates
    corrected_deaths: BinnedCounts
    beta: float
    lcurve: backcalc.LCurveSelection | None = None


def ensemble_member_inputs(data: ScenarioData, grid: AgeTimeGrid,
                           settings: PipelineSettings) -> list[DemographicInputs]:
    """Deterministically re-derivable member inputs (purpose-0 streams)."""
    return [
        sample_member_inputs(data.census_age_edges, data.census_totals, data.births,
                             data.immigration_years, data.immigration_totals,
                             data.immigration_shapes, data.immigration_scales,
                             grid, rng, settings.immigration_perturb_std)
        for rng in member_streams(settings.seed, settings.ensemble_size, purpose=0)
    ]


def calibrate_ensemble(data: ScenarioData, grid: AgeTimeGrid,
                       settings: PipelineSettings,
                       member_inputs: Sequence[DemographicInputs] | None = None) -> EkiResult:
    """Mortality calibration stage (purpose-1 streams)."""
    if member_inputs is None:
        member_inputs = ensemble_member_inputs(data, grid, settings)
    obs = ObservationModel(data.all_cause_deaths.scheme, settings.noise_floor)
    rngs = member_streams(settings.seed, settings.ensemble_size, purpose=1)
    return run_eki(data.all_cause_deaths, member_inputs, settings.prior, obs,
                   member_rngs=rngs, workers=settings.workers)


def backcalculate_ensemble(data: ScenarioData, grid: AgeTimeGrid,
                           settings: PipelineSettings, calibration: EkiResult,
                           member_inputs: Sequence[DemographicInputs] | None = None
                           ) -> PipelineResult:
    """Per-member back-calculation and aggregation (purpose-2 streams for
    the delay kernels)."""
    if member_inputs is None:
        member_inputs = ensemble_member_inputs(data, grid, settings)
    corrected = apply_reporting_corrections(data.disease_deaths, settings.corrections)
    col_scheme = incidence_basis(grid, settings.onset_floor, settings.age_bin_years)
    kernels = [sample_kernel(settings.onset, rng)
               for rng in member_streams(settings.seed, settings.ensemble_size, purpose=2)]
    horizon = settings.onset.horizon_years

    lcurve = None
    beta = settings.beta
    if beta == "lcurve":
        lcurve = _select_beta(data, calibration, member_inputs, corrected,
                              col_scheme, settings)
        beta = lcurve.beta
    beta = float(beta)

    def one(i: int) -> EnsembleRun:
        return run_member(i, member_inputs[i], calibration.log_hazards[i].copy(),
                          kernels[i], corrected, col_scheme, beta, horizon)

    indices = range(settings.ensemble_size)
    if settings.workers > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            runs = tuple(pool.map(one, indices))
    else:
        runs = tuple(one(i) for i in indices)

    estimates = aggregate(runs, settings.clamp_negative)
    return PipelineResult(grid, col_scheme, calibration, runs, estimates,
                          corrected, beta, lcurve)


def run_ensemble(data: ScenarioData, grid: AgeTimeGrid,
                 settings: PipelineSettings) -> PipelineResult:
    """Full chain: sample members, calibrate mortality, back-calculate each
    member, aggregate. Deterministic for a fixed master seed regardless of
    the worker count."""
    member_inputs = ensemble_member_inputs(data, grid, settings)
    calibration = calibrate_ensemble(data, grid, settings, member_inputs)
    return backcalculate_ensemble(data, grid, settings, calibration, member_inputs)


def _select_beta(data, calibration, member_inputs, corrected, col_scheme,
                 settings) -> backcalc.LCurveSelection:
    """L-curve on the ensemble-representative system: geometric-mean hazard,
    member-mean initial population, and the mean delay kernel."""
    grid = member_inputs[0].immigration.grid
    mean_logh = calibration.log_hazards.mean(axis=0)
    mean_inputs = DemographicInputs(
        np.mean([m.initial_population for m in member_inputs], axis=0),
        dict(data.births),
        Field(grid, np.mean([m.immigration.values for m in member_inputs], axis=0)),
    )
    u = simulate_population_annual(mean_inputs, np.exp(mean_logh), grid)
    kernel = WeibullKernel(shape=settings.onset.shape_mean, scale=settings.onset.scale_mean)
    gamma = year_weights(kernel, settings.onset.horizon_years)
    system = backcalc.assemble_operator(u, gamma, corrected.scheme,
                                        col_scheme).with_deaths(corrected)
    template = backcalc.build_regularizer(col_scheme.n_age_bins,
                                          col_scheme.n_year_bins, 1.0)
    return backcalc.lcurve_select(system, template, settings.lcurve_betas)


@dataclass(frozen=True)
class TruthConfig:
    """Smooth ground-truth surfaces for synthetic scenarios.

    The mortality hazard is Gompertz-Makeham in age with a mild sinusoidal
    drift in time; the onset hazard ramps up logistically from around 60,
    peaks near 85, rolls off gently after, and drifts by the given
    fraction over each drift period.
    """

    hazard_base: float = 2e-4
    hazard_coeff: float = 4e-5
    hazard_age_scale: float = 11.0
    hazard_drift: float = 0.10
    hazard_drift_period: float = 40.0
    ramp_center: float = 76.0
    ramp_width: float = 5.0
    peak_level: float = 0.03
    rolloff_age: float = 85.0
    rolloff_width: float = 12.0
    incidence_drift: float = 0.20
    incidence_drift_period: float = 20.0
    population_density: float = 4.3e6   # persons per year of age on the plateau
    births: float = 4.2e6
    immigration_total: float = 1.1e6
    immigration_shape: float = 2.2
    immigration_scale: float = 30.0
    kernel_shape: float = 1.4769
    kernel_scale: float = 6.3841
    horizon_years: int = 30
    onset_floor: float = 40.0
    row_bin_years: float = 5.0
    poisson_noise: bool = False

    def hazard(self, age, t, t_min):
        drift = 1.0 + self.hazard_drift * np.sin(2 * np.pi * (t - t_min) / self.hazard_drift_period)
        return self.hazard_base + self.hazard_coeff * np.exp(age / self.hazard_age_scale) * drift

    def onset_rate(self, age, year_mid, t_min):
        ramp = 1.0 / (1.0 + np.exp(-(age - self.ramp_center) / self.ramp_width))
        roll = np.exp(-(np.maximum(age - self.rolloff_age, 0.0) / self.rolloff_width) ** 2)
        drift = 1.0 + self.incidence_drift * np.sin(
            2 * np.pi * (year_mid - t_min) / self.incidence_drift_period)
        return self.peak_level * ramp * roll * drift

    def population_profile(self, age):
        return self.population_density / (1.0 + np.exp((age - 72.0) / 9.0))


@dataclass(frozen=True, eq=False)
class SyntheticScenario:
    """Ground truth plus the observable data derived from it."""

    grid: AgeTimeGrid
    truth: TruthConfig
    data: ScenarioData
    truth_population: Field
    truth_hazard: Field
    truth_incidence: np.ndarray        # (K', J') rates on the basis
    col_scheme: BinningScheme
    row_scheme: BinningScheme
    kernel: WeibullKernel
    gamma: np.ndarray
    noiseless_all_cause: np.ndarray
    noiseless_disease: np.ndarray


def convolve_disease_deaths(u: Field, incidence: np.ndarray,
                            col_scheme: BinningScheme, row_scheme: BinningScheme,
                            gamma: np.ndarray) -> np.ndarray:
    """Discrete convolution of onsets into binned deaths, written directly in
    (node, year) space. Independent of the operator assembly; the two must
    agree on shared inputs."""
    grid = u.grid
    npy = grid.nodes_per_year
    py = backcalc.person_years(u)
    year0 = int(round(grid.t_min))
    col_age = col_scheme.age_bin_of_nodes(grid)
    row_age = row_scheme.age_bin_of_nodes(grid)
    col_years = np.round(col_scheme.year_edges[:-1]).astype(int)
    row_years = np.round(row_scheme.year_edges[:-1]).astype(int)
    row_index = {int(y): j for j, y in enumerate(row_years)}

    onset_rate_by_node = np.zeros((grid.n_a, col_years.size))
    has_basis = col_age >= 0
    onset_rate_by_node[has_basis] = incidence[col_age[has_basis]]

    counts = np.zeros((row_scheme.n_age_bins, row_scheme.n_year_bins))
    for s, y in enumerate(col_years):
        cases = py[:, y - year0] * onset_rate_by_node[:, s]
        for lag in range(gamma.size):
            target_year = int(y) + lag
            if target_year not in row_index:
                if target_year > row_years.max():
                    break
                continue
            j = row_index[target_year]
            shifted = lag * npy
            src = np.arange(grid.n_a - shifted)
            dest_bins = row_age[src + shifted]
            ok = dest_bins >= 0
            np.add.at(counts[:, j], dest_bins[ok], gamma[lag] * cases[src[ok]])
    return counts


def generate_synthetic_scenario(grid: AgeTimeGrid, truth: TruthConfig,
                                rng: np.random.Generator) -> SyntheticScenario:
    """Simulate a ground-truth population, then derive binned all-cause
    deaths and disease deaths (the latter via the direct discrete
    convolution, which doubles as the oracle for the operator assembly)."""
    ages = grid.ages
    u0 = truth.population_profile(ages) * grid.step
    hazard = Field.from_function(grid, lambda a, t: truth.hazard(a, t, grid.t_min))

    years = int(round(grid.t_min)) + np.arange(grid.n_years)
    births = {int(y): truth.births for y in years}
    imm_kernel = WeibullKernel(truth.immigration_shape, truth.immigration_scale)
    cell_edges = np.append(ages, grid.a_max + grid.step)
    mass = np.clip(np.diff(imm_kernel.cdf(cell_edges)), 0.0, None)
    profile = truth.immigration_total * mass / mass.sum() if mass.sum() > 0 else mass
    xi = Field(grid, np.tile(profile[:, None], (1, grid.n_t)))

    inputs = DemographicInputs(u0, births, xi, hazard)
    u = simulate_population(inputs, grid)

    n_rows = int(round((grid.a_max - grid.a_min) / truth.row_bin_years))
    row_edges = grid.a_min + truth.row_bin_years * np.arange(n_rows + 1)
    row_scheme = yearly_scheme(grid, row_edges)
    col_scheme = incidence_basis(grid, truth.onset_floor)

    all_cause = death_counts(u, hazard, row_scheme)

    mids = 0.5 * (col_scheme.age_edges[:-1] + col_scheme.age_edges[1:])
    year_mids = col_scheme.year_edges[:-1] + 0.5
    incidence = truth.onset_rate(mids[:, None], year_mids[None, :], grid.t_min)

    kernel = WeibullKernel(truth.kernel_shape, truth.kernel_scale)
    gamma = year_weights(kernel, truth.horizon_years)
    disease = convolve_disease_deaths(u, incidence, col_scheme, row_scheme, gamma)

    ac_counts = all_cause.counts
    dz_counts = disease
    if truth.poisson_noise:
        ac_counts = rng.poisson(ac_counts).astype(float)
        dz_counts = rng.poisson(disease).astype(float)

    data = ScenarioData(
        all_cause_deaths=BinnedCounts(row_scheme, ac_counts),
        disease_deaths=BinnedCounts(row_scheme, dz_counts),
        census_age_edges=row_scheme.age_edges.copy(),
        census_totals=sum_population_bins(u0, row_scheme.age_edges, grid),
        births=births,
        immigration_years=years,
        immigration_totals=np.full(years.size, truth.immigration_total),
        immigration_shapes=np.full(years.size, truth.immigration_shape),
        immigration_scales=np.full(years.size, truth.immigration_scale),
    )
    return SyntheticScenario(grid, truth, data, u, hazard, incidence, col_scheme,
                             row_scheme, kernel, gamma, all_cause.counts.copy(),
                             disease.copy())


class IncidencePipeline(BaseEstimator):
    """Estimator facade over the full reconstruction pipeline.

    fit(data, grid) runs sampling, calibration, per-member back-calculation
    and aggregation; results land in ``result_`` and ``estimates_``.
    """

    def __init__(self, ensemble_size=100, seed=0, beta=1e6, onset_floor=40.0,
                 age_bin_years=1.0, noise_floor=25.0, horizon_years=30,
                 clamp_negative=True, immigration_perturb_std=0.05, workers=1,
                 corrections=None):
        self.ensemble_size = ensemble_size
        self.seed = seed
        self.beta = beta
        self.onset_floor = onset_floor
        self.age_bin_years = age_bin_years
        self.noise_floor = noise_floor
        self.horizon_years = horizon_years
        self.clamp_negative = clamp_negative
        self.immigration_perturb_std = immigration_perturb_std
        self.workers = workers
        self.corrections = corrections

    def _settings(self) -> PipelineSettings:
        return PipelineSettings(
            ensemble_size=self.ensemble_size, seed=self.seed, workers=self.workers,
            noise_floor=self.noise_floor,
            onset=KernelSamplerConfig(horizon_years=self.horizon_years),
            beta=self.beta, onset_floor=self.onset_floor,
            age_bin_years=self.age_bin_years,
            corrections=dict(self.corrections or {}),
            clamp_negative=self.clamp_negative,
            immigration_perturb_std=self.immigration_perturb_std,
        )

    def fit(self, data: ScenarioData, grid: AgeTimeGrid):
        self.result_ = run_ensemble(data, grid, self._settings())
        self.estimates_ = self.result_.estimates
        return self
