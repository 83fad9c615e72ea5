"""Sequential ensemble Kalman inversion of age-specific mortality.

An ensemble of log-hazard age profiles is filtered through the observed
years one at a time. For each year, every member's population is advanced
with its current hazard to predict binned death counts; sample covariances
between log-hazards and predictions give a Kalman gain; members are nudged
toward the (perturbed) observations; finally each member's population
state advances using its updated hazard, and the updated profile is frozen
as that year's slice of the posterior hazard staircase.

The state is the log of the hazard so the additive Kalman update can never
produce a nonpositive mortality rate. Each member owns a counter-based
random stream derived from (master seed, member index), so perturbation
draws do not depend on the ensemble size or on how forward simulations are
scheduled across workers.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .demography import DemographicInputs, advance_year, annual_means
from .errors import NumericalError, ValidationError
from .grid import AgeTimeGrid, BinnedCounts, BinningScheme, Field

__all__ = [
    "ObservationModel", "LogHazardPrior", "EkiState", "EkiResult",
    "member_streams", "kalman_update", "forward_observe", "eki_step",
    "run_eki", "MortalityCalibrator",
]


def member_streams(master_seed: int, n_members: int,
                   purpose: int = 0) -> list[np.random.Generator]:
    """Independent per-member generators.

    Stream i is seeded from (master_seed, purpose, i): growing the ensemble
    never reshuffles earlier members, and distinct pipeline stages (input
    sampling, observation perturbations, kernel draws) use distinct purpose
    codes so they can be re-derived independently of each other.
    """
    return [np.random.default_rng(np.random.SeedSequence((int(master_seed), int(purpose), i)))
            for i in range(n_members)]


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Death-count binning plus the observation-noise rule.

    The default rule is Poisson-motivated with a floor: the variance of a
    bin with observed count y is max(y, noise_floor).
    """

    scheme: BinningScheme
    noise_floor: float = 25.0
    variance_rule: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if not self.noise_floor > 0:
            raise ValidationError("noise_floor must be positive")

    def variances(self, y_obs: np.ndarray) -> np.ndarray:
        v = (self.variance_rule(y_obs) if self.variance_rule is not None
             else np.maximum(np.asarray(y_obs, dtype=float), self.noise_floor))
        if np.any(v <= 0):
            raise ValidationError("observation variances must be strictly positive")
        return v


@dataclass(frozen=True)
class LogHazardPrior:
    """Gompertz-Makeham center with squared-exponential perturbations in age.

    A member's log-hazard is log(base + coeff * exp(age / age_scale)) plus
    a zero-mean Gaussian process over age (std gp_std, length scale
    gp_length_years).
    """

    base: float = 1e-4
    coeff: float = 3e-5
    age_scale: float = 10.5
    gp_std: float = 0.3
    gp_length_years: float = 10.0

    def center(self, ages: np.ndarray) -> np.ndarray:
        return self.base + self.coeff * np.exp(ages / self.age_scale)

    def perturbation_factor(self, ages: np.ndarray) -> np.ndarray:
        """Cholesky-like factor S with S S^T the GP covariance over the nodes."""
        if self.gp_std == 0.0:
            return np.zeros((ages.size, ages.size))
        d = ages[:, None] - ages[None, :]
        cov = self.gp_std ** 2 * np.exp(-0.5 * (d / self.gp_length_years) ** 2)
        jitter = 1e-10 * self.gp_std ** 2
        while jitter <= 1e-4 * self.gp_std ** 2:
            try:
                return np.linalg.cholesky(cov + jitter * np.eye(ages.size))
            except np.linalg.LinAlgError:
                jitter *= 10.0
        raise NumericalError("prior covariance is too ill-conditioned to factor")

    def sample(self, ages: np.ndarray, rng: np.random.Generator,
               factor: np.ndarray | None = None) -> np.ndarray:
        if factor is None:
            factor = self.perturbation_factor(ages)
        return np.log(self.center(ages)) + factor @ rng.standard_normal(ages.size)


@dataclass(frozen=True, eq=False)
class StepDiagnostics:
    """Predictions bracketing one assimilation step."""

    year: int
    predicted_prior: np.ndarray      # (N_e, K) with pre-update hazards
    predicted_posterior: np.ndarray  # (N_e, K) with post-update hazards


@dataclass(frozen=True, eq=False)
class EkiState:
    """Ensemble state between assimilation steps.

    members holds log-hazard age profiles, population the node-lumped
    person counts at the start of the next observation year.
    """

    grid: AgeTimeGrid
    members: np.ndarray                      # (N_e, n_a) log-hazard
    population: np.ndarray                   # (N_e, n_a)
    member_inputs: Sequence[DemographicInputs]
    member_rngs: Sequence[np.random.Generator]
    step_index: int = 0
    last_step: StepDiagnostics | None = None

    def __post_init__(self):
        if self.members.ndim != 2 or self.members.shape[0] < 2:
            raise ValidationError("the ensemble needs at least 2 members")
        if self.members.shape != self.population.shape:
            raise ValidationError("members and population shapes differ")
        if self.members.shape[1] != self.grid.n_a:
            raise ValidationError("member vectors do not match the grid's age nodes")
        if len(self.member_inputs) != self.members.shape[0]:
            raise ValidationError("one DemographicInputs per member is required")

    @property
    def n_members(self) -> int:
        return self.members.shape[0]


@dataclass(frozen=True, eq=False)
class EkiResult:
    """Posterior hazard staircase and per-year fit diagnostics."""

    grid: AgeTimeGrid
    year_labels: np.ndarray
    log_hazards: np.ndarray           # (N_e, n_years, n_a), year slices post-update
    observed: np.ndarray              # (K, n_years)
    predicted_prior: np.ndarray       # (N_e, n_years, K)
    predicted_posterior: np.ndarray   # (N_e, n_years, K)

    @property
    def n_members(self) -> int:
        return self.log_hazards.shape[0]

    def hazard_field(self, member: int) -> Field:
        """Member hazard as a per-year staircase field on the grid."""
        values = np.empty((self.grid.n_a, self.grid.n_t))
        for j in range(self.grid.n_t):
            y = self.grid.year_of_time_index(j)
            values[:, j] = np.exp(self.log_hazards[member, y])
        return Field(self.grid, values)

    def annual_hazards(self, member: int) -> np.ndarray:
        """(n_years, n_a) hazards, the representation the simulator consumes."""
        return np.exp(self.log_hazards[member])

    def mean_innovations(self) -> np.ndarray:
        """Per-year squared norm of (observation - prior ensemble-mean prediction)."""
        gaps = self.observed.T - self.predicted_prior.mean(axis=0)
        return np.sum(gaps ** 2, axis=1)


def kalman_update(members: np.ndarray, predictions: np.ndarray, y_obs: np.ndarray,
                  variances: np.ndarray, perturbations: np.ndarray) -> np.ndarray:
    """One ensemble Kalman update in parameter space.

    Sample covariances use the unbiased N_e - 1 normalization. A fully
    collapsed ensemble (zero spread in members and predictions) warns and
    returns the members unchanged, which is what the zero gain gives anyway.
    """
    n_e = members.shape[0]
    if n_e < 2:
        raise ValidationError("kalman_update needs at least 2 members")
    if predictions.shape[0] != n_e or perturbations.shape != predictions.shape:
        raise ValidationError("predictions/perturbations do not match the ensemble")
    dm = members - members.mean(axis=0)
    dy = predictions - predictions.mean(axis=0)
    if not dm.any() and not dy.any():
        warnings.warn("ensemble has collapsed; Kalman update is a no-op", RuntimeWarning)
        return members.copy()
    c_my = dm.T @ dy / (n_e - 1)
    c_yy = dy.T @ dy / (n_e - 1)
    innovations = y_obs[None, :] + perturbations - predictions
    try:
        solved = np.linalg.solve(c_yy + np.diag(np.asarray(variances, dtype=float)),
                                 innovations.T)
    except np.linalg.LinAlgError as exc:  # unreachable with positive variances
        raise NumericalError("prediction covariance plus noise is singular") from exc
    return members + (c_my @ solved).T


def _bin_matrix(scheme: BinningScheme, grid: AgeTimeGrid) -> np.ndarray:
    """(n_a - 1, K) indicator bucketing age cells into observation bins."""
    cell_bin = scheme.age_bin_of_cells(grid)
    out = np.zeros((grid.n_a - 1, scheme.n_age_bins))
    ok = cell_bin >= 0
    out[np.flatnonzero(ok), cell_bin[ok]] = 1.0
    return out


def _predict_year(log_hazards, populations, xi_year, births, grid, bin_matrix,
                  workers: int = 1):
    """Advance populations one year and bin the deaths; batched over members."""
    hazards = np.exp(log_hazards)
    n_e = log_hazards.shape[0]
    pop_end = np.empty_like(populations)
    deaths = np.empty((n_e, grid.n_a - 1))

    def run_chunk(sl: slice) -> None:
        pop_end[sl], deaths[sl] = advance_year(
            populations[sl], hazards[sl], xi_year[sl], births[sl], grid)

    if workers <= 1 or n_e < 2 * workers:
        run_chunk(slice(None))
    else:
        bounds = np.linspace(0, n_e, workers + 1).astype(int)
        chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, chunks))
    return pop_end, deaths @ bin_matrix


def forward_observe(log_hazard: np.ndarray, population: np.ndarray,
                    inputs: DemographicInputs, grid: AgeTimeGrid,
                    scheme: BinningScheme, year_index: int) -> np.ndarray:
    """Predicted death counts per age bin for one member over one year."""
    xi = annual_means(inputs.immigration)[year_index]
    births = np.array([inputs.births_for(grid)[year_index]])
    _, pred = _predict_year(log_hazard[None, :], population[None, :], xi[None, :],
                            births, grid, _bin_matrix(scheme, grid))
    return pred[0]


def _gather_year(state: EkiState, year_index: int):
    grid = state.grid
    xi = np.stack([annual_means(inp.immigration)[year_index]
                   for inp in state.member_inputs])
    births = np.array([inp.births_for(grid)[year_index] for inp in state.member_inputs])
    return xi, births


def eki_step(state: EkiState, y_obs_j: np.ndarray, obs: ObservationModel,
             perturbations: np.ndarray | None = None, workers: int = 1) -> EkiState:
    """Assimilate one observation year and advance the ensemble.

    Predictions use the pre-update hazards; the population advance that is
    kept uses each member's updated hazard. Perturbations default to
    N(0, R) draws from the member streams and can be passed explicitly for
    deterministic tests.
    """
    grid = state.grid
    y_obs_j = np.asarray(y_obs_j, dtype=float)
    if y_obs_j.shape != (obs.scheme.n_age_bins,):
        raise ValidationError("observation vector does not match the binning scheme")
    variances = obs.variances(y_obs_j)
    xi, births = _gather_year(state, state.step_index)
    bin_matrix = _bin_matrix(obs.scheme, grid)

    _, predicted = _predict_year(state.members, state.population, xi, births,
                                 grid, bin_matrix, workers)
    if perturbations is None:
        sd = np.sqrt(variances)
        perturbations = np.stack([rng.normal(0.0, sd) for rng in state.member_rngs])
    updated = kalman_update(state.members, predicted, y_obs_j, variances, perturbations)
    pop_next, predicted_post = _predict_year(updated, state.population, xi, births,
                                             grid, bin_matrix, workers)
    year = int(round(grid.t_min)) + state.step_index
    return EkiState(
        grid=grid,
        members=updated,
        population=pop_next,
        member_inputs=state.member_inputs,
        member_rngs=state.member_rngs,
        step_index=state.step_index + 1,
        last_step=StepDiagnostics(year, predicted, predicted_post),
    )


def init_eki_state(grid: AgeTimeGrid, member_inputs: Sequence[DemographicInputs],
                   prior: LogHazardPrior,
                   member_rngs: Sequence[np.random.Generator]) -> EkiState:
    """Draw the initial ensemble from the prior and load initial populations."""
    if len(member_inputs) < 2:
        raise ValidationError("the ensemble needs at least 2 members")
    if len(member_rngs) != len(member_inputs):
        raise ValidationError("one random stream per member is required")
    for inp in member_inputs:
        inp.validate_for(grid)
    factor = prior.perturbation_factor(grid.ages)
    members = np.stack([prior.sample(grid.ages, rng, factor) for rng in member_rngs])
    population = np.stack([inp.initial_population for inp in member_inputs])
    return EkiState(grid, members, population, list(member_inputs), list(member_rngs))


def run_eki(deaths: BinnedCounts, member_inputs: Sequence[DemographicInputs],
            prior: LogHazardPrior, obs: ObservationModel,
            seed: int | None = None,
            member_rngs: Sequence[np.random.Generator] | None = None,
            workers: int = 1) -> EkiResult:
    """Filter the ensemble through every observation year.

    The death-count year bins must tile the grid's time span. Returns the
    posterior staircase: the slice for year j is the ensemble right after
    assimilating year j.
    """
    grid = member_inputs[0].immigration.grid
    year_starts = np.round(deaths.scheme.year_edges[:-1]).astype(int)
    expected = int(round(grid.t_min)) + np.arange(grid.n_years)
    if (deaths.scheme.n_year_bins != grid.n_years
            or not np.array_equal(year_starts, expected)
            or not np.allclose(np.diff(deaths.scheme.year_edges), 1.0, atol=1e-9)):
        raise ValidationError("death-count year bins must tile the grid span year by year")
    if member_rngs is None:
        member_rngs = member_streams(0 if seed is None else seed, len(member_inputs))

    state = init_eki_state(grid, member_inputs, prior, member_rngs)
    n_e, n_years = state.n_members, grid.n_years
    kk = obs.scheme.n_age_bins
    log_hazards = np.empty((n_e, n_years, grid.n_a))
    pred_prior = np.empty((n_e, n_years, kk))
    pred_post = np.empty((n_e, n_years, kk))
    for j in range(n_years):
        state = eki_step(state, deaths.counts[:, j], obs, workers=workers)
        log_hazards[:, j, :] = state.members
        pred_prior[:, j, :] = state.last_step.predicted_prior
        pred_post[:, j, :] = state.last_step.predicted_posterior
    return EkiResult(grid, expected, log_hazards, deaths.counts.copy(),
                     pred_prior, pred_post)


class MortalityCalibrator(BaseEstimator):
    """Estimator wrapper around the ensemble Kalman mortality calibration.

    fit(deaths, member_inputs) filters the ensemble through the observed
    years; the posterior is exposed through ``result_``.
    """

    def __init__(self, noise_floor=25.0, prior_base=1e-4, prior_coeff=3e-5,
                 prior_age_scale=10.5, prior_gp_std=0.3, prior_gp_length=10.0,
                 seed=None, workers=1):
        self.noise_floor = noise_floor
        self.prior_base = prior_base
        self.prior_coeff = prior_coeff
        self.prior_age_scale = prior_age_scale
        self.prior_gp_std = prior_gp_std
        self.prior_gp_length = prior_gp_length
        self.seed = seed
        self.workers = workers

    def _prior(self) -> LogHazardPrior:
        return LogHazardPrior(self.prior_base, self.prior_coeff, self.prior_age_scale,
                              self.prior_gp_std, self.prior_gp_length)

    def fit(self, deaths: BinnedCounts, member_inputs: Sequence[DemographicInputs]):
        obs = ObservationModel(deaths.scheme, noise_floor=self.noise_floor)
        self.result_ = run_eki(deaths, member_inputs, self._prior(), obs,
                               seed=self.seed, workers=self.workers)
        self.year_labels_ = self.result_.year_labels
        return self

    def hazard_field(self, member: int) -> Field:
        if not hasattr(self, "result_"):
            raise NotFittedError("MortalityCalibrator is not fitted yet")
        return self.result_.hazard_field(member)
