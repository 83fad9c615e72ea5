"""Forward integration of the age-structured transport balance.

The scheme steps exactly along characteristics: the cohort at age node
``a`` and time ``t`` moves to ``(a + step, t + step)``, decaying by
``exp(-mu*step)`` and picking up immigrants ``xi*(1 - exp(-mu*step))/mu``
(limit ``xi*step`` for vanishing hazard), with ``mu`` and ``xi`` held at
cell-centered values within each step. This is the exact solution of the
transport equation for piecewise-constant coefficients, so it is
unconditionally positive and has no numerical diffusion in age.

Node values count persons: the node at age ``a`` holds the people aged
``[a, a + step)``. Each step, a fresh cohort enters the boundary node with
value ``births(year)/step``; the cohort at the top node exits the system
and is reported as aged-out flux. Within one step, the cohort at the top
node leaves before dying, so deaths are only accrued on interior cells.

Two entry points share the same stepping kernel:

* :func:`simulate_population` takes node-sampled coefficient fields and
  centers them with the 4-corner mean (for smooth coefficients);
* :func:`advance_year` holds coefficients constant over a calendar year
  (the representation used by the calibration loop, where hazards are
  per-year staircases).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ValidationError
from .grid import AgeTimeGrid, BinnedCounts, BinningScheme, Field, cell_means

#: below this value of mu*step the immigration gain uses its mu -> 0 limit
_GAIN_LIMIT = 1e-12


@dataclass(frozen=True, eq=False)
class DemographicInputs:
    """Inputs of one population simulation.

    initial_population
        Persons per age node at t_min, shape (n_a,).
    births
        Persons entering at the minimum age, per calendar year
        (int year -> persons/year).
    immigration
        Field of immigrant inflow, persons/year per age node.
    hazard
        Mortality field, 1/year. May be None when the hazard is supplied
        separately (calibration carries its own per-year hazards).
    """

    initial_population: np.ndarray
    births: Mapping[int, float]
    immigration: Field
    hazard: Field | None = None

    def __post_init__(self):
        u0 = np.asarray(self.initial_population, dtype=float)
        if u0.ndim != 1:
            raise ValidationError("initial_population must be a 1-d age vector")
        if not np.all(np.isfinite(u0)):
            i = int(np.argwhere(~np.isfinite(u0))[0])
            raise ValidationError(f"initial_population is not finite at age node {i}")
        if np.any(u0 < 0):
            raise ValidationError("initial_population has negative entries")
        u0 = u0.copy()
        u0.setflags(write=False)
        object.__setattr__(self, "initial_population", u0)
        if any(v < 0 for v in self.births.values()):
            raise ValidationError("births must be nonnegative")
        self.immigration.require_nonnegative("immigration")
        if self.hazard is not None:
            self.hazard.require_nonnegative("hazard")

    def validate_for(self, grid: AgeTimeGrid) -> None:
        if self.initial_population.shape != (grid.n_a,):
            raise ValidationError(
                f"initial_population has {self.initial_population.size} nodes, grid has {grid.n_a}"
            )
        if self.immigration.grid != grid:
            raise ValidationError("immigration field lives on a different grid")
        if self.hazard is not None and self.hazard.grid != grid:
            raise ValidationError("hazard field lives on a different grid")
        for y in _years_needed(grid):
            if y not in self.births:
                raise ValidationError(f"births series does not cover year {y}")

    def births_for(self, grid: AgeTimeGrid) -> np.ndarray:
        return np.array([float(self.births[y]) for y in _years_needed(grid)])


def _years_needed(grid: AgeTimeGrid) -> list[int]:
    t0 = int(round(grid.t_min))
    if abs(grid.t_min - t0) > 1e-9:
        raise ValidationError("t_min must be a whole calendar year for births lookup")
    return [t0 + y for y in range(grid.n_years)]


def step_cohorts(pop, mu_cell, xi_cell, step):
    """Advance cohorts one step along characteristics.

    pop has age on its last axis (leading axes batch over ensemble
    members); mu_cell and xi_cell are cell-centered values for the n_a - 1
    age cells of this step. Returns (new_pop with boundary node unset,
    deaths per cell, aged-out persons).
    """
    decay = np.exp(-mu_cell * step)
    loss = -np.expm1(-mu_cell * step)  # 1 - exp(-mu*step), accurate for small mu
    x = mu_cell * step
    with np.errstate(invalid="ignore", divide="ignore"):
        gain = np.where(x < _GAIN_LIMIT, xi_cell * step, xi_cell * loss / np.where(x == 0, 1.0, mu_cell))
    deaths = pop[..., :-1] * loss
    aged_out = pop[..., -1].copy()
    new_pop = np.empty_like(pop)
    new_pop[..., 0] = 0.0
    new_pop[..., 1:] = pop[..., :-1] * decay + gain
    return new_pop, deaths, aged_out


def simulate_population(inputs: DemographicInputs, grid: AgeTimeGrid) -> Field:
    """Integrate the population forward over the whole grid."""
    if inputs.hazard is None:
        raise ValidationError("simulate_population needs inputs.hazard")
    inputs.validate_for(grid)
    mu_c = cell_means(inputs.hazard.values)
    xi_c = cell_means(inputs.immigration.values)
    births = inputs.births_for(grid)
    u = np.empty((grid.n_a, grid.n_t))
    u[:, 0] = inputs.initial_population
    for j in range(grid.n_t - 1):
        nxt, _, _ = step_cohorts(u[:, j], mu_c[:, j], xi_c[:, j], grid.step)
        nxt[0] = births[grid.year_of_time_index(j)] / grid.step
        u[:, j + 1] = nxt
    return Field(grid, u)


def advance_year(pop, hazard_nodes, immigration_nodes, births_per_year, grid,
                 columns_out=None):
    """Advance node-lumped populations through one calendar year.

    Coefficients are held constant in time over the year and centered in
    age. All arrays have age on the last axis and may carry leading batch
    axes. Returns (end-of-year population, deaths per age cell summed over
    the year's steps).
    """
    npy = grid.nodes_per_year
    mu_cell = 0.5 * (hazard_nodes[..., :-1] + hazard_nodes[..., 1:])
    xi_cell = 0.5 * (immigration_nodes[..., :-1] + immigration_nodes[..., 1:])
    deaths = np.zeros(pop.shape[:-1] + (grid.n_a - 1,))
    boundary = births_per_year / grid.step
    for m in range(npy):
        pop, d, _ = step_cohorts(pop, mu_cell, xi_cell, grid.step)
        pop[..., 0] = boundary
        deaths += d
        if columns_out is not None:
            columns_out[..., m] = pop
    return pop, deaths


def annual_means(field: Field) -> np.ndarray:
    """(n_years, n_a) per-year coefficient vectors: mean over each year's
    step-start columns. Exact for fields that are constant within years."""
    grid = field.grid
    npy = grid.nodes_per_year
    starts = field.values[:, :-1]
    return starts.reshape(grid.n_a, grid.n_years, npy).mean(axis=2).T


def simulate_population_annual(inputs: DemographicInputs, annual_hazards: np.ndarray,
                               grid: AgeTimeGrid) -> Field:
    """Integrate with per-year hazard vectors (the calibration staircase).

    Bit-reproduces the year-by-year advance used during calibration, so a
    member re-simulated with its posterior hazards retraces the same
    population trajectory.
    """
    inputs.validate_for(grid)
    annual_hazards = np.asarray(annual_hazards, dtype=float)
    if annual_hazards.shape != (grid.n_years, grid.n_a):
        raise ValidationError(
            f"annual hazards shape {annual_hazards.shape} must be ({grid.n_years}, {grid.n_a})"
        )
    if np.any(annual_hazards < 0):
        raise ValidationError("hazard has negative entries")
    xi = annual_means(inputs.immigration)
    births = inputs.births_for(grid)
    npy = grid.nodes_per_year
    u = np.empty((grid.n_a, grid.n_t))
    u[:, 0] = inputs.initial_population
    pop = u[:, 0].copy()
    for y in range(grid.n_years):
        view = u[:, y * npy + 1:(y + 1) * npy + 1]
        pop, _ = advance_year(pop, annual_hazards[y], xi[y], births[y], grid,
                              columns_out=view)
    return Field(grid, u)


def death_counts(u: Field, hazard: Field, scheme: BinningScheme) -> BinnedCounts:
    """Deaths implied by the stepping kernel, aggregated per (age bin, year bin).

    The increment for the step starting at node (i, m) is
    ``u[i, m] * (1 - exp(-mu_cell * step))`` and is attributed to the age
    cell ``[a_i, a_{i+1})`` and the year containing ``t_m``.
    """
    grid = u.grid
    if hazard.grid != grid:
        raise ValidationError("hazard lives on a different grid than u")
    mu_c = cell_means(hazard.values)
    deaths_cell = u.values[:-1, :-1] * (-np.expm1(-mu_c * grid.step))
    a_bin = scheme.age_bin_of_cells(grid)
    t_bin = scheme.year_bin_of_cells(grid)
    counts = np.zeros((scheme.n_age_bins, scheme.n_year_bins))
    a_ok = a_bin >= 0
    t_ok = t_bin >= 0
    np.add.at(counts, (a_bin[a_ok][:, None], t_bin[t_ok][None, :]),
              deaths_cell[np.ix_(a_ok, t_ok)])
    return BinnedCounts(scheme, counts)


@dataclass(frozen=True, eq=False)
class MassBalanceLedger:
    """Per-year conservation accounting for a simulated population."""

    years: np.ndarray
    delta_population: np.ndarray
    births_in: np.ndarray
    immigration_in: np.ndarray
    deaths_out: np.ndarray
    aged_out: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return (self.delta_population - self.births_in - self.immigration_in
                + self.deaths_out + self.aged_out)


def mass_balance_report(u: Field, inputs: DemographicInputs) -> MassBalanceLedger:
    """Reconstruct the per-year ledger from the same cell quantities the
    stepping kernel uses, so it closes to rounding for a field produced by
    :func:`simulate_population` with these inputs."""
    grid = u.grid
    if inputs.hazard is None:
        raise ValidationError("mass_balance_report needs inputs.hazard")
    inputs.validate_for(grid)
    mu_c = cell_means(inputs.hazard.values)
    xi_c = cell_means(inputs.immigration.values)
    x = mu_c * grid.step
    loss = -np.expm1(-x)
    with np.errstate(invalid="ignore", divide="ignore"):
        gain = np.where(x < _GAIN_LIMIT, xi_c * grid.step,
                        xi_c * loss / np.where(x == 0, 1.0, mu_c))
    deaths_cell = u.values[:-1, :-1] * loss

    n_years = grid.n_years
    npy = grid.nodes_per_year
    years = np.array(_years_needed(grid))
    dpop = np.zeros(n_years)
    births_in = np.zeros(n_years)
    imm_in = np.zeros(n_years)
    deaths_out = np.zeros(n_years)
    aged = np.zeros(n_years)
    totals = u.values.sum(axis=0)
    for y in range(n_years):
        j0, j1 = y * npy, (y + 1) * npy
        dpop[y] = totals[j1] - totals[j0]
        births_in[y] = u.values[0, j0 + 1:j1 + 1].sum()
        imm_in[y] = gain[:, j0:j1].sum()
        deaths_out[y] = deaths_cell[:, j0:j1].sum()
        aged[y] = u.values[-1, j0:j1].sum()
    return MassBalanceLedger(years, dpop, births_in, imm_in, deaths_out, aged)
