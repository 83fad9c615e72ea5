"""Estimator wrapper for the single-member incidence back-calculation.

The ensemble pipeline calls the functional layer directly; this class is
the composable front door: construct with hyperparameters, fit on a
population field plus binned disease deaths, read the fitted surface.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import backcalc
from .grid import BinnedCounts, Field
from .onset import WeibullKernel, year_weights
from .pipeline import incidence_basis


class IncidenceBackCalculator(BaseEstimator):
    """Regularized deconvolution of disease deaths into onset incidence.

    Parameters
    ----------
    beta : float or "lcurve"
        Regularization weight, or corner selection over ``beta_grid``.
    beta_grid : sequence of float, optional
        Log-spaced sweep grid used when ``beta="lcurve"``.
    onset_floor : float
        Minimum onset age of the incidence basis.
    age_bin_years : float
        Width of the basis age bins.
    horizon_years : int
        Years of delay-kernel support retained.
    """

    def __init__(self, beta=1e6, beta_grid=None, onset_floor=40.0,
                 age_bin_years=1.0, horizon_years=30):
        self.beta = beta
        self.beta_grid = beta_grid
        self.onset_floor = onset_floor
        self.age_bin_years = age_bin_years
        self.horizon_years = horizon_years

    def fit(self, population: Field, deaths: BinnedCounts,
            kernel: WeibullKernel | None = None, gamma=None):
        """Assemble the death operator for this population and solve.

        Exactly one of ``kernel`` (year weights derived over the horizon)
        or ``gamma`` (explicit weights) must be given.
        """
        if (kernel is None) == (gamma is None):
            raise ValueError("pass exactly one of kernel= or gamma=")
        if gamma is None:
            gamma = year_weights(kernel, self.horizon_years)
        grid = population.grid
        col_scheme = incidence_basis(grid, self.onset_floor, self.age_bin_years)
        system = backcalc.assemble_operator(population, np.asarray(gamma, dtype=float),
                                            deaths.scheme, col_scheme).with_deaths(deaths)

        if self.beta == "lcurve":
            grid_betas = (np.logspace(-2, 10, 13) if self.beta_grid is None
                          else np.asarray(list(self.beta_grid), dtype=float))
            template = backcalc.build_regularizer(col_scheme.n_age_bins,
                                                  col_scheme.n_year_bins, 1.0)
            self.lcurve_ = backcalc.lcurve_select(system, template, grid_betas)
            chosen = self.lcurve_.beta
        else:
            self.lcurve_ = None
            chosen = float(self.beta)

        reg = backcalc.build_regularizer(col_scheme.n_age_bins,
                                         col_scheme.n_year_bins, chosen)
        self.solution_ = backcalc.solve_tikhonov(system, reg)
        self.system_ = system
        self.col_scheme_ = col_scheme
        self.beta_ = chosen
        self.incidence_ = self.solution_.surface
        return self

    def _check_fitted(self):
        if not hasattr(self, "solution_"):
            raise NotFittedError("IncidenceBackCalculator is not fitted yet")

    def predict_deaths(self) -> np.ndarray:
        """Deaths implied by the fitted incidence, as a (K, J) matrix."""
        self._check_fitted()
        flat = self.system_.matrix @ self.solution_.values
        kk = self.system_.row_scheme.n_age_bins
        return flat.reshape(self.system_.row_scheme.n_year_bins, kk).T
