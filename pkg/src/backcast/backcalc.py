"""Deconvolution of disease deaths into onset incidence.

Deaths in calendar year ``j`` and age bin ``k`` are modeled as a sum over
onset years ``s <= j``: persons who developed the disease in year ``s`` at
age ``a`` contribute with weight ``Gamma[j - s]`` (probability of death
``j - s + 1`` years after onset) at death age ``a + (j - s)``. Stacking
years gives a block lower-triangular matrix: block ``(j, s)`` couples
incidence in year ``s`` to deaths in year ``j`` and is exactly zero for
``s > j``.

The unknown incidence is piecewise constant on a basis of (typically
1-year) age bins per calendar year, stacked year-major. The inversion
minimizes ``||A x - d||^2 + beta ||R x||^2`` where ``R^T R`` applies a
second-difference (Dirichlet) penalty independently within each year's age
profile: smoothness across age is expected, smoothness across years is
not. The minimizer is unique for ``beta > 0`` because the penalty Gram
matrix is positive definite; the solver works on the augmented
least-squares form through orthogonal factorizations and asserts the
normal equations afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError, ValidationError
from .grid import AgeTimeGrid, BinnedCounts, BinningScheme, Field

_NORMAL_EQ_RTOL = 1e-8


def person_years(u: Field) -> np.ndarray:
    """Person-years lived per age node and calendar year, shape (n_a, n_years).

    Each step contributes its starting population times the step length.
    """
    grid = u.grid
    npy = grid.nodes_per_year
    starts = u.values[:, :-1]
    return starts.reshape(grid.n_a, grid.n_years, npy).sum(axis=2) * grid.step


def _year_starts(scheme_edges: np.ndarray, what: str) -> np.ndarray:
    starts = np.round(scheme_edges[:-1]).astype(int)
    if not (np.allclose(scheme_edges[:-1], starts, atol=1e-9)
            and np.allclose(np.diff(scheme_edges), 1.0, atol=1e-9)):
        raise ValidationError(f"{what} year bins must be consecutive calendar years")
    return starts


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Discrete death-convolution operator and (optionally) its data vector.

    Rows are stacked year-major over the death binning (K age bins x J
    years); columns year-major over the incidence basis (K' x J').
    """

    matrix: np.ndarray
    row_scheme: BinningScheme
    col_scheme: BinningScheme
    deaths: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def with_deaths(self, binned: BinnedCounts) -> "AssembledSystem":
        """Attach observed deaths, stacked year-major to match the rows."""
        same = (np.allclose(binned.scheme.age_edges, self.row_scheme.age_edges)
                and np.allclose(binned.scheme.year_edges, self.row_scheme.year_edges))
        if not same:
            raise ValidationError("death counts are binned on a different scheme than the rows")
        return replace(self, deaths=binned.counts.T.ravel())

    def future_block_max(self) -> float:
        """Largest |entry| coupling a death year to a later incidence year."""
        row_years = _year_starts(self.row_scheme.year_edges, "row")
        col_years = _year_starts(self.col_scheme.year_edges, "column")
        kk = self.row_scheme.n_age_bins
        kp = self.col_scheme.n_age_bins
        worst = 0.0
        for j, yj in enumerate(row_years):
            for s, ys in enumerate(col_years):
                if ys > yj:
                    block = self.matrix[j * kk:(j + 1) * kk, s * kp:(s + 1) * kp]
                    worst = max(worst, float(np.abs(block).max(initial=0.0)))
        return worst

    def validate(self) -> None:
        if np.any(self.matrix < 0):
            raise ValidationError("operator entries must be nonnegative")
        if self.future_block_max() != 0.0:
            raise ValidationError("operator couples deaths to future incidence years")


def assemble_operator(u: Field, gamma: np.ndarray, row_scheme: BinningScheme,
                      col_scheme: BinningScheme) -> AssembledSystem:
    """Build the death-convolution operator for the population field ``u``.

    ``gamma[l]`` is the probability of death ``l + 1`` years after onset.
    Onsets in basis bin (r, s) are weighted by the person-years of that
    cell; the death lands ``l`` whole years later at the onset age advanced
    by ``l``, and is dropped when the advanced age leaves the grid or the
    death binning (right- and age-censoring).
    """
    grid = u.grid
    gamma = np.asarray(gamma, dtype=float)
    npy = grid.nodes_per_year
    py = person_years(u)
    grid_year0 = int(round(grid.t_min))

    row_age = row_scheme.age_bin_of_nodes(grid)
    col_age = col_scheme.age_bin_of_nodes(grid)
    row_years = _year_starts(row_scheme.year_edges, "row")
    col_years = _year_starts(col_scheme.year_edges, "column")
    for y in np.concatenate([row_years, col_years]):
        if not grid_year0 <= y < grid_year0 + grid.n_years:
            raise ValidationError(f"scheme year {y} lies outside the grid span")
    row_year0 = int(row_years[0])

    kk, jj = row_scheme.n_age_bins, row_scheme.n_year_bins
    kp, jp = col_scheme.n_age_bins, col_scheme.n_year_bins
    a_mat = np.zeros((kk * jj, kp * jp))

    onset_nodes = np.flatnonzero(col_age >= 0)
    for s, cal_s in enumerate(col_years):
        weights = py[onset_nodes, cal_s - grid_year0]
        for lag in range(gamma.size):
            j = cal_s + lag - row_year0
            if j >= jj:
                break
            if j < 0:
                continue
            adv = onset_nodes + lag * npy
            ok = adv < grid.n_a
            if not np.any(ok):
                break
            src = onset_nodes[ok]
            k = row_age[adv[ok]]
            kept = k >= 0
            if not np.any(kept):
                continue
            rows = j * kk + k[kept]
            cols = s * kp + col_age[src[kept]]
            np.add.at(a_mat, (rows, cols), gamma[lag] * weights[ok][kept])
    return AssembledSystem(a_mat, row_scheme, col_scheme)


@dataclass(frozen=True, eq=False)
class Regularizer:
    """Second-difference penalty applied independently per year block.

    ``factor`` is any matrix C with C^T C equal to ``laplacian``; the full
    penalty matrix is I (x) C over ``n_blocks`` year blocks and is never
    needed explicitly for products.
    """

    laplacian: np.ndarray
    factor: np.ndarray
    n_blocks: int
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError(f"beta must be positive, got {self.beta!r}")

    @property
    def block_size(self) -> int:
        return self.laplacian.shape[0]

    @property
    def size(self) -> int:
        return self.block_size * self.n_blocks

    def _blocks(self, v: np.ndarray) -> np.ndarray:
        if v.shape != (self.size,):
            raise ValidationError(f"vector of size {v.shape} does not match penalty size {self.size}")
        return v.reshape(self.n_blocks, self.block_size)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """R v without materializing R."""
        return (self._blocks(np.asarray(v, dtype=float)) @ self.factor.T).ravel()

    def gram_apply(self, v: np.ndarray) -> np.ndarray:
        """R^T R v, i.e. the Laplacian applied within each year block."""
        return (self._blocks(np.asarray(v, dtype=float)) @ self.laplacian.T).ravel()

    def seminorm(self, v: np.ndarray) -> float:
        return float(np.linalg.norm(self.apply(v)))

    def materialize(self) -> np.ndarray:
        """Dense I (x) C; fine at these problem sizes, tests compare against it."""
        return np.kron(np.eye(self.n_blocks), self.factor)

    def augmented_block(self) -> np.ndarray:
        """sqrt(beta) * R, the rows appended to A in the augmented problem."""
        return np.sqrt(self.beta) * self.materialize()


def build_regularizer(n_age_bins: int, n_year_bins: int, beta: float) -> Regularizer:
    """Dirichlet second-difference matrix (2 on the diagonal, -1 off) of size
    ``n_age_bins``, factored so the penalty Gram matrix is exact."""
    if n_age_bins < 2:
        raise ValidationError("the age penalty needs at least 2 basis bins")
    if n_year_bins < 1:
        raise ValidationError("n_year_bins must be at least 1")
    lap = 2.0 * np.eye(n_age_bins) - np.eye(n_age_bins, k=1) - np.eye(n_age_bins, k=-1)
    factor = np.linalg.cholesky(lap).T  # upper triangular, factor^T factor == lap
    return Regularizer(lap, factor, int(n_year_bins), float(beta))


@dataclass(frozen=True, eq=False)
class IncidenceSolution:
    """Solution of the regularized inversion plus solve diagnostics."""

    values: np.ndarray        # stacked year-major, length K'*J'
    n_age_bins: int
    n_year_bins: int
    beta: float
    residual_norm: float      # ||A x - d||
    seminorm: float           # ||R x||
    normal_residual: float    # ||(A^T A + beta R^T R) x - A^T d||

    @property
    def surface(self) -> np.ndarray:
        """Incidence rates as an (age bin, year) matrix."""
        return self.values.reshape(self.n_year_bins, self.n_age_bins).T


def tikhonov_objective(a_mat: np.ndarray, d: np.ndarray, reg: Regularizer,
                       x: np.ndarray) -> float:
    r = a_mat @ x - d
    return float(r @ r + reg.beta * np.sum(reg.apply(x) ** 2))


def _check_normal_equations(a_mat, d, reg, x) -> float:
    atd = a_mat.T @ d
    g = a_mat.T @ (a_mat @ x) + reg.beta * reg.gram_apply(x) - atd
    gn, ref = float(np.linalg.norm(g)), float(np.linalg.norm(atd))
    if gn > _NORMAL_EQ_RTOL * ref:
        raise NumericalError(
            f"normal-equation residual {gn:.3e} exceeds {_NORMAL_EQ_RTOL:.0e} * {ref:.3e}"
        )
    return gn


def solve_tikhonov(system: AssembledSystem, reg: Regularizer,
                   method: str = "augmented") -> IncidenceSolution:
    """Unique minimizer of the penalized least-squares problem.

    ``method="augmented"`` stacks sqrt(beta) R under A and solves the tall
    least-squares problem by orthogonal factorization; ``"svd"`` transforms
    to standard form with the triangular penalty factor and filters the
    singular values (used for parameter sweeps). Both verify the normal
    equations on exit. Negative entries in the solution are preserved.
    """
    if system.deaths is None:
        raise ValidationError("system has no death vector attached")
    a_mat, d = system.matrix, system.deaths
    if a_mat.shape[1] != reg.size:
        raise ValidationError(
            f"operator has {a_mat.shape[1]} columns but the penalty covers {reg.size}"
        )
    if d.shape != (a_mat.shape[0],):
        raise ValidationError("death vector length does not match operator rows")

    if method == "augmented":
        stacked = np.vstack([a_mat, reg.augmented_block()])
        rhs = np.concatenate([d, np.zeros(reg.size)])
        x = np.linalg.lstsq(stacked, rhs, rcond=None)[0]
    elif method == "svd":
        x = _solve_standard_form(a_mat, d, reg, np.array([reg.beta]))[0]
    else:
        raise ValidationError(f"unknown solve method {method!r}")

    normal = _check_normal_equations(a_mat, d, reg, x)
    return IncidenceSolution(
        values=x,
        n_age_bins=reg.block_size,
        n_year_bins=reg.n_blocks,
        beta=reg.beta,
        residual_norm=float(np.linalg.norm(a_mat @ x - d)),
        seminorm=reg.seminorm(x),
        normal_residual=normal,
    )


def _solve_standard_form(a_mat, d, reg, betas) -> list[np.ndarray]:
    """Solutions for several betas from one orthogonal factorization.

    With z = R x the problem is standard-form ridge in z; one SVD of
    A R^{-1} yields every beta by rescaling the singular-value filter.
    """
    c = reg.factor
    n = reg.size
    kp = reg.block_size
    # A R^{-1}: right-solve each year block against the triangular factor
    at = np.empty_like(a_mat)
    for b in range(reg.n_blocks):
        block = a_mat[:, b * kp:(b + 1) * kp]
        at[:, b * kp:(b + 1) * kp] = solve_triangular(c.T, block.T, lower=True).T
    u_svd, s_svd, vt = np.linalg.svd(at, full_matrices=False)
    ub = u_svd.T @ d
    out = []
    for beta in betas:
        z = vt.T @ (s_svd * ub / (s_svd ** 2 + beta))
        x = np.empty(n)
        for b in range(reg.n_blocks):
            x[b * kp:(b + 1) * kp] = solve_triangular(c, z[b * kp:(b + 1) * kp], lower=False)
        out.append(x)
    return out


@dataclass(frozen=True, eq=False)
class LCurveSelection:
    """Sweep table and corner choice of the regularization weight."""

    beta: float
    betas: np.ndarray
    residual_norms: np.ndarray
    seminorms: np.ndarray
    curvatures: np.ndarray
    low_confidence: bool


def menger_curvature(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed three-point Menger curvature at interior points of a polyline.

    Positive where the curve turns like the corner of an L traversed with
    increasing beta (residual growing, seminorm shrinking).
    """
    kappa = np.full(x.size, np.nan)
    for i in range(1, x.size - 1):
        ax, ay = x[i] - x[i - 1], y[i] - y[i - 1]
        bx, by = x[i + 1] - x[i], y[i + 1] - y[i]
        cx, cy = x[i + 1] - x[i - 1], y[i + 1] - y[i - 1]
        den = np.hypot(ax, ay) * np.hypot(bx, by) * np.hypot(cx, cy)
        if den > 0:
            kappa[i] = 2.0 * (ax * by - ay * bx) / den
    return kappa


def lcurve_select(system: AssembledSystem, reg_template: Regularizer,
                  betas) -> LCurveSelection:
    """Solve across a log-spaced beta grid and pick the corner of the
    (log residual, log seminorm) curve by maximum Menger curvature.

    Degenerate curves (no finite positive curvature anywhere) still return
    the middle beta of the grid, flagged low-confidence.
    """
    betas = np.sort(np.asarray(list(betas), dtype=float))
    if betas.size < 3:
        raise ValidationError("the beta grid needs at least 3 points")
    if np.any(betas <= 0):
        raise ValidationError("betas must be positive")
    if system.deaths is None:
        raise ValidationError("system has no death vector attached")

    solutions = _solve_standard_form(system.matrix, system.deaths, reg_template, betas)
    res = np.empty(betas.size)
    semi = np.empty(betas.size)
    for i, (beta, x) in enumerate(zip(betas, solutions)):
        reg_b = replace(reg_template, beta=float(beta))
        _check_normal_equations(system.matrix, system.deaths, reg_b, x)
        res[i] = np.linalg.norm(system.matrix @ x - system.deaths)
        semi[i] = reg_b.seminorm(x)

    with np.errstate(divide="ignore"):
        kappa = menger_curvature(np.log(res), np.log(semi))
    finite = np.isfinite(kappa)
    if np.any(finite) and np.nanmax(kappa[finite]) > 0:
        best = int(np.nanargmax(np.where(finite, kappa, -np.inf)))
        return LCurveSelection(float(betas[best]), betas, res, semi, kappa, False)
    return LCurveSelection(float(betas[betas.size // 2]), betas, res, semi, kappa, True)
