"""Discretization lattice, sampled fields, and age/year binning.

Everything downstream lives on a uniform (age, time) lattice with a shared
step for both axes, so transport along unit-slope characteristics maps node
to node. Two kinds of data sit on the lattice:

* rate-like fields (hazard, incidence) are point samples of a function;
  :func:`bin_field` integrates them with the midpoint rule;
* population-like fields count persons lumped at nodes: the node at age
  ``a`` holds the people currently in ``[a, a + step)``. Counts aggregate by
  summing nodes, never by area quadrature (see :func:`sum_population_bins`).

Bins are half-open ``[lo, hi)``; the final bin in each axis also includes
its upper edge so the schemes tile the domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

#: relative tolerance for "lies on a grid node" checks
EDGE_RTOL = 1e-9


def _snap_to_multiple(span: float, step: float, axis: str) -> int:
    k = int(round(span / step))
    if k < 1 or abs(span - k * step) > EDGE_RTOL * max(abs(span), step):
        raise ValidationError(
            f"{axis} span {span!r} is not a positive integer multiple of step {step!r}"
        )
    return k


@dataclass(frozen=True)
class AgeTimeGrid:
    """Uniform (age, time) lattice with equal age and time steps."""

    a_min: float
    a_max: float
    t_min: float
    t_max: float
    step: float
    n_a: int
    n_t: int

    @property
    def ages(self) -> np.ndarray:
        return self.a_min + self.step * np.arange(self.n_a)

    @property
    def times(self) -> np.ndarray:
        return self.t_min + self.step * np.arange(self.n_t)

    @property
    def nodes_per_year(self) -> int:
        """Number of grid steps per calendar year; errors if 1/step is not integral."""
        k = int(round(1.0 / self.step))
        if abs(1.0 - k * self.step) > EDGE_RTOL:
            raise ValidationError(
                f"step {self.step!r} does not divide one year; yearly operations need it to"
            )
        return k

    @property
    def n_years(self) -> int:
        span = self.t_max - self.t_min
        k = int(round(span))
        if abs(span - k) > EDGE_RTOL * max(span, 1.0):
            raise ValidationError(f"time span {span!r} is not a whole number of years")
        return k

    def age_node_index(self, age: float) -> int:
        return _node_index(age, self.a_min, self.step, self.n_a, "age")

    def time_node_index(self, t: float) -> int:
        return _node_index(t, self.t_min, self.step, self.n_t, "time")

    def year_of_time_index(self, j: int) -> int:
        """Calendar-year offset (0-based from t_min) owning time node j.

        The final node belongs to the last year bin [t_max-1, t_max].
        """
        y = int(np.floor(j * self.step + EDGE_RTOL))
        return min(y, self.n_years - 1)


def _node_index(x: float, lo: float, step: float, n: int, axis: str) -> int:
    pos = (x - lo) / step
    i = int(round(pos))
    if i < 0 or i >= n or abs(pos - i) > EDGE_RTOL * max(abs(pos), 1.0):
        raise ValidationError(f"{axis} value {x!r} does not lie on a grid node")
    return i


def make_grid(a_min: float, a_max: float, t_min: float, t_max: float,
              step: float = 0.25) -> AgeTimeGrid:
    """Build a validated grid; spans must be positive integer multiples of step."""
    if not step > 0:
        raise ValidationError(f"step must be positive, got {step!r}")
    n_a = _snap_to_multiple(a_max - a_min, step, "age") + 1
    n_t = _snap_to_multiple(t_max - t_min, step, "time") + 1
    return AgeTimeGrid(float(a_min), float(a_max), float(t_min), float(t_max),
                       float(step), n_a, n_t)


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar function sampled on an AgeTimeGrid, shape (n_a, n_t)."""

    grid: AgeTimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_a, self.grid.n_t):
            raise ValidationError(
                f"field shape {v.shape} does not match grid ({self.grid.n_a}, {self.grid.n_t})"
            )
        if not np.all(np.isfinite(v)):
            i, j = np.argwhere(~np.isfinite(v))[0]
            raise ValidationError(f"field is not finite at node (age {i}, time {j})")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: AgeTimeGrid, value: float) -> "Field":
        return cls(grid, np.full((grid.n_a, grid.n_t), float(value)))

    @classmethod
    def from_function(cls, grid: AgeTimeGrid, fn) -> "Field":
        a, t = np.meshgrid(grid.ages, grid.times, indexing="ij")
        return cls(grid, fn(a, t))

    def require_nonnegative(self, name: str = "field") -> "Field":
        if np.any(self.values < 0):
            raise ValidationError(f"{name} has negative entries")
        return self


def cell_means(values: np.ndarray) -> np.ndarray:
    """Cell-centered samples from node samples (mean of the 4 corners)."""
    return 0.25 * (values[:-1, :-1] + values[1:, :-1]
                   + values[:-1, 1:] + values[1:, 1:])


@dataclass(frozen=True, eq=False)
class BinningScheme:
    """Half-open age x calendar-year bins whose edges sit on grid nodes."""

    age_edges: np.ndarray
    year_edges: np.ndarray

    def __post_init__(self):
        for name in ("age_edges", "year_edges"):
            e = np.asarray(getattr(self, name), dtype=float)
            if e.ndim != 1 or e.size < 2:
                raise ValidationError(f"{name} needs at least 2 edges")
            if not np.all(np.diff(e) > 0):
                raise ValidationError(f"{name} must be strictly increasing")
            e = e.copy()
            e.setflags(write=False)
            object.__setattr__(self, name, e)

    @property
    def n_age_bins(self) -> int:
        return self.age_edges.size - 1

    @property
    def n_year_bins(self) -> int:
        return self.year_edges.size - 1

    def age_edge_nodes(self, grid: AgeTimeGrid) -> np.ndarray:
        return np.array([grid.age_node_index(a) for a in self.age_edges])

    def year_edge_nodes(self, grid: AgeTimeGrid) -> np.ndarray:
        return np.array([grid.time_node_index(t) for t in self.year_edges])

    def age_bin_of_nodes(self, grid: AgeTimeGrid) -> np.ndarray:
        """Bin index for every age node, -1 outside; top edge closed."""
        return _bin_of_nodes(self.age_edge_nodes(grid), grid.n_a)

    def year_bin_of_nodes(self, grid: AgeTimeGrid) -> np.ndarray:
        return _bin_of_nodes(self.year_edge_nodes(grid), grid.n_t)

    def age_bin_of_cells(self, grid: AgeTimeGrid) -> np.ndarray:
        """Bin index for every age cell [a_i, a_{i+1}), -1 outside."""
        return _bin_of_cells(self.age_edge_nodes(grid), grid.n_a - 1)

    def year_bin_of_cells(self, grid: AgeTimeGrid) -> np.ndarray:
        return _bin_of_cells(self.year_edge_nodes(grid), grid.n_t - 1)


def _bin_of_nodes(edge_nodes: np.ndarray, n_nodes: int) -> np.ndarray:
    out = np.full(n_nodes, -1, dtype=int)
    for k in range(edge_nodes.size - 1):
        out[edge_nodes[k]:edge_nodes[k + 1]] = k
    # the final bin keeps its upper edge so the scheme tiles the domain
    if edge_nodes[-1] < n_nodes:
        out[edge_nodes[-1]] = edge_nodes.size - 2
    return out


def _bin_of_cells(edge_nodes: np.ndarray, n_cells: int) -> np.ndarray:
    out = np.full(n_cells, -1, dtype=int)
    for k in range(edge_nodes.size - 1):
        out[edge_nodes[k]:edge_nodes[k + 1]] = k
    return out


def yearly_scheme(grid: AgeTimeGrid, age_edges) -> BinningScheme:
    """Scheme with the given age edges and one-calendar-year time bins."""
    years = grid.t_min + np.arange(grid.n_years + 1, dtype=float)
    return BinningScheme(np.asarray(age_edges, dtype=float), years)


@dataclass(frozen=True, eq=False)
class BinnedCounts:
    """Nonnegative counts per (age bin, year bin) of a BinningScheme."""

    scheme: BinningScheme
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        expected = (self.scheme.n_age_bins, self.scheme.n_year_bins)
        if c.shape != expected:
            raise ValidationError(f"counts shape {c.shape} does not match scheme {expected}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("counts contain non-finite entries")
        if np.any(c < 0):
            raise ValidationError("counts must be nonnegative")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def year_labels(self) -> np.ndarray:
        """Integer calendar year starting each year bin."""
        return np.asarray(np.round(self.scheme.year_edges[:-1]), dtype=int)


def bin_field(f: Field, scheme: BinningScheme, weight: Field | None = None) -> BinnedCounts:
    """Midpoint-rule integral of ``f`` (or ``f * weight``) over each bin.

    Cell values are the mean of the 4 corner nodes of the (pointwise)
    product, times the cell area. Second order in the grid step and
    positivity-preserving for nonnegative integrands.
    """
    values = f.values
    if weight is not None:
        if weight.grid is not f.grid and weight.grid != f.grid:
            raise ValidationError("weight lives on a different grid than f")
        values = values * weight.values
    grid = f.grid
    contrib = cell_means(values) * (grid.step * grid.step)
    a_bin = scheme.age_bin_of_cells(grid)
    t_bin = scheme.year_bin_of_cells(grid)
    counts = np.zeros((scheme.n_age_bins, scheme.n_year_bins))
    a_ok = a_bin >= 0
    t_ok = t_bin >= 0
    sub = contrib[np.ix_(a_ok, t_ok)]
    np.add.at(counts, (a_bin[a_ok][:, None], t_bin[t_ok][None, :]), sub)
    return BinnedCounts(scheme, counts)


def sum_population_bins(values: np.ndarray, edges, grid: AgeTimeGrid) -> np.ndarray:
    """Sum node-lumped person counts over half-open age bins (top edge closed).

    ``values`` has age on its last axis; returns sums with that axis
    replaced by the bin axis.
    """
    scheme_edges = np.asarray(edges, dtype=float)
    edge_nodes = np.array([grid.age_node_index(a) for a in scheme_edges])
    node_bin = _bin_of_nodes(edge_nodes, grid.n_a)
    n_bins = scheme_edges.size - 1
    out = np.zeros(values.shape[:-1] + (n_bins,))
    for k in range(n_bins):
        out[..., k] = values[..., node_bin == k].sum(axis=-1)
    return out
