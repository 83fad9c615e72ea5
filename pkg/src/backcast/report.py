"""Emission of run artifacts: CSV tables, SVG figures, cached aggregates.

The CSVs are the contract (each has a paired loader in :mod:`backcast.io`);
figures are diagnostics. ``aggregates.npz`` caches the quantile surfaces so
``report`` can re-emit tables and figures without recomputing the run.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import io as bio
from ._svg import Chart
from .errors import ValidationError
from .pipeline import AggregateEstimates

_STRATA_FILES = {
    "all": "incidence_by_year.csv",
    "under70": "incidence_under70.csv",
    "85plus": "incidence_85plus.csv",
}


class OutputTracker:
    """Records written paths so a failed run can sweep up partial outputs."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        p = Path(path)
        self.paths.append(p)
        return p

    def discard_all(self) -> None:
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass
        for parent in sorted({p.parent for p in self.paths}, reverse=True):
            try:
                parent.rmdir()
            except OSError:
                pass


def save_aggregates(path, estimates: AggregateEstimates) -> None:
    np.savez(
        path,
        year_labels=estimates.year_labels,
        age_edges=estimates.age_edges,
        hazard_lower=estimates.hazard_lower,
        hazard_median=estimates.hazard_median,
        hazard_upper=estimates.hazard_upper,
        incidence_lower=estimates.incidence_lower,
        incidence_median=estimates.incidence_median,
        incidence_upper=estimates.incidence_upper,
        raw_rates=estimates.raw_rates,
        **{f"stratum_{name}": table for name, table in estimates.strata.items()},
    )


def load_aggregates(path) -> AggregateEstimates:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"aggregates file {path} does not exist; run the pipeline first")
    with np.load(path) as z:
        strata = {key[len("stratum_"):]: z[key] for key in z.files if key.startswith("stratum_")}
        return AggregateEstimates(
            year_labels=z["year_labels"], age_edges=z["age_edges"],
            hazard_lower=z["hazard_lower"], hazard_median=z["hazard_median"],
            hazard_upper=z["hazard_upper"], incidence_lower=z["incidence_lower"],
            incidence_median=z["incidence_median"], incidence_upper=z["incidence_upper"],
            strata=strata, raw_rates=z["raw_rates"],
        )


def write_tables(out_dir: Path, estimates: AggregateEstimates, tracker: OutputTracker) -> None:
    for name, filename in _STRATA_FILES.items():
        lo, med, hi = estimates.strata[name]
        bio.write_yearly_table(tracker.add(out_dir / filename),
                               estimates.year_labels, lo, med, hi)
    bio.write_surface_table(tracker.add(out_dir / "hazard_surface.csv"),
                            estimates.year_labels, estimates.age_edges,
                            estimates.hazard_lower, estimates.hazard_median,
                            estimates.hazard_upper)
    bio.write_surface_table(tracker.add(out_dir / "incidence_surface.csv"),
                            estimates.year_labels, estimates.age_edges,
                            estimates.incidence_lower, estimates.incidence_median,
                            estimates.incidence_upper)


def write_figures(out_dir: Path, estimates: AggregateEstimates, tracker: OutputTracker) -> None:
    fig_dir = out_dir / "figures"
    mids = 0.5 * (estimates.age_edges[:-1] + estimates.age_edges[1:])
    for j, year in enumerate(estimates.year_labels):
        for kind, lo, med, hi, ylabel in (
            ("hazard", estimates.hazard_lower, estimates.hazard_median,
             estimates.hazard_upper, "onset hazard (1/year)"),
            ("incidence", estimates.incidence_lower, estimates.incidence_median,
             estimates.incidence_upper, "new cases per year"),
        ):
            chart = Chart(f"{kind.capitalize()} by age, {int(year)}", "age (years)", ylabel)
            chart.band(mids, lo[:, j], hi[:, j])
            chart.line(mids, med[:, j])
            path = tracker.add(fig_dir / f"{kind}_{int(year)}.svg")
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(chart.render())


def write_lcurve(out_dir: Path, selection, tracker: OutputTracker) -> None:
    bio.write_lcurve_table(tracker.add(out_dir / "lcurve.csv"), selection)
    chart = Chart("L-curve", "residual norm", "penalty seminorm", logx=True, logy=True)
    chart.line(selection.residual_norms, selection.seminorms)
    chosen = int(np.argmin(np.abs(selection.betas - selection.beta)))
    chart.marker(selection.residual_norms[chosen], selection.seminorms[chosen])
    path = tracker.add(out_dir / "lcurve.svg")
    path.write_text(chart.render())


def save_calibration(path, calibration) -> None:
    g = calibration.grid
    np.savez(path,
             grid=np.array([g.a_min, g.a_max, g.t_min, g.t_max, g.step]),
             year_labels=calibration.year_labels,
             log_hazards=calibration.log_hazards,
             observed=calibration.observed,
             predicted_prior=calibration.predicted_prior,
             predicted_posterior=calibration.predicted_posterior)


def load_calibration(path, grid):
    from .eki import EkiResult

    path = Path(path)
    if not path.exists():
        raise ValidationError(f"calibration file {path} does not exist; run calibrate first")
    with np.load(path) as z:
        stored = z["grid"]
        current = np.array([grid.a_min, grid.a_max, grid.t_min, grid.t_max, grid.step])
        if not np.allclose(stored, current):
            raise ValidationError("cached calibration was produced on a different grid")
        return EkiResult(grid, z["year_labels"], z["log_hazards"], z["observed"],
                         z["predicted_prior"], z["predicted_posterior"])


def write_mortality_table(out_dir: Path, calibration, tracker: OutputTracker) -> None:
    """Posterior mortality hazard by (year, age node): ensemble quantiles."""
    hazards = np.exp(calibration.log_hazards)  # (N_e, n_years, n_a)
    lo, med, hi = np.quantile(hazards, (0.005, 0.5, 0.995), axis=0,
                              method="averaged_inverted_cdf")
    ages = calibration.grid.ages
    rows = []
    for j, year in enumerate(calibration.year_labels):
        for i, age in enumerate(ages):
            rows.append((int(year), age, med[j, i], lo[j, i], hi[j, i]))
    bio.write_csv(tracker.add(out_dir / "mortality_hazard.csv"),
                  ["year", "age", "median", "lo99", "hi99"], rows)
