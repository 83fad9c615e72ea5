"""Command-line driver.

Commands: ``synth`` (generate a synthetic scenario's input CSVs),
``calibrate`` (mortality calibration, cached as calibration.npz),
``backcalc`` (incidence reconstruction from a cached calibration),
``lcurve`` (regularization-weight sweep), ``run`` (the full pipeline),
``report`` (re-emit tables and figures from cached aggregates).

Exit codes: 0 success, 1 validation failure, 2 numerical failure. Partial
outputs of a failed command are removed.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np

from . import io as bio
from . import pipeline as pipe
from . import report as rpt
from .backcalc import LCurveSelection
from .errors import NumericalError, ValidationError

_CALIBRATION_FILE = "calibration.npz"
_AGGREGATES_FILE = "aggregates.npz"


def _config_options(fn):
    @click.option("--config", "config_path", required=True,
                  type=click.Path(dir_okay=False), help="run configuration file")
    @click.option("--seed", type=int, default=None, help="override ensemble.seed")
    @click.option("--beta", default=None, help="override backcalc.beta (number or 'lcurve')")
    @click.option("--ensemble-size", type=int, default=None, help="override ensemble.size")
    @click.option("--out", default=None, type=click.Path(file_okay=False),
                  help="override output.directory")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def _load_config(config_path, seed, beta, ensemble_size, out) -> bio.RunConfig:
    overrides = {}
    if seed is not None:
        overrides["ensemble.seed"] = seed
    if beta is not None:
        overrides["backcalc.beta"] = "lcurve" if str(beta).lower() == "lcurve" else float(beta)
    if ensemble_size is not None:
        overrides["ensemble.size"] = ensemble_size
    if out is not None:
        overrides["output.directory"] = out
    return bio.RunConfig.from_file(config_path, overrides)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"error[validation]: {exc}", err=True)
            sys.exit(1)
        except NumericalError as exc:
            click.echo(f"error[numerical]: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _input_paths(cfg: bio.RunConfig) -> dict[str, Path]:
    return {name: cfg.input_path(name)
            for name in ("population", "births", "immigration",
                         "deaths_all_cause", "deaths_disease")}


def _load_scenario(cfg: bio.RunConfig) -> pipe.ScenarioData:
    paths = _input_paths(cfg)
    edges, totals = bio.load_population_csv(paths["population"])
    years, tot, shp, scl = bio.load_immigration_csv(paths["immigration"])
    return pipe.ScenarioData(
        all_cause_deaths=bio.load_deaths_csv(paths["deaths_all_cause"]),
        disease_deaths=bio.load_deaths_csv(paths["deaths_disease"]),
        census_age_edges=edges, census_totals=totals,
        births=bio.load_births_csv(paths["births"]),
        immigration_years=years, immigration_totals=tot,
        immigration_shapes=shp, immigration_scales=scl,
    )


@click.group()
def main():
    """Reconstruct disease incidence from age-binned mortality counts."""


@main.command()
@_config_options
@_guarded
def synth(config_path, seed, beta, ensemble_size, out):
    """Generate a synthetic scenario and write its input CSVs."""
    cfg = _load_config(config_path, seed, beta, ensemble_size, out)
    grid = cfg.make_grid()
    truth = pipe.TruthConfig(
        kernel_shape=cfg["onset.shape_mean"], kernel_scale=cfg["onset.scale_mean"],
        horizon_years=cfg["onset.horizon_years"],
        onset_floor=cfg["backcalc.onset_floor"],
        row_bin_years=cfg["synthetic.row_bin_years"],
        poisson_noise=cfg["synthetic.noise"],
    )
    rng = np.random.default_rng(np.random.SeedSequence((cfg["ensemble.seed"], 9)))
    scenario = pipe.generate_synthetic_scenario(grid, truth, rng)

    tracker = rpt.OutputTracker()
    try:
        paths = _input_paths(cfg)
        bio.write_population_csv(tracker.add(paths["population"]),
                                 scenario.data.census_age_edges,
                                 scenario.data.census_totals)
        bio.write_births_csv(tracker.add(paths["births"]), scenario.data.births)
        bio.write_immigration_csv(tracker.add(paths["immigration"]),
                                  scenario.data.immigration_years,
                                  scenario.data.immigration_totals,
                                  scenario.data.immigration_shapes,
                                  scenario.data.immigration_scales)
        bio.write_deaths_csv(tracker.add(paths["deaths_all_cause"]),
                             scenario.data.all_cause_deaths)
        bio.write_deaths_csv(tracker.add(paths["deaths_disease"]),
                             scenario.data.disease_deaths)
        out_dir = cfg.output_dir()
        out_dir.mkdir(parents=True, exist_ok=True)
        bio.write_truth_incidence_csv(
            tracker.add(out_dir / "truth_incidence.csv"),
            np.round(scenario.col_scheme.year_edges[:-1]).astype(int),
            scenario.col_scheme.age_edges, scenario.truth_incidence)
    except Exception:
        tracker.discard_all()
        raise
    click.echo(f"synthetic scenario written ({len(tracker.paths)} files)")


@main.command()
@_config_options
@_guarded
def calibrate(config_path, seed, beta, ensemble_size, out):
    """Calibrate mortality hazards and cache the posterior ensemble."""
    cfg = _load_config(config_path, seed, beta, ensemble_size, out)
    grid = cfg.make_grid()
    data = _load_scenario(cfg)
    calibration = pipe.calibrate_ensemble(data, grid, cfg.pipeline_settings())
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    tracker = rpt.OutputTracker()
    try:
        rpt.save_calibration(tracker.add(out_dir / _CALIBRATION_FILE), calibration)
        rpt.write_mortality_table(out_dir, calibration, tracker)
    except Exception:
        tracker.discard_all()
        raise
    click.echo(f"calibration cached in {out_dir}")


@main.command(name="backcalc")
@_config_options
@_guarded
def backcalc_cmd(config_path, seed, beta, ensemble_size, out):
    """Back-calculate incidence using a cached calibration."""
    cfg = _load_config(config_path, seed, beta, ensemble_size, out)
    grid = cfg.make_grid()
    data = _load_scenario(cfg)
    out_dir = cfg.output_dir()
    calibration = rpt.load_calibration(out_dir / _CALIBRATION_FILE, grid)
    result = pipe.backcalculate_ensemble(data, grid, cfg.pipeline_settings(), calibration)
    tracker = rpt.OutputTracker()
    try:
        _emit_result(cfg, result, tracker, figures=True)
    except Exception:
        tracker.discard_all()
        raise
    click.echo(f"incidence tables written to {out_dir}")


@main.command()
@_config_options
@_guarded
def lcurve(config_path, seed, beta, ensemble_size, out):
    """Sweep the regularization weight and write the L-curve table/figure."""
    cfg = _load_config(config_path, seed, beta, ensemble_size, out)
    grid = cfg.make_grid()
    data = _load_scenario(cfg)
    settings = cfg.pipeline_settings()
    member_inputs = pipe.ensemble_member_inputs(data, grid, settings)
    calibration = pipe.calibrate_ensemble(data, grid, settings, member_inputs)
    corrected = pipe.apply_reporting_corrections(data.disease_deaths, settings.corrections)
    col_scheme = pipe.incidence_basis(grid, settings.onset_floor, settings.age_bin_years)
    selection = pipe._select_beta(data, calibration, member_inputs, corrected,
                                  col_scheme, settings)
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    tracker = rpt.OutputTracker()
    try:
        rpt.write_lcurve(out_dir, selection, tracker)
    except Exception:
        tracker.discard_all()
        raise
    flag = " (low confidence)" if selection.low_confidence else ""
    click.echo(f"selected beta = {selection.beta:g}{flag}")


@main.command()
@_config_options
@_guarded
def run(config_path, seed, beta, ensemble_size, out):
    """Full pipeline: calibrate, back-calculate, aggregate, report."""
    cfg = _load_config(config_path, seed, beta, ensemble_size, out)
    grid = cfg.make_grid()
    data = _load_scenario(cfg)
    result = pipe.run_ensemble(data, grid, cfg.pipeline_settings())
    tracker = rpt.OutputTracker()
    try:
        out_dir = cfg.output_dir()
        out_dir.mkdir(parents=True, exist_ok=True)
        rpt.save_calibration(tracker.add(out_dir / _CALIBRATION_FILE), result.calibration)
        rpt.write_mortality_table(out_dir, result.calibration, tracker)
        _emit_result(cfg, result, tracker, figures=True)
    except Exception:
        tracker.discard_all()
        raise
    click.echo(f"run complete; outputs in {cfg.output_dir()}")


def _emit_result(cfg: bio.RunConfig, result: pipe.PipelineResult,
                 tracker: rpt.OutputTracker, figures: bool) -> None:
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    rpt.save_aggregates(tracker.add(out_dir / _AGGREGATES_FILE), result.estimates)
    rpt.write_tables(out_dir, result.estimates, tracker)
    if figures:
        rpt.write_figures(out_dir, result.estimates, tracker)
    if result.lcurve is not None:
        rpt.write_lcurve(out_dir, result.lcurve, tracker)
    bio.write_manifest(tracker.add(out_dir / "manifest"), cfg, _input_paths(cfg))


@main.command()
@_config_options
@_guarded
def report(config_path, seed, beta, ensemble_size, out):
    """Re-emit tables and figures from a completed run directory."""
    cfg = _load_config(config_path, seed, beta, ensemble_size, out)
    out_dir = cfg.output_dir()
    if not out_dir.exists():
        raise ValidationError(f"run directory {out_dir} does not exist")
    estimates = rpt.load_aggregates(out_dir / _AGGREGATES_FILE)
    tracker = rpt.OutputTracker()
    try:
        rpt.write_tables(out_dir, estimates, tracker)
        rpt.write_figures(out_dir, estimates, tracker)
        lcurve_csv = out_dir / "lcurve.csv"
        if lcurve_csv.exists():
            betas, res, semi, curv, selected = bio.load_lcurve_table(lcurve_csv)
            chosen = float(betas[np.argmax(selected)]) if selected.any() else float(betas[len(betas) // 2])
            rpt.write_lcurve(out_dir, LCurveSelection(
                chosen, betas, res, semi, curv, not selected.any()), tracker)
    except Exception:
        tracker.discard_all()
        raise
    click.echo(f"report refreshed in {out_dir}")


if __name__ == "__main__":
    main()
