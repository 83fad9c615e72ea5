"""Reconstruction of age- and time-specific chronic-disease incidence from
age-binned mortality counts.

Two inverse stages share a common (age, time) lattice: an ensemble Kalman
calibration of the all-cause mortality hazard driving an age-structured
population model, and a regularized deconvolution of disease-specific
deaths through an onset-to-death delay kernel. A Monte Carlo pipeline
chains them per ensemble member and aggregates quantile bands.
"""

from .backcalc import (AssembledSystem, IncidenceSolution, LCurveSelection,
                       Regularizer, assemble_operator, build_regularizer,
                       lcurve_select, solve_tikhonov)
from .demography import (DemographicInputs, MassBalanceLedger, death_counts,
                         mass_balance_report, simulate_population,
                         simulate_population_annual)
from .eki import (EkiResult, EkiState, LogHazardPrior, MortalityCalibrator,
                  ObservationModel, eki_step, forward_observe, kalman_update,
                  member_streams, run_eki)
from .errors import BackcastError, NumericalError, ValidationError
from .estimators import IncidenceBackCalculator
from .grid import (AgeTimeGrid, BinnedCounts, BinningScheme, Field, bin_field,
                   make_grid, yearly_scheme)
from .onset import KernelSamplerConfig, WeibullKernel, sample_kernel, year_weights
from .pipeline import (AggregateEstimates, EnsembleRun, IncidencePipeline,
                       PipelineSettings, ScenarioData, SyntheticScenario,
                       TruthConfig, aggregate, apply_reporting_corrections,
                       generate_synthetic_scenario, run_ensemble, run_member,
                       sample_member_inputs)

__version__ = "0.1.0"

__all__ = [
    "AgeTimeGrid", "AggregateEstimates", "AssembledSystem", "BackcastError",
    "BinnedCounts", "BinningScheme", "DemographicInputs", "EkiResult",
    "EkiState", "EnsembleRun", "Field", "IncidenceBackCalculator",
    "IncidencePipeline", "IncidenceSolution", "KernelSamplerConfig",
    "LCurveSelection", "LogHazardPrior", "MassBalanceLedger",
    "MortalityCalibrator", "NumericalError", "ObservationModel",
    "PipelineSettings", "Regularizer", "ScenarioData", "SyntheticScenario",
    "TruthConfig", "ValidationError", "WeibullKernel", "aggregate",
    "apply_reporting_corrections", "assemble_operator", "bin_field",
    "build_regularizer", "death_counts", "eki_step", "forward_observe",
    "generate_synthetic_scenario", "kalman_update", "lcurve_select",
    "make_grid", "mass_balance_report", "member_streams", "run_eki",
    "run_ensemble", "run_member", "sample_kernel", "sample_member_inputs",
    "simulate_population", "simulate_population_annual", "solve_tikhonov",
    "year_weights", "yearly_scheme",
]
