"""Scenario files, Monte Carlo orchestration, baselines and result emission."""

from .baselines import baseline_coc, baseline_cris, half_surface
from .config import ExperimentSpec, SpecError, load_spec, spec_from_dict
from .emit import ResultRecord, emit, summarize
from .experiments import run_experiment

__all__ = [
    "ExperimentSpec",
    "ResultRecord",
    "SpecError",
    "baseline_coc",
    "baseline_cris",
    "emit",
    "half_surface",
    "load_spec",
    "run_experiment",
    "spec_from_dict",
    "summarize",
]
