"""Longitudinal treatment-effect estimators for randomized trials with dropout.

Provides complete-case ANCOVA and two mixed models for repeated measures
(shared and time-specific covariate effects), a seeded trial simulator and a
Monte Carlo harness for power and type I error studies.
"""
from .dgp import DropoutKind, ScenarioConfig, simulate_full_trial, simulate_trial
from .estimators import (ANCOVA, MMRM, FitResult, MMRMInteract, ModelSpec, fit,
                         wald_test)
from .exceptions import (ConfigError, EstimationError, MMRMSimError,
                         NonMonotoneMissingness, NotConverged, TrialDataError)
from .harness import asymptotic_check, run_grid, run_replication, run_scenario
from .trial_data import TrialDataset, Variant, read_csv, write_csv

__version__ = "0.1.0"

__all__ = [
    "ANCOVA", "MMRM", "MMRMInteract", "ModelSpec", "FitResult", "fit", "wald_test",
    "TrialDataset", "Variant", "read_csv", "write_csv",
    "ScenarioConfig", "DropoutKind", "simulate_full_trial", "simulate_trial",
    "run_replication", "run_scenario", "run_grid", "asymptotic_check",
    "MMRMSimError", "TrialDataError", "NonMonotoneMissingness", "ConfigError",
    "EstimationError", "NotConverged",
]
