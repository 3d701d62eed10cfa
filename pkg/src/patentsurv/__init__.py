"""Survival analysis of patent renewal durations.

Kaplan-Meier curves and log-rank tests, Cox proportional-hazards regression
with tie corrections and proportional-hazards diagnostics, a seven-model
coefficient grid, and a simulator of synthetic right-censored cohorts.
"""

from ._kernels import BACKEND
from .coxph import (
    BaselineHazard,
    CoxFit,
    PhTestResult,
    TestUndefinedError,
    breslow_baseline,
    fit_cox,
    hazard_ratio_table,
    log_partial_likelihood,
    ph_test,
    schoenfeld_residuals,
    score_and_information,
)
from .dataset import (
    Dataset,
    DatasetError,
    DesignMatrix,
    IdentifiabilityError,
    PatentRecord,
    ValidationReport,
    dump_dataset,
    encode_design,
    load_dataset,
    validate,
)
from .model_suite import CoxModelSpec, SuiteResult, builtin_suite, run_suite
from .nonparametric import LogRankResult, SurvivalCurve, fit_km, greenwood_band, log_rank_test
from .numerics import chi_square_sf, finite_diff_gradient, solve_spd
from .simulator import SimConfig, simulate, truth_report

__version__ = "0.1.0"
