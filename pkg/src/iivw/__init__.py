"""Marginal treatment effects from irregularly observed longitudinal data.

Outcomes are regressed on treatment with rows weighted by the inverse
probability of treatment times a cumulated inverse-intensity-of-visit weight.
"""

from .errors import IIVWError, NumericError, ValidationError
from .estimator import (
    ESTIMATORS,
    BasisKind,
    BasisSpec,
    EstimatorResult,
    EstimatorSettings,
    bootstrap_variance,
    estimate_all,
    fit_weights,
    solve_weighted_ee,
    spline_basis,
)
from .experiment import (
    TABLE1_GAMMAS,
    TABLE1_LABELS,
    ReplicationSummary,
    ScenarioConfig,
    emit_report,
    gamma_from_label,
    label_from_gamma,
    load_config,
    parse_config,
    run_scenario,
)
from .intensity import BaselineMode, IntensitySpec, breslow_baseline, fit_partial_likelihood, point_intensity
from .io import export_csv, ingest_csv, parse_csv
from .panel import GridSpec, PanelDataset, SubjectPath, VisitRecord, at_risk, build_dataset, gap_time, locf_covariates
from .simulate import DgmConfig, Variant, simulate_dataset, simulate_subject, subject_rng
from .treatment import fit_logistic, ipt_weight
from .weights import KINDS, PathWeights, cumulate_weights, truncate_weights

__version__ = "0.1.0"
