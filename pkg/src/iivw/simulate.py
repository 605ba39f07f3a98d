"""Simulation of outcome data monitored through an endogenous visit process.

Each subject walks the time grid.  In every cell while at risk a visit happens
with probability ``min(1, scale * B * exp(gamma_I * I + gamma_Z * Z))`` where
``B`` is the gap entering the cell and ``Z`` the mediator carried forward from
the previous visit.  At a visit the mediator is redrawn, the outcome is drawn,
and the gap resets to 0.

The outcome recorded at a visit depends on the gap ``B`` at the visit instant
and on the mediator value that was in force when the visit was drawn, i.e.
the one carried forward to ``t-``.  That value is what couples the visit
process to the outcome; the freshly drawn mediator is recorded with the visit
and drives the *next* visit.  The time-0 record is the exception: its outcome
uses the baseline mediator draw.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .panel import GridSpec, PanelDataset, SubjectPath, VisitRecord, build_dataset

log = logging.getLogger(__name__)


class Variant(str, enum.Enum):
    MAIN = "MAIN"
    CONST_INTERCEPT_FIT = "CONST_INTERCEPT_FIT"
    TAU10 = "TAU10"
    CUMVISIT_Z = "CUMVISIT_Z"
    CONST_INTERCEPT_DGM = "CONST_INTERCEPT_DGM"


TRUE_EFFECT = 1.0


@dataclass(frozen=True)
class DgmConfig:
    n_subjects: int = 500
    grid: GridSpec = field(default_factory=GridSpec)
    gamma_I: float = 0.0
    gamma_Z: float = 0.0
    baseline_rate_scale: float = 0.02
    treatment_coefs: tuple[float, float, float, float] = (0.5, 0.8, 0.05, -1.0)
    # gap slope, treatment, centred mediator, K1, K2, K3
    outcome_coefs: tuple[float, ...] = (0.2, 1.0, -0.8, 0.4, 0.05, -0.6)
    constant_intercept: float = 0.02
    noise_sd: float = 0.5
    mediator_mean: tuple[float, float] = (4.0, 2.0)  # indexed by treatment
    mediator_sd: tuple[float, float] = (2.0, 1.0)
    cumvisit_slope: float = 0.2
    variant: Variant = Variant.MAIN
    master_seed: int = 20240101

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.n_subjects < 2:
            raise ValueError("n_subjects must be >= 2")

    @classmethod
    def for_variant(cls, variant: Variant | str, **kw) -> "DgmConfig":
        variant = Variant(variant)
        if variant is Variant.TAU10 and "grid" not in kw:
            kw["grid"] = GridSpec(dt=0.01, tau=10.0)
        return cls(variant=variant, **kw)

    @property
    def beta_true(self) -> float:
        return self.outcome_coefs[1]

    def with_gamma(self, gamma_I: float, gamma_Z: float) -> "DgmConfig":
        return replace(self, gamma_I=gamma_I, gamma_Z=gamma_Z)


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def mediator_mean(config: DgmConfig, treatment: int, cum_visits: int) -> float:
    mu = config.mediator_mean[treatment]
    if config.variant is Variant.CUMVISIT_Z:
        mu += config.cumvisit_slope * cum_visits
    return mu


def variant_mediator_update(config: DgmConfig, treatment: int, cum_visits: int, rng: np.random.Generator) -> float:
    """Draw the mediator at a visit, given treatment and prior follow-up visits."""
    if cum_visits < 0:
        raise ValueError("cum_visits must be >= 0")
    return rng.normal(mediator_mean(config, treatment, cum_visits), config.mediator_sd[treatment])


def _outcome(config, gap, treatment, z, z_mean, k, rng):
    a_gap, b_trt, b_z, b1, b2, b3 = config.outcome_coefs
    if config.variant is Variant.CONST_INTERCEPT_DGM:
        intercept = config.constant_intercept
    else:
        intercept = a_gap * gap
    return (
        intercept
        + b_trt * treatment
        + b_z * (z - z_mean)
        + b1 * k[0]
        + b2 * k[1]
        + b3 * k[2]
        + rng.normal(0.0, config.noise_sd, size=np.shape(z))
    )


def simulate_subject(config: DgmConfig, rng: np.random.Generator, subject_id=0) -> SubjectPath:
    grid = config.grid
    dt = grid.dt
    k = (rng.normal(1.0, 1.0), float(rng.binomial(1, 0.55)), rng.normal(0.0, 1.0))
    c0, c1, c2, c3 = config.treatment_coefs
    treatment = int(rng.random() < _expit(c0 + c1 * k[0] + c2 * k[1] + c3 * k[2]))
    censor = rng.uniform(grid.tau / 2, grid.tau)
    n_risk = grid.last_cell_at_risk(censor)
    u = rng.random(n_risk)

    cum = 0
    z = variant_mediator_update(config, treatment, cum, rng)
    visits = [VisitRecord(0.0, _outcome(config, 0.0, treatment, z, mediator_mean(config, treatment, cum), k, rng), (z,))]
    trace_gap = []
    clipped = 0
    gaps_all = np.arange(1, n_risk + 1) * dt
    trt_factor = np.exp(config.gamma_I * treatment)
    last = 0
    while last < n_risk:
        gaps = gaps_all[: n_risk - last]
        p = gaps * (config.baseline_rate_scale * trt_factor * np.exp(config.gamma_Z * z))
        hit = np.flatnonzero(u[last:] < p)
        if hit.size == 0:
            clipped += int(np.count_nonzero(p >= 1))
            break
        j = int(hit[0])
        if p[j] >= 1:
            clipped += int(np.count_nonzero(p[: j + 1] >= 1))
        cell = last + j + 1
        gap = (j + 1) * dt
        # update order at a visit: mediator, outcome, gap reset
        z_carried, mean_carried = z, mediator_mean(config, treatment, cum)
        z = variant_mediator_update(config, treatment, cum, rng)
        y = _outcome(config, gap, treatment, z_carried, mean_carried, k, rng)
        cum += 1
        visits.append(VisitRecord(grid.time(cell), y, (z,)))
        trace_gap.append(gap)
        last = cell
    if clipped:
        log.warning("subject %s: %d cells had visit probability >= 1 (clipped)", subject_id, clipped)
    return SubjectPath(
        id=subject_id,
        treatment=treatment,
        baseline_covariates=k,
        censor_time=censor,
        visits=tuple(visits),
        dgm_truth={"clipped_cells": clipped, "visit_gaps": trace_gap},
    )


def subject_rng(master_seed: int, replicate_index: int, subject_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(replicate_index, subject_index)))


def simulate_dataset(config: DgmConfig, replicate_index: int) -> PanelDataset:
    if replicate_index < 0:
        raise ValueError("replicate_index must be >= 0")
    subjects = [
        simulate_subject(config, subject_rng(config.master_seed, replicate_index, i), subject_id=i)
        for i in range(config.n_subjects)
    ]
    return build_dataset(subjects, config.grid, covariate_names=("z",), baseline_names=("k1", "k2", "k3"))


def clipped_cells(dataset: PanelDataset) -> int:
    return sum(s.dgm_truth["clipped_cells"] for s in dataset.subjects if s.dgm_truth)
