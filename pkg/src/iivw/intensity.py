"""Proportional visit-intensity model with a gap-time baseline.

The visit intensity of subject ``i`` in grid cell ``s`` is

    lambda0(B_i(s)) * exp(x_i(s)' gamma)

with ``B_i(s)`` the gap entering the cell and ``x_i(s)`` built from the
treatment, the covariates carried forward from the last visit before ``s``
and optionally baseline covariates.  ``gamma`` is estimated by maximizing the
Andersen-Gill (Breslow ties) partial likelihood; ``lambda0`` by a Breslow-type
estimator bucketed on gap time.

Rates are expressed per grid cell: ``lambda0(b) * exp(.)`` is the probability
of a visit in one cell.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import Diverged, MissingBucket, NoEvents, SingularInformation, ValidationError
from .panel import PanelDataset, SubjectPath, gap_before, locf_covariates

MAX_ITER = 50
MAX_HALVINGS = 30
MAX_CONDITION = 1e10


class BaselineMode(str, enum.Enum):
    RISK_SET = "RISK_SET"
    EVENT_WEIGHTED_LITERAL = "EVENT_WEIGHTED_LITERAL"


@dataclass(frozen=True)
class IntensitySpec:
    """Which columns enter the linear predictor.

    ``covariates`` names entries of ``("treatment",) + covariate_names +
    baseline_names``; ``None`` means treatment plus every carried-forward
    covariate.  ``reduced=True`` forces the treatment-only model.

    ``time_scale`` picks the risk-set index of the partial likelihood:
    ``"gap"`` compares subjects sharing the same gap time, ``"calendar"``
    subjects at risk at the same grid time.
    """

    covariates: tuple[str, ...] | None = None
    reduced: bool = False
    time_scale: str = "gap"

    def __post_init__(self):
        if self.time_scale not in ("gap", "calendar"):
            raise ValidationError(f"unknown time_scale {self.time_scale!r}")
        if not self.reduced and self.covariates is not None and len(self.covariates) == 0:
            raise ValidationError("an intensity model needs at least one covariate")

    def columns(self, dataset: PanelDataset) -> tuple[str, ...]:
        if self.reduced:
            return ("treatment",)
        if self.covariates is None:
            return ("treatment",) + tuple(dataset.covariate_names)
        return tuple(self.covariates)

    def reduce(self) -> "IntensitySpec":
        return replace(self, covariates=None, reduced=True)


def design_matrix(dataset: PanelDataset, spec: IntensitySpec) -> np.ndarray:
    rt = dataset.risk_table
    cols = []
    for name in spec.columns(dataset):
        if name == "treatment":
            cols.append(rt.treatment)
        elif name in dataset.covariate_names:
            cols.append(rt.z[:, dataset.covariate_names.index(name)])
        elif name in dataset.baseline_names:
            cols.append(rt.k[:, dataset.baseline_names.index(name)])
        else:
            raise ValidationError(f"unknown intensity covariate {name!r}")
    return np.column_stack(cols) if cols else np.zeros((rt.n_rows, 0))


def subject_design_row(dataset: PanelDataset, spec: IntensitySpec, subject: SubjectPath, t: float) -> np.ndarray:
    """Linear-predictor covariates of one subject in force at ``t-``."""
    z = locf_covariates(subject, t, strict=t > 0)
    row = []
    for name in spec.columns(dataset):
        if name == "treatment":
            row.append(float(subject.treatment))
        elif name in dataset.covariate_names:
            row.append(z[dataset.covariate_names.index(name)])
        else:
            row.append(subject.baseline_covariates[dataset.baseline_names.index(name)])
    return np.array(row)


@dataclass(frozen=True)
class BaselineTable:
    """Baseline visit rate per gap bucket (gap measured in grid cells)."""

    mode: BaselineMode
    gaps: np.ndarray
    rates: np.ndarray
    dt: float
    smoothing: bool = True
    # sum of exp(linear predictor) over the at-risk cells of each bucket
    exposure: np.ndarray | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict[float, float]:
        return {round(float(g) * self.dt, 12): float(r) for g, r in zip(self.gaps, self.rates)}

    def scaled(self, c: float) -> "BaselineTable":
        return replace(self, rates=self.rates * c)

    def lookup(self, gap_cells) -> np.ndarray:
        """Rates at integer gap buckets; empty buckets take the nearest populated one (ties: smaller gap)."""
        g = np.asarray(gap_cells, dtype=np.int64)
        idx = np.searchsorted(self.gaps, g)
        n = len(self.gaps)
        right = np.minimum(idx, n - 1)
        left = np.maximum(idx - 1, 0)
        exact = self.gaps[right] == g
        if not self.smoothing and not exact.all():
            missing = g[~exact][0]
            raise MissingBucket(f"no baseline estimate at gap {missing * self.dt}")
        use_right = exact | (idx == 0) | ((self.gaps[right] - g) < (g - self.gaps[left]))
        use_right &= idx < n
        return np.where(use_right, self.rates[right], self.rates[left])

    def lookup_time(self, gap: float) -> float:
        return float(self.lookup([int(round(gap / self.dt))])[0])


@dataclass(frozen=True)
class IntensityFit:
    coefficients: np.ndarray
    spec: IntensitySpec
    columns: tuple[str, ...]
    baseline: BaselineTable | None
    iterations: int
    gradient_norm: float
    loglik: float
    information: np.ndarray = field(repr=False)
    n_events: int = 0

    def linear_predictor(self, dataset: PanelDataset) -> np.ndarray:
        return design_matrix(dataset, self.spec) @ self.coefficients


def _strata(dataset: PanelDataset, spec: IntensitySpec) -> np.ndarray:
    rt = dataset.risk_table
    return rt.gap if spec.time_scale == "gap" else rt.cell


def _loglik_parts(X, strata, event, gamma):
    eta = X @ gamma
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    nb = int(strata.max()) + 1
    d = np.bincount(strata, weights=event, minlength=nb)
    s0 = np.bincount(strata, weights=w, minlength=nb)
    used = d > 0
    d, s0 = d[used], s0[used]
    p = X.shape[1]
    s1 = np.empty((d.size, p))
    for a in range(p):
        s1[:, a] = np.bincount(strata, weights=w * X[:, a], minlength=nb)[used]
    s2 = np.empty((d.size, p, p))
    for a in range(p):
        for b in range(a, p):
            col = np.bincount(strata, weights=w * X[:, a] * X[:, b], minlength=nb)[used]
            s2[:, a, b] = col
            s2[:, b, a] = col
    value = float(eta[event].sum() - np.sum(d * (np.log(s0) + shift)))
    xbar = s1 / s0[:, None]
    grad = X[event].sum(axis=0) - (d[:, None] * xbar).sum(axis=0)
    hess = -np.einsum("g,gab->ab", d, s2 / s0[:, None, None] - xbar[:, :, None] * xbar[:, None, :])
    return value, grad, hess


def partial_loglik_and_derivatives(dataset: PanelDataset, spec: IntensitySpec, gamma):
    """Log partial likelihood with its analytic gradient and Hessian at ``gamma``."""
    X = design_matrix(dataset, spec)
    gamma = np.asarray(gamma, dtype=float).reshape(X.shape[1])
    if not np.all(np.isfinite(gamma)):
        raise ValidationError("gamma must be finite")
    rt = dataset.risk_table
    return _loglik_parts(X, _strata(dataset, spec), rt.event, gamma)


def fit_partial_likelihood(
    dataset: PanelDataset,
    spec: IntensitySpec = IntensitySpec(),
    *,
    baseline_mode: BaselineMode = BaselineMode.RISK_SET,
) -> IntensityFit:
    """Newton-Raphson maximization of the partial likelihood from ``gamma = 0``."""
    rt = dataset.risk_table
    n_events = int(rt.event.sum())
    if n_events == 0:
        raise NoEvents("no post-baseline visits to fit the intensity model")
    X = design_matrix(dataset, spec)
    strata = _strata(dataset, spec)
    tol = 1e-9 * max(1, n_events)

    gamma = np.zeros(X.shape[1])
    value, grad, hess = _loglik_parts(X, strata, rt.event, gamma)
    it = 0
    while np.max(np.abs(grad), initial=0.0) >= tol:
        if it >= MAX_ITER:
            raise Diverged(f"partial likelihood did not converge in {MAX_ITER} iterations")
        info = -hess
        if np.linalg.cond(info) > MAX_CONDITION:
            raise SingularInformation("observed information matrix is singular; check for collinear covariates")
        step = np.linalg.solve(info, grad)
        for _ in range(MAX_HALVINGS + 1):
            cand = gamma + step
            new = _loglik_parts(X, strata, rt.event, cand)
            if new[0] >= value - 1e-12 * abs(value):
                break
            step = step / 2
        else:
            raise Diverged("step-halving failed to increase the partial likelihood")
        gamma = cand
        value, grad, hess = new
        it += 1
        if not np.all(np.isfinite(gamma)):
            raise Diverged("coefficients became non-finite")

    fit = IntensityFit(
        coefficients=gamma,
        spec=spec,
        columns=spec.columns(dataset),
        baseline=None,
        iterations=it,
        gradient_norm=float(np.max(np.abs(grad), initial=0.0)),
        loglik=value,
        information=-hess,
        n_events=n_events,
    )
    return replace(fit, baseline=breslow_baseline(dataset, fit, baseline_mode))


def breslow_baseline(
    dataset: PanelDataset, fit: IntensityFit, mode: BaselineMode = BaselineMode.RISK_SET
) -> BaselineTable:
    """Gap-bucketed Breslow-type baseline rate.

    ``RISK_SET``: events at gap ``b`` over the sum of ``exp(x'gamma)`` across
    every at-risk cell with gap ``b``.  ``EVENT_WEIGHTED_LITERAL``: the same
    numerator over the sum across the event cells only.
    """
    mode = BaselineMode(mode)
    rt = dataset.risk_table
    if not rt.event.any():
        raise NoEvents("no post-baseline visits for the baseline estimator")
    w = np.exp(fit.linear_predictor(dataset))
    nb = int(rt.gap.max()) + 1
    d = np.bincount(rt.gap, weights=rt.event, minlength=nb)
    risk = np.bincount(rt.gap, weights=w, minlength=nb)
    den = risk if mode is BaselineMode.RISK_SET else np.bincount(rt.gap, weights=w * rt.event, minlength=nb)
    gaps = np.flatnonzero(d > 0)
    return BaselineTable(mode, gaps.astype(np.int64), d[gaps] / den[gaps], dataset.grid.dt, exposure=risk[gaps])


def point_intensity(fit: IntensityFit, dataset: PanelDataset, subject: SubjectPath, t: float) -> float:
    """Fitted per-cell visit rate of ``subject`` at grid time ``t``.

    Uses the gap entering ``t`` and the covariates in force at ``t-``, i.e. the
    quantities that govern whether a visit happens at ``t``.
    """
    x = subject_design_row(dataset, fit.spec, subject, t)
    return fit.baseline.lookup_time(gap_before(subject, t)) * float(np.exp(x @ fit.coefficients))


def visit_point_intensity(fit: IntensityFit, dataset: PanelDataset) -> np.ndarray:
    """:func:`point_intensity` evaluated at every post-baseline visit row."""
    vr = dataset.visit_rows
    eta = fit.linear_predictor(dataset)[vr.risk_row]
    return fit.baseline.lookup(vr.gap) * np.exp(eta)
