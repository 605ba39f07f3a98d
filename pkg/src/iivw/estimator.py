"""Weighted estimating equation for the marginal treatment effect.

Restricted to visit rows, the estimating equation is a weighted least-squares
problem: regress the outcome on ``[S(t), I]`` with row weight
``1 / (w_I * w_M)`` where ``w_I`` is the probability of the treatment
received and ``w_M`` a monitoring weight.  The six estimators differ only in
those two factors:

=====  ======  =====================
name   w_I     w_M
=====  ======  =====================
LS     1       1
IPT    ipt     1
IH     ipt     point intensity
USW    ipt     usw (truncated)
SW1    ipt     sw1 (truncated)
SW2    ipt     sw2 (truncated)
=====  ======  =====================
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateGaps, IIVWError, RankDeficient, TooManyFailures, ValidationError
from .intensity import BaselineMode, IntensitySpec, breslow_baseline, fit_partial_likelihood
from .panel import PanelDataset
from .treatment import fit_logistic, subject_ipt
from .weights import PathWeights, cumulate_weights, percentile_bounds, truncate_weights

log = logging.getLogger(__name__)

ESTIMATORS = ("LS", "IPT", "IH", "USW", "SW1", "SW2")


class BasisKind(str, enum.Enum):
    CONSTANT = "CONSTANT"
    CUBIC_SPLINE_GAP = "CUBIC_SPLINE_GAP"


@dataclass(frozen=True)
class BasisSpec:
    kind: BasisKind = BasisKind.CUBIC_SPLINE_GAP
    n_interior_knots: int = 3
    # "gap": time since last visit; "entry": time since cohort entry
    time_axis: str = "gap"

    def __post_init__(self):
        object.__setattr__(self, "kind", BasisKind(self.kind))
        if self.time_axis not in ("gap", "entry"):
            raise ValidationError(f"unknown basis time axis {self.time_axis!r}")

    def knots(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = self.n_interior_knots
        if np.unique(x).size < m + 2:
            raise DegenerateGaps(f"need at least {m + 2} distinct values for {m} interior knots")
        interior = np.quantile(x, np.arange(1, m + 1) / (m + 1))
        knots = np.concatenate([[x.min()], interior, [x.max()]])
        if np.any(np.diff(knots) <= 0):
            raise DegenerateGaps(f"knots not strictly increasing: {knots}")
        return knots


def natural_spline_basis(x, knots) -> np.ndarray:
    """Truncated-power natural cubic spline basis without the constant column.

    With knots ``xi_1 < ... < xi_K`` the columns are ``x`` and
    ``d_j(x) - d_{K-1}(x)`` for ``j = 1..K-2``, where
    ``d_j(x) = ((x - xi_j)_+^3 - (x - xi_K)_+^3) / (xi_K - xi_j)``.
    Each column is linear beyond the boundary knots.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(knots, dtype=float)
    K = xi.size

    def d(j):
        return (np.maximum(x - xi[j], 0) ** 3 - np.maximum(x - xi[K - 1], 0) ** 3) / (xi[K - 1] - xi[j])

    dK1 = d(K - 2)
    return np.column_stack([x] + [d(j) - dK1 for j in range(K - 2)])


def spline_basis(x, spec: BasisSpec = BasisSpec(), knots=None) -> np.ndarray:
    """Intercept-and-time design columns ``S(t)``."""
    x = np.asarray(x, dtype=float)
    ones = np.ones((x.size, 1))
    if spec.kind is BasisKind.CONSTANT:
        return ones
    if knots is None:
        knots = spec.knots(x)
    return np.hstack([ones, natural_spline_basis(x, knots)])


def wls(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least squares by a QR decomposition of the row-scaled design."""
    if X.shape[0] < X.shape[1]:
        raise RankDeficient(f"{X.shape[0]} rows for {X.shape[1]} columns")
    if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
        raise ValidationError("row weights must be positive and finite")
    sw = np.sqrt(w)
    Q, R = np.linalg.qr(X * sw[:, None])
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * diag.max():
        raise RankDeficient("weighted design matrix is rank deficient")
    return np.linalg.solve(R, Q.T @ (y * sw))


def clustered_sandwich(X, y, w, coef, cluster) -> np.ndarray:
    """Cluster-robust sandwich covariance of a WLS fit, weights held fixed."""
    resid = y - X @ coef
    bread = np.linalg.inv(X.T @ (X * w[:, None]))
    scores = X * (w * resid)[:, None]
    _, inv = np.unique(cluster, return_inverse=True)
    summed = np.zeros((inv.max() + 1, X.shape[1]))
    np.add.at(summed, inv, scores)
    return bread @ (summed.T @ summed) @ bread


@dataclass(frozen=True)
class EstimatorSettings:
    basis: BasisSpec = BasisSpec()
    lower_pct: float = 2.5
    upper_pct: float = 97.5
    truncate: bool = True
    baseline_mode: BaselineMode = BaselineMode.RISK_SET
    intensity: IntensitySpec = IntensitySpec()
    treatment_covariates: tuple[str, ...] | None = None
    stabilized_ipt: bool = False
    link: str = "exp"
    # winsorize the treatment factor too (off: only path weights are truncated)
    truncate_ipt: bool = False

    def __post_init__(self):
        object.__setattr__(self, "baseline_mode", BaselineMode(self.baseline_mode))


@dataclass
class EstimatorResult:
    estimates: dict[str, float]
    basis_coefs: dict[str, np.ndarray]
    variance: dict[str, dict[str, float]]
    n_visit_rows: int
    weight_summary: dict = field(default_factory=dict)
    gamma: np.ndarray | None = None
    delta: np.ndarray | None = None

    def rows(self):
        for name in ESTIMATORS:
            if name in self.estimates:
                v = self.variance.get(name, {})
                yield name, self.estimates[name], v.get("robust", float("nan")), v.get("bootstrap", float("nan")), self.n_visit_rows


def monitoring_weight(which: str, weights: PathWeights) -> tuple[np.ndarray, np.ndarray]:
    """(treatment factor, monitoring factor) per visit row for estimator ``which``."""
    n = len(weights.time)
    one = np.ones(n)
    if which == "LS":
        return one, one
    if which == "IPT":
        return weights.ipt, one
    if which == "IH":
        return weights.ipt, weights.point_intensity
    if which in ("USW", "SW1", "SW2"):
        return weights.ipt, weights.kind(which.lower())
    raise ValidationError(f"unknown estimator {which!r}")


def _design(dataset: PanelDataset, basis: BasisSpec, knots=None):
    vr = dataset.visit_rows
    t = vr.gap * dataset.grid.dt if basis.time_axis == "gap" else vr.time
    S = spline_basis(t, basis, knots)
    return np.column_stack([S, vr.treatment])


def solve_weighted_ee(dataset: PanelDataset, weights: PathWeights, which: str, basis: BasisSpec = BasisSpec()):
    """Return ``(beta, basis coefficients)`` for estimator ``which``."""
    X = _design(dataset, basis)
    a, m = monitoring_weight(which, weights)
    coef = wls(X, dataset.visit_rows.y, 1.0 / (a * m))
    return float(coef[-1]), coef[:-1]


def robust_variance(dataset: PanelDataset, weights: PathWeights, which: str, basis: BasisSpec = BasisSpec()) -> float:
    """Subject-clustered sandwich variance of the treatment coefficient."""
    X = _design(dataset, basis)
    a, m = monitoring_weight(which, weights)
    w = 1.0 / (a * m)
    y = dataset.visit_rows.y
    coef = wls(X, y, w)
    return float(clustered_sandwich(X, y, w, coef, dataset.visit_rows.subject)[-1, -1])


def fit_weights(dataset: PanelDataset, settings: EstimatorSettings = EstimatorSettings()):
    """Fit the nuisance models and return (truncated weights, full fit, reduced fit, treatment fit)."""
    tfit = fit_logistic(dataset, settings.treatment_covariates)
    ipt = subject_ipt(tfit, dataset, stabilized=settings.stabilized_ipt)
    full = fit_partial_likelihood(dataset, settings.intensity, baseline_mode=settings.baseline_mode)
    reduced = fit_partial_likelihood(dataset, settings.intensity.reduce(), baseline_mode=settings.baseline_mode)
    stab1 = breslow_baseline(dataset, full, settings.baseline_mode)
    stab2 = breslow_baseline(dataset, reduced, settings.baseline_mode)
    w = cumulate_weights(dataset, full, reduced, stab1, stab2, ipt, link=settings.link)
    if settings.truncate:
        w = truncate_weights(w, lower_pct=settings.lower_pct, upper_pct=settings.upper_pct)
    if settings.truncate_ipt:
        lo, hi = percentile_bounds(w.ipt, settings.lower_pct, settings.upper_pct)
        w = replace(w, ipt=np.clip(w.ipt, lo, hi), bounds={**w.bounds, "ipt": (lo, hi)})
    return w, full, reduced, tfit


def estimate_all(
    dataset: PanelDataset, settings: EstimatorSettings = EstimatorSettings(), *, robust: bool = True
) -> EstimatorResult:
    w, full, reduced, _ = fit_weights(dataset, settings)
    X = _design(dataset, settings.basis)
    y = dataset.visit_rows.y
    estimates, coefs, variance = {}, {}, {}
    for name in ESTIMATORS:
        a, m = monitoring_weight(name, w)
        rw = 1.0 / (a * m)
        coef = wls(X, y, rw)
        estimates[name] = float(coef[-1])
        coefs[name] = coef[:-1]
        if robust:
            variance[name] = {"robust": float(clustered_sandwich(X, y, rw, coef, dataset.visit_rows.subject)[-1, -1])}
    summary = {k: (float(np.min(w.kind(k))), float(np.median(w.kind(k))), float(np.max(w.kind(k)))) for k in ("usw", "sw1", "sw2")}
    summary["bounds"] = dict(w.bounds)
    return EstimatorResult(estimates, coefs, variance, len(y), summary, full.coefficients, reduced.coefficients)


def _one_resample(args):
    dataset, settings, seed, b = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
    idx = rng.integers(0, dataset.n, dataset.n)
    try:
        res = estimate_all(dataset.resample(idx), settings, robust=False)
    except IIVWError as exc:
        return b, None, f"{type(exc).__name__}: {exc}"
    return b, res.estimates, None


def bootstrap_estimates(
    dataset: PanelDataset,
    settings: EstimatorSettings = EstimatorSettings(),
    n_boot: int = 200,
    seed: int = 0,
    workers: int = 1,
    max_skip_frac: float = 0.05,
) -> dict[str, np.ndarray]:
    """Subject-level bootstrap replicates of every estimator, in resample order."""
    if n_boot < 2:
        raise ValidationError("n_boot must be >= 2")
    jobs = [(dataset, settings, seed, b) for b in range(n_boot)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_one_resample, jobs, chunksize=max(1, n_boot // (4 * workers))))
    else:
        results = [_one_resample(j) for j in jobs]
    ok = [r for r in results if r[1] is not None]
    skipped = [r for r in results if r[1] is None]
    for b, _, msg in skipped:
        log.warning("bootstrap resample %d skipped: %s", b, msg)
    if len(skipped) > max_skip_frac * n_boot:
        raise TooManyFailures(f"{len(skipped)} of {n_boot} bootstrap resamples failed")
    return {name: np.array([r[1][name] for r in ok]) for name in ESTIMATORS}


def bootstrap_variance(
    dataset: PanelDataset,
    settings: EstimatorSettings = EstimatorSettings(),
    n_boot: int = 200,
    seed: int = 0,
    workers: int = 1,
) -> dict[str, float]:
    """Empirical variance (ddof=1) of each estimator over subject-level resamples."""
    reps = bootstrap_estimates(dataset, settings, n_boot, seed, workers)
    return {name: float(np.var(v, ddof=1)) for name, v in reps.items()}


def attach_bootstrap(result: EstimatorResult, boot: dict[str, float]) -> EstimatorResult:
    variance = {k: dict(v) for k, v in result.variance.items()}
    for name, v in boot.items():
        variance.setdefault(name, {})["bootstrap"] = v
    return replace(result, variance=variance)
