"""Baseline propensity model and inverse-probability-of-treatment weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Diverged, Separation, SingularDesign
from .panel import PanelDataset, SubjectPath

MAX_ITER = 50
SEPARATION_NORM = 50.0


@dataclass(frozen=True)
class TreatmentFit:
    coefficients: np.ndarray  # intercept first
    columns: tuple[str, ...]
    iterations: int
    gradient_norm: float
    marginal_share: float

    def propensity(self, K: np.ndarray) -> np.ndarray:
        K = np.asarray(K, dtype=float)
        if K.ndim < 2:
            K = K.reshape(-1, len(self.columns)) if self.columns else np.zeros((max(K.size, 1), 0))
        return _expit(self.coefficients[0] + K @ self.coefficients[1:])


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _select(dataset: PanelDataset, columns) -> tuple[np.ndarray, tuple[str, ...]]:
    columns = tuple(dataset.baseline_names) if columns is None else tuple(columns)
    idx = [dataset.baseline_names.index(c) for c in columns]
    return dataset.baseline_matrix[:, idx], columns


def logistic_newton(X: np.ndarray, y: np.ndarray, *, max_iter: int = MAX_ITER):
    """Logistic MLE by Newton-Raphson (IRLS). ``X`` includes the intercept column."""
    n, p = X.shape
    if np.linalg.matrix_rank(X) < p:
        raise SingularDesign("propensity design matrix is rank deficient")
    beta = np.zeros(p)
    tol = 1e-9 * n
    for it in range(max_iter + 1):
        mu = _expit(X @ beta)
        grad = X.T @ (y - mu)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            if np.all(np.abs(y - mu) < 1e-6):
                raise Separation("fitted probabilities reproduce treatment exactly: arms are completely separated")
            return beta, it, gnorm
        if it == max_iter:
            break
        w = mu * (1 - mu)
        info = X.T @ (X * w[:, None])
        try:
            beta = beta + np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise Separation("information matrix became singular (separation?)") from exc
        if np.linalg.norm(beta) > SEPARATION_NORM or not np.all(np.isfinite(beta)):
            raise Separation(f"coefficient norm exceeded {SEPARATION_NORM}: treatment is (quasi-)separated")
    raise Diverged("logistic regression did not converge")


def fit_logistic(dataset: PanelDataset, baseline_selector=None) -> TreatmentFit:
    """Regress treatment on an intercept plus the selected baseline covariates."""
    K, cols = _select(dataset, baseline_selector)
    y = dataset.treatment
    if y.min() == y.max():
        raise Separation("only one treatment arm present")
    X = np.column_stack([np.ones(dataset.n), K])
    beta, it, gnorm = logistic_newton(X, y)
    return TreatmentFit(beta, cols, it, gnorm, float(y.mean()))


def ipt_weight(fit: TreatmentFit, subject: SubjectPath, baseline_names=None, *, stabilized: bool = False) -> float:
    """Probability of the treatment actually received; the estimator divides by it."""
    names = fit.columns if baseline_names is None else baseline_names
    k = np.array([subject.baseline_covariates[list(names).index(c)] for c in fit.columns]) if fit.columns else np.zeros(0)
    p = float(fit.propensity(k)[0])
    w = p if subject.treatment == 1 else 1 - p
    if stabilized:
        w /= fit.marginal_share if subject.treatment == 1 else 1 - fit.marginal_share
    return w


def subject_ipt(fit: TreatmentFit, dataset: PanelDataset, *, stabilized: bool = False) -> np.ndarray:
    """:func:`ipt_weight` for every subject of ``dataset``."""
    K, _ = _select(dataset, fit.columns)
    p = fit.propensity(K)
    a = dataset.treatment
    w = np.where(a == 1, p, 1 - p)
    if stabilized:
        w = w / np.where(a == 1, fit.marginal_share, 1 - fit.marginal_share)
    return w


@dataclass(frozen=True)
class PositivityReport:
    min_propensity: float
    max_propensity: float
    n_flagged: int
    eps: float
    weight_quantiles: dict[float, float]

    def lines(self) -> list[str]:
        q = ", ".join(f"q{int(k * 100)}={v:.4g}" for k, v in self.weight_quantiles.items())
        return [
            f"propensity range: [{self.min_propensity:.4f}, {self.max_propensity:.4f}]",
            f"outside [{self.eps}, {1 - self.eps}]: {self.n_flagged}",
            f"inverse weight quantiles: {q}",
        ]


def positivity_diagnostics(fit: TreatmentFit, dataset: PanelDataset, eps: float = 0.01) -> PositivityReport:
    K, _ = _select(dataset, fit.columns)
    p = fit.propensity(K)
    inv = 1.0 / subject_ipt(fit, dataset)
    qs = (0.0, 0.01, 0.25, 0.5, 0.75, 0.99, 1.0)
    return PositivityReport(
        min_propensity=float(p.min()),
        max_propensity=float(p.max()),
        n_flagged=int(np.sum((p < eps) | (p > 1 - eps))),
        eps=eps,
        weight_quantiles={q: float(v) for q, v in zip(qs, np.quantile(inv, qs))},
    )
