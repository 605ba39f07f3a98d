"""Cumulated monitoring-path weights.

For every grid cell ``s`` a subject is at risk, the fitted model gives the
probability of a visit in that cell, ``p(s) = lambda0(B(s)) exp(x(s)'gamma)``.
The unstabilized weight at time ``t`` is the probability of the observed
visit/no-visit path over ``(0, t]``:

    usw(t) = prod_{s <= t} p(s)^dN(s) (1 - p(s))^(1 - dN(s))

and the stabilized weights divide each factor by the same factor computed
from a stabilizing rate ``q_j(s)``:

    q_1(s) = lambda0_1(B(s))                (gap time only)
    q_2(s) = lambda0_2(B(s)) exp(delta I)   (gap time and treatment)

Products are accumulated as sums of logs.  The baseline visit at time 0 is
deterministic and contributes no factor; cells after censoring contribute
nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ProbabilityOverflow, ValidationError
from .intensity import BaselineTable, IntensityFit, design_matrix
from .panel import PanelDataset

KINDS = ("usw", "sw1", "sw2")


def cumulate_path(p, dN, q1=None, q2=None):
    """Cumulated weights along one path of cells.

    Returns a dict of arrays, one value per cell, holding ``usw`` and, when
    stabilizers are given, ``sw1``/``sw2``.
    """
    p = np.asarray(p, dtype=float)
    dN = np.asarray(dN, dtype=bool)
    out = {}
    if np.any(p >= 1) or np.any(p <= 0):
        raise ProbabilityOverflow("visit probability outside (0, 1)")
    lp = np.where(dN, np.log(p), np.log1p(-p))
    out["usw"] = np.exp(np.cumsum(lp))
    for name, q in (("sw1", q1), ("sw2", q2)):
        if q is None:
            continue
        q = np.asarray(q, dtype=float)
        if np.any(q >= 1) or np.any(q <= 0):
            raise ProbabilityOverflow(f"stabilizing probability for {name} outside (0, 1)")
        lq = np.where(dN, np.log(q), np.log1p(-q))
        out[name] = np.exp(np.cumsum(lp - lq))
    return out


@dataclass(frozen=True)
class WeightSeries:
    """Weights of one subject at each post-baseline visit."""

    subject_id: object
    time: np.ndarray
    usw: np.ndarray
    sw1: np.ndarray
    sw2: np.ndarray
    point_intensity: np.ndarray
    ipt: float
    bounds: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PathWeights:
    """Weights for every post-baseline visit row of a dataset (row order of ``dataset.visit_rows``)."""

    subject: np.ndarray
    time: np.ndarray
    usw: np.ndarray
    sw1: np.ndarray
    sw2: np.ndarray
    point_intensity: np.ndarray
    ipt: np.ndarray
    bounds: dict = field(default_factory=dict)

    def kind(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def series(self, dataset: PanelDataset) -> list[WeightSeries]:
        out = []
        for i, s in enumerate(dataset.subjects):
            m = self.subject == i
            ipt = float(self.ipt[m][0]) if m.any() else float("nan")
            out.append(
                WeightSeries(s.id, self.time[m], self.usw[m], self.sw1[m], self.sw2[m], self.point_intensity[m], ipt, dict(self.bounds))
            )
        return out

    def to_rows(self, dataset: PanelDataset):
        ids = [dataset.subjects[i].id for i in self.subject]
        return [
            (sid, t, a, b, c, d, e)
            for sid, t, a, b, c, d, e in zip(ids, self.time, self.usw, self.sw1, self.sw2, self.point_intensity, self.ipt)
        ]


def _grouped_cumsum(values: np.ndarray, starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    c = np.cumsum(values)
    before = np.where(starts > 0, c[np.maximum(starts - 1, 0)], 0.0)
    return c - np.repeat(before, lengths)


def cumulate_weights(
    dataset: PanelDataset,
    full_fit: IntensityFit,
    reduced_fit: IntensityFit,
    stab1: BaselineTable,
    stab2: BaselineTable,
    ipt: np.ndarray | None = None,
    link: str = "exp",
) -> PathWeights:
    """usw, sw1 and sw2 at every post-baseline visit of every subject."""
    rt = dataset.risk_table
    vr = dataset.visit_rows
    if rt.n_rows == 0:
        raise ValidationError("no subject is at risk in any cell")
    eta = design_matrix(dataset, full_fit.spec) @ full_fit.coefficients
    p = full_fit.baseline.lookup(rt.gap) * np.exp(eta)
    q1 = stab1.lookup(rt.gap)
    q2 = stab2.lookup(rt.gap) * np.exp(design_matrix(dataset, reduced_fit.spec) @ reduced_fit.coefficients)
    if link == "exp":
        p, q1, q2 = -np.expm1(-p), -np.expm1(-q1), -np.expm1(-q2)
    for name, v in (("visit", p), ("sw1 stabilizer", q1), ("sw2 stabilizer", q2)):
        if np.any(v >= 1):
            raise ProbabilityOverflow(f"{name} probability reached 1 in {int(np.sum(v >= 1))} cells")

    ev = rt.event
    lp = np.where(ev, np.log(p), np.log1p(-p))
    lengths = np.diff(np.append(rt.starts, rt.n_rows))
    log_usw = _grouped_cumsum(lp, rt.starts, lengths)
    log_sw1 = _grouped_cumsum(lp - np.where(ev, np.log(q1), np.log1p(-q1)), rt.starts, lengths)
    log_sw2 = _grouped_cumsum(lp - np.where(ev, np.log(q2), np.log1p(-q2)), rt.starts, lengths)
    r = vr.risk_row
    if ipt is None:
        ipt = np.ones(dataset.n)
    # a ratio overflowing to inf is a zero regression weight, or the upper bound once winsorized
    with np.errstate(over="ignore"):
        usw, sw1, sw2 = np.exp(log_usw[r]), np.exp(log_sw1[r]), np.exp(log_sw2[r])
    return PathWeights(
        subject=vr.subject,
        time=vr.time,
        usw=usw,
        sw1=sw1,
        sw2=sw2,
        point_intensity=p[r],
        ipt=np.asarray(ipt, dtype=float)[vr.subject],
    )


def percentile_bounds(values, lower_pct: float = 2.5, upper_pct: float = 97.5) -> tuple[float, float]:
    """Percentiles by linear interpolation between order statistics."""
    lo, hi = np.percentile(np.asarray(values, dtype=float), [lower_pct, upper_pct], method="linear")
    return float(lo), float(hi)


def truncate_weights(
    weights: PathWeights, kind: str | Sequence[str] = KINDS, lower_pct: float = 2.5, upper_pct: float = 97.5
) -> PathWeights:
    """Winsorize the pooled visit-row weights of each ``kind`` at the given percentiles."""
    kinds = (kind,) if isinstance(kind, str) else tuple(kind)
    if len(weights.time) == 0:
        raise ValidationError("no visit rows to truncate")
    changes = {}
    bounds = dict(weights.bounds)
    for k in kinds:
        if k not in KINDS:
            raise ValidationError(f"unknown weight kind {k!r}")
        lo, hi = percentile_bounds(weights.kind(k), lower_pct, upper_pct)
        changes[k] = np.clip(weights.kind(k), lo, hi)
        bounds[k] = (lo, hi)
    return replace(weights, bounds=bounds, **changes)


def truncate_series(series: list[WeightSeries], kind: str, lower_pct: float = 2.5, upper_pct: float = 97.5) -> list[WeightSeries]:
    """:func:`truncate_weights` for a list of per-subject series."""
    pooled = np.concatenate([getattr(s, kind) for s in series]) if series else np.zeros(0)
    if pooled.size == 0:
        raise ValidationError("no visit rows to truncate")
    lo, hi = percentile_bounds(pooled, lower_pct, upper_pct)
    return [replace(s, **{kind: np.clip(getattr(s, kind), lo, hi)}, bounds={**s.bounds, kind: (lo, hi)}) for s in series]
