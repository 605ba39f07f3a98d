"""Irregular longitudinal data on a discrete time grid.

A :class:`PanelDataset` is an immutable cohort of :class:`SubjectPath` records.
Every subject carries a visit at time 0 (the baseline record), so the
last-observation-carried-forward covariate value is defined everywhere on
``[0, censor_time]``.

Times live on a grid of step ``dt``; internally they are handled as integer
cell indices so that gap-time buckets are exact.  Cell ``k`` covers the
instant ``k * dt``.  The covariates in force during cell ``k`` are those of
the last visit *strictly before* ``k`` (left-continuity), and the gap entering
cell ``k`` is ``k`` minus that visit's cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from .errors import (
    DuplicateSubject,
    EmptyTreatmentArm,
    MissingBaselineVisit,
    NoPriorObservation,
    NonMonotoneVisits,
    OffGridTime,
    RaggedCovariates,
    ValidationError,
)

SNAP_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Time discretization: step ``dt`` over ``[0, tau]``."""

    dt: float = 0.01
    tau: float = 5.0

    def __post_init__(self):
        if not (self.dt > 0 and self.tau > 0):
            raise ValidationError(f"grid needs dt > 0 and tau > 0, got dt={self.dt}, tau={self.tau}")
        ratio = self.tau / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValidationError(f"tau={self.tau} is not a multiple of dt={self.dt}")

    @property
    def n_cells(self) -> int:
        return int(round(self.tau / self.dt))

    def cell(self, t: float, *, what: str = "time") -> int:
        """Snap ``t`` to its cell index, raising :class:`OffGridTime` if it is off the grid."""
        x = t / self.dt
        k = int(round(x))
        if abs(x - k) > SNAP_TOL or k < 0 or k > self.n_cells:
            raise OffGridTime(f"{what} {t!r} is not on the grid (dt={self.dt}, tau={self.tau})")
        return k

    def time(self, k: int | np.ndarray):
        return k * self.dt

    def last_cell_at_risk(self, censor_time: float) -> int:
        """Largest cell index ``k`` with ``k * dt <= censor_time``."""
        return min(self.n_cells, int(math.floor(censor_time / self.dt + SNAP_TOL)))


@dataclass(frozen=True)
class VisitRecord:
    time: float
    outcome: float
    covariates: tuple[float, ...]


@dataclass(frozen=True)
class SubjectPath:
    id: Any
    treatment: int
    baseline_covariates: tuple[float, ...]
    censor_time: float
    visits: tuple[VisitRecord, ...]
    dgm_truth: dict | None = field(default=None, compare=False, repr=False)

    @property
    def visit_times(self) -> list[float]:
        return [v.time for v in self.visits]

    @property
    def n_followup_visits(self) -> int:
        """Visits after the baseline record."""
        return sum(1 for v in self.visits if v.time > 0)


def _last_visit_index(subject: SubjectPath, t: float, *, strict: bool) -> int | None:
    idx = None
    for j, v in enumerate(subject.visits):
        if v.time < t - SNAP_TOL or (not strict and v.time <= t + SNAP_TOL):
            idx = j
        else:
            break
    return idx


def gap_time(subject: SubjectPath, t: float) -> float:
    """Time elapsed at ``t`` since the latest visit at or before ``t``.

    Zero at a visit instant; ``t`` itself if no visit has occurred yet.
    """
    j = _last_visit_index(subject, t, strict=False)
    last = 0.0 if j is None else subject.visits[j].time
    return t - last


def gap_before(subject: SubjectPath, t: float) -> float:
    """Gap entering ``t``: time since the latest visit strictly before ``t``.

    This is the gap driving the visit intensity at ``t``; it differs from
    :func:`gap_time` only at visit instants, where it is the pre-reset value.
    """
    j = _last_visit_index(subject, t, strict=True)
    last = 0.0 if j is None else subject.visits[j].time
    return t - last


def locf_covariates(subject: SubjectPath, t: float, *, strict: bool = False) -> np.ndarray:
    """Covariates recorded at the most recent visit at or before ``t``.

    With ``strict=True`` the visit must be strictly before ``t`` (the value in
    force at ``t-``).
    """
    j = _last_visit_index(subject, t, strict=strict)
    if j is None:
        raise NoPriorObservation(f"subject {subject.id!r} has no visit before t={t}")
    return np.asarray(subject.visits[j].covariates, dtype=float)


def at_risk(subject: SubjectPath, t: float) -> bool:
    return subject.censor_time >= t - 1e-12


@dataclass(frozen=True)
class RiskTable:
    """One row per (subject, grid cell) at risk, cells ``1..last_cell_at_risk``.

    Rows are grouped by subject in dataset order and sorted by cell within a
    subject.  ``z`` holds the covariates in force at ``cell-``; ``gap`` is the
    gap entering the cell, in cells.
    """

    subject: np.ndarray
    cell: np.ndarray
    gap: np.ndarray
    event: np.ndarray
    treatment: np.ndarray
    z: np.ndarray
    k: np.ndarray
    starts: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.cell)


@dataclass(frozen=True)
class VisitRows:
    """Post-baseline visit rows, the rows entering the outcome regression."""

    subject: np.ndarray
    cell: np.ndarray
    time: np.ndarray
    gap: np.ndarray
    y: np.ndarray
    treatment: np.ndarray
    z: np.ndarray
    k: np.ndarray
    risk_row: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.cell)


@dataclass(frozen=True)
class PanelDataset:
    grid: GridSpec
    subjects: tuple[SubjectPath, ...]
    covariate_names: tuple[str, ...]
    baseline_names: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.subjects)

    @cached_property
    def treatment(self) -> np.ndarray:
        return np.array([s.treatment for s in self.subjects], dtype=float)

    @cached_property
    def baseline_matrix(self) -> np.ndarray:
        return np.array([s.baseline_covariates for s in self.subjects], dtype=float).reshape(
            self.n, len(self.baseline_names)
        )

    @cached_property
    def _visit_arrays(self):
        grid = self.grid
        nz = len(self.covariate_names)
        counts = np.array([len(s.visits) for s in self.subjects])
        cells = np.empty(counts.sum(), dtype=np.int64)
        y = np.empty(counts.sum())
        z = np.empty((counts.sum(), nz))
        pos = 0
        for s in self.subjects:
            for v in s.visits:
                cells[pos] = int(round(v.time / grid.dt))
                y[pos] = v.outcome
                z[pos] = v.covariates
                pos += 1
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        return counts, offsets, cells, y, z

    @cached_property
    def risk_table(self) -> RiskTable:
        grid = self.grid
        counts, voff, vcells, _, vz = self._visit_arrays
        n_risk = np.array([grid.last_cell_at_risk(s.censor_time) for s in self.subjects], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(n_risk)[:-1]]).astype(np.int64)
        total = int(n_risk.sum())
        subject = np.repeat(np.arange(self.n), n_risk)
        cell = np.arange(total, dtype=np.int64) - np.repeat(starts, n_risk) + 1

        event = np.zeros(total, dtype=bool)
        vsub = np.repeat(np.arange(self.n), counts)
        post = vcells > 0
        event[starts[vsub[post]] + vcells[post] - 1] = True

        # visits strictly before each cell, counted within subject
        ev = event.astype(np.int64)
        before = np.cumsum(ev) - ev
        before -= np.repeat(before[np.minimum(starts, max(total - 1, 0))] if total else starts[:0], n_risk)
        last_visit = voff[subject] + before
        gap = cell - vcells[last_visit]
        return RiskTable(
            subject=subject,
            cell=cell,
            gap=gap,
            event=event,
            treatment=self.treatment[subject],
            z=vz[last_visit],
            k=self.baseline_matrix[subject],
            starts=starts,
        )

    @cached_property
    def visit_rows(self) -> VisitRows:
        counts, voff, vcells, vy, vz = self._visit_arrays
        rt = self.risk_table
        vsub = np.repeat(np.arange(self.n), counts)
        post = vcells > 0
        sub = vsub[post]
        cells = vcells[post]
        risk_row = rt.starts[sub] + cells - 1
        return VisitRows(
            subject=sub,
            cell=cells,
            time=self.grid.time(cells),
            gap=rt.gap[risk_row],
            y=vy[post],
            treatment=self.treatment[sub],
            z=vz[post],
            k=self.baseline_matrix[sub],
            risk_row=risk_row,
        )

    def followup_visit_counts(self) -> np.ndarray:
        counts = self._visit_arrays[0]
        return counts - 1

    def resample(self, index: Sequence[int]) -> "PanelDataset":
        """Dataset made of subjects ``index`` (with repetition); ids are made unique."""
        subs = []
        for j, i in enumerate(index):
            s = self.subjects[int(i)]
            subs.append(
                SubjectPath(
                    id=f"{s.id}#{j}",
                    treatment=s.treatment,
                    baseline_covariates=s.baseline_covariates,
                    censor_time=s.censor_time,
                    visits=s.visits,
                )
            )
        return PanelDataset(self.grid, tuple(subs), self.covariate_names, self.baseline_names)


def build_dataset(
    records: Sequence[SubjectPath],
    grid: GridSpec,
    covariate_names: Sequence[str] | None = None,
    baseline_names: Sequence[str] | None = None,
    *,
    require_both_arms: bool = True,
) -> PanelDataset:
    """Validate subject records and assemble a :class:`PanelDataset`.

    Visit times within ``SNAP_TOL * dt`` of a grid point are snapped onto it;
    anything further off raises :class:`OffGridTime`.
    """
    if len(records) == 0:
        raise ValidationError("no subject records")
    first = records[0]
    nz = len(first.visits[0].covariates) if first.visits else 0
    nk = len(first.baseline_covariates)
    covariate_names = tuple(covariate_names) if covariate_names is not None else tuple(f"z{j + 1}" for j in range(nz))
    baseline_names = tuple(baseline_names) if baseline_names is not None else tuple(f"k{j + 1}" for j in range(nk))

    seen = set()
    clean = []
    for s in records:
        if s.id in seen:
            raise DuplicateSubject(f"subject id {s.id!r} appears twice")
        seen.add(s.id)
        if s.treatment not in (0, 1):
            raise ValidationError(f"subject {s.id!r}: treatment must be 0 or 1, got {s.treatment!r}")
        if len(s.baseline_covariates) != len(baseline_names):
            raise RaggedCovariates(f"subject {s.id!r}: expected {len(baseline_names)} baseline covariates")
        if not (0 < s.censor_time <= grid.tau + SNAP_TOL * grid.dt):
            raise ValidationError(f"subject {s.id!r}: censor_time {s.censor_time} outside (0, tau]")
        if not s.visits:
            raise MissingBaselineVisit(f"subject {s.id!r} has no visits; a time-0 record is required")
        visits = []
        prev = -1
        for v in s.visits:
            k = grid.cell(v.time, what=f"subject {s.id!r} visit time")
            if k <= prev:
                raise NonMonotoneVisits(f"subject {s.id!r}: visit times not strictly increasing at t={v.time}")
            if k * grid.dt > s.censor_time + SNAP_TOL * grid.dt:
                raise ValidationError(f"subject {s.id!r}: visit at t={v.time} after censor_time {s.censor_time}")
            if len(v.covariates) != len(covariate_names):
                raise RaggedCovariates(
                    f"subject {s.id!r}: visit at t={v.time} has {len(v.covariates)} covariates, "
                    f"expected {len(covariate_names)}"
                )
            prev = k
            visits.append(VisitRecord(grid.time(k), float(v.outcome), tuple(float(c) for c in v.covariates)))
        if visits[0].time != 0:
            raise MissingBaselineVisit(f"subject {s.id!r} has no time-0 record")
        clean.append(
            SubjectPath(
                id=s.id,
                treatment=int(s.treatment),
                baseline_covariates=tuple(float(c) for c in s.baseline_covariates),
                censor_time=float(s.censor_time),
                visits=tuple(visits),
                dgm_truth=s.dgm_truth,
            )
        )

    if len(clean) < 2:
        raise ValidationError("a dataset needs at least 2 subjects")
    arms = {s.treatment for s in clean}
    if require_both_arms and arms != {0, 1}:
        missing = ({0, 1} - arms).pop()
        raise EmptyTreatmentArm(f"treatment arm {missing} is empty")
    return PanelDataset(grid, tuple(clean), covariate_names, baseline_names)
