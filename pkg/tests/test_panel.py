import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iivw.errors import (
    DuplicateSubject,
    EmptyTreatmentArm,
    MissingBaselineVisit,
    NoPriorObservation,
    NonMonotoneVisits,
    OffGridTime,
    RaggedCovariates,
    ValidationError,
)
from iivw.panel import GridSpec, SubjectPath, VisitRecord, at_risk, build_dataset, gap_before, gap_time, locf_covariates


def subject(sid, treatment=0, visits=((0.0, 0.0, (1.0,)),), censor=5.0, k=(0.0,)):
    return SubjectPath(sid, treatment, k, censor, tuple(VisitRecord(t, y, z) for t, y, z in visits))


GRID = GridSpec()


class TestGridSpec:
    def test_defaults(self):
        assert GRID.n_cells == 500

    @pytest.mark.parametrize("dt,tau", [(0, 5), (0.01, -1), (0.03, 1.0)])
    def test_invalid(self, dt, tau):
        with pytest.raises(ValidationError):
            GridSpec(dt, tau)

    def test_snapping(self):
        assert GRID.cell(0.07) == 7
        assert GRID.cell(0.07 + 1e-13) == 7
        with pytest.raises(OffGridTime):
            GRID.cell(0.015)
        with pytest.raises(OffGridTime):
            GRID.cell(5.01)


class TestBuildDataset:
    def test_minimal(self):
        ds = build_dataset([subject("a", 0), subject("b", 1)], GRID)
        assert ds.n == 2
        assert ds.covariate_names == ("z1",)

    def test_non_monotone(self):
        bad = subject("x", 1, visits=((0.0, 0, (1.0,)), (0.02, 0, (1.0,)), (0.01, 0, (1.0,))))
        with pytest.raises(NonMonotoneVisits, match="'x'"):
            build_dataset([subject("a"), bad], GRID)

    def test_empty_arm(self):
        with pytest.raises(EmptyTreatmentArm):
            build_dataset([subject("a", 1), subject("b", 1)], GRID)

    def test_off_grid_names_subject(self):
        bad = subject("q", 1, visits=((0.0, 0, (1.0,)), (0.015, 0, (1.0,))))
        with pytest.raises(OffGridTime, match="'q'"):
            build_dataset([subject("a"), bad], GRID)

    def test_ragged(self):
        bad = subject("r", 1, visits=((0.0, 0, (1.0,)), (0.5, 0, (1.0, 2.0))))
        with pytest.raises(RaggedCovariates, match="'r'"):
            build_dataset([subject("a"), bad], GRID)

    def test_missing_time_zero(self):
        bad = subject("m", 1, visits=((0.5, 0, (1.0,)),))
        with pytest.raises(MissingBaselineVisit, match="'m'"):
            build_dataset([subject("a"), bad], GRID)

    def test_duplicate_and_size(self):
        with pytest.raises(DuplicateSubject):
            build_dataset([subject("a", 0), subject("a", 1)], GRID)
        with pytest.raises(ValidationError):
            build_dataset([subject("a", 0)], GRID, require_both_arms=False)

    def test_visit_after_censoring(self):
        bad = subject("c", 1, visits=((0.0, 0, (1.0,)), (3.0, 0, (1.0,))), censor=2.0)
        with pytest.raises(ValidationError, match="after censor"):
            build_dataset([subject("a"), bad], GRID)


class TestAccessors:
    s = subject("s", visits=((0.0, 0, (2.0,)), (1.0, 0, (4.0,))))

    def test_gap_time(self):
        assert gap_time(self.s, 1.5) == pytest.approx(0.5)
        assert gap_time(self.s, 1.0) == 0.0
        assert gap_before(self.s, 1.0) == pytest.approx(1.0)

    def test_gap_before_first_visit(self):
        lone = subject("l")
        assert gap_time(lone, 0.07) == pytest.approx(0.07)

    def test_locf(self):
        assert locf_covariates(self.s, 0.99)[0] == 2.0
        assert locf_covariates(self.s, 1.0)[0] == 4.0
        assert locf_covariates(self.s, 1.0, strict=True)[0] == 2.0
        assert locf_covariates(self.s, 5.0)[0] == 4.0
        with pytest.raises(NoPriorObservation):
            locf_covariates(self.s, 0.0, strict=True)

    def test_at_risk(self):
        s = subject("c", censor=2.5)
        assert at_risk(s, 2.5)
        assert not at_risk(s, 2.51)
        assert at_risk(subject("t", censor=5.0), 0.0)


@st.composite
def subject_paths(draw):
    n_cells = draw(st.integers(5, 80))
    censor_cell = draw(st.integers(1, n_cells))
    cells = sorted(draw(st.sets(st.integers(1, censor_cell), max_size=10)))
    zs = draw(st.lists(st.floats(-5, 5), min_size=len(cells) + 1, max_size=len(cells) + 1))
    grid = GridSpec(0.01, n_cells * 0.01)
    visits = [(0.0, 0.0, (zs[0],))] + [(c * 0.01, 0.0, (z,)) for c, z in zip(cells, zs[1:])]
    return grid, subject("h", 1, visits=visits, censor=censor_cell * 0.01)


@given(subject_paths())
def test_gap_and_locf_shape(data):
    grid, s = data
    vt = [v.time for v in s.visits]
    for k in range(grid.n_cells + 1):
        t = grid.time(k)
        g = gap_time(s, t)
        assert g <= t + 1e-12
        assert abs(g / grid.dt - round(g / grid.dt)) < 1e-6
        on_visit = any(abs(t - v) < 1e-9 for v in vt)
        if on_visit:
            assert g == pytest.approx(0.0, abs=1e-12)
        elif k > 0:
            assert g == pytest.approx(gap_time(s, grid.time(k - 1)) + grid.dt)
            assert locf_covariates(s, t)[0] == locf_covariates(s, grid.time(k - 1))[0]


@given(subject_paths())
def test_risk_table_matches_scalar_accessors(data):
    grid, s = data
    other = subject("o", 0, censor=grid.tau)
    ds = build_dataset([s, other], grid)
    rt = ds.risk_table
    rows = np.flatnonzero(rt.subject == 0)
    assert len(rows) == grid.last_cell_at_risk(s.censor_time)
    for r in rows:
        t = grid.time(rt.cell[r])
        assert rt.gap[r] == round(gap_before(s, t) / grid.dt)
        assert rt.z[r, 0] == locf_covariates(s, t, strict=True)[0]
        assert rt.event[r] == any(abs(v.time - t) < 1e-9 for v in s.visits)
    vr = ds.visit_rows
    assert vr.n_rows == s.n_followup_visits + other.n_followup_visits


def test_resample_relabels(sim_small):
    r = sim_small.resample([0, 0, 3])
    assert [s.id for s in r.subjects] == ["0#0", "0#1", "3#2"]
    assert r.subjects[0].visits == sim_small.subjects[0].visits
