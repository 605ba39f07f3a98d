from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iivw import estimator as est_mod
from iivw.errors import DegenerateGaps, RankDeficient, TooManyFailures, ValidationError
from iivw.estimator import (
    ESTIMATORS,
    BasisKind,
    BasisSpec,
    EstimatorSettings,
    attach_bootstrap,
    bootstrap_estimates,
    bootstrap_variance,
    clustered_sandwich,
    estimate_all,
    fit_weights,
    monitoring_weight,
    natural_spline_basis,
    robust_variance,
    solve_weighted_ee,
    spline_basis,
    wls,
)
from oracles import load_fixture, normal_equations_exact, sandwich_exact


class TestSpline:
    def test_constant(self):
        assert np.array_equal(spline_basis([0.3, 1.2, 5.0], BasisSpec(BasisKind.CONSTANT)), np.ones((3, 1)))

    def test_oracle_table(self):
        fx = load_fixture("spline_e1")
        spec = BasisSpec()
        x = np.array(fx["x"])
        assert np.allclose(spec.knots(x), fx["knots"], rtol=0, atol=1e-15)
        assert np.allclose(spline_basis(x, spec), fx["basis"], rtol=0, atol=1e-13)

    def test_natural_boundary(self):
        knots = np.array([0.1, 0.325, 0.55, 0.775, 1.0])
        h = 1e-4
        for b in (knots[0], knots[-1]):
            # one-sided second differences just outside the boundary knots
            side = -1 if b == knots[0] else 1
            xs = b + side * np.array([0.0, h, 2 * h])
            B = natural_spline_basis(xs, knots)
            second = (B[0] - 2 * B[1] + B[2]) / h**2
            assert np.max(np.abs(second)) < 1e-6

    def test_linear_beyond_boundary(self):
        knots = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
        x = np.array([4.0, 5.0, 6.0, 7.0])
        B = natural_spline_basis(x, knots)
        assert np.allclose(np.diff(B, 2, axis=0), 0.0, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateGaps):
            BasisSpec().knots([0.1, 0.1, 0.2, 0.2])
        with pytest.raises(ValidationError):
            BasisSpec(time_axis="calendar")

    @given(st.lists(st.integers(1, 400), min_size=5, max_size=60, unique=True))
    def test_knots_strictly_inside(self, cells):
        x = np.array(cells) * 0.01
        k = BasisSpec().knots(x)
        assert np.all(np.diff(k) > 0)
        assert k[0] == x.min() and k[-1] == x.max()


class TestWLS:
    e1 = load_fixture("e1")

    def test_e1_normal_equations(self):
        X, y, w = (np.array(self.e1[k], dtype=float) for k in ("x", "y", "w"))
        exact = [float(v) for v in normal_equations_exact(self.e1["x"], self.e1["y"], self.e1["w"])]
        assert np.max(np.abs(wls(X, y, w) - exact)) <= 1e-10

    def test_e1_sandwich(self):
        X, y, w = (np.array(self.e1[k], dtype=float) for k in ("x", "y", "w"))
        coef = wls(X, y, w)
        V = clustered_sandwich(X, y, w, coef, np.array(self.e1["cluster"]))
        exact = np.array([[float(v) for v in row] for row in sandwich_exact(self.e1["x"], self.e1["y"], self.e1["w"], self.e1["cluster"])])
        assert np.max(np.abs(V - exact)) <= 1e-10

    def test_exact_effect(self):
        a = np.array([0, 1] * 10, dtype=float)
        X = np.column_stack([np.ones(20), a])
        assert abs(wls(X, 2 * a, np.ones(20))[1] - 2.0) < 1e-14

    def test_duplication_and_scaling(self):
        X, y, w = (np.array(self.e1[k], dtype=float) for k in ("x", "y", "w"))
        base = wls(X, y, w)
        assert np.allclose(wls(np.vstack([X, X]), np.tile(y, 2), np.tile(w, 2)), base, rtol=1e-12)
        assert np.allclose(wls(X, y, 7.5 * w), base, rtol=1e-10)

    def test_ols_sandwich_reduction(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([np.ones(50), rng.normal(size=50)])
        y = X @ [1.0, 2.0] + rng.normal(size=50)
        coef = wls(X, y, np.ones(50))
        e = y - X @ coef
        bread = np.linalg.inv(X.T @ X)
        hc0 = bread @ (X.T * e**2) @ X @ bread
        assert np.allclose(clustered_sandwich(X, y, np.ones(50), coef, np.arange(50)), hc0, atol=1e-8)

    def test_clustered_exceeds_naive_for_duplicated_subjects(self):
        rng = np.random.default_rng(1)
        X1 = np.column_stack([np.ones(30), rng.integers(0, 2, 30)])
        y1 = X1 @ [0.5, 1.0] + rng.normal(size=30)
        X, y = np.vstack([X1, X1]), np.tile(y1, 2)
        coef = wls(X, y, np.ones(60))
        clustered = clustered_sandwich(X, y, np.ones(60), coef, np.tile(np.arange(30), 2))
        naive = clustered_sandwich(X, y, np.ones(60), coef, np.arange(60))
        assert clustered[1, 1] > naive[1, 1]

    def test_errors(self):
        with pytest.raises(RankDeficient):
            wls(np.ones((1, 2)), np.ones(1), np.ones(1))
        with pytest.raises(RankDeficient):
            wls(np.ones((5, 2)), np.ones(5), np.ones(5))
        with pytest.raises(ValidationError):
            wls(np.eye(2), np.ones(2), np.array([1.0, 0.0]))


class TestPipeline:
    def test_estimate_all_shapes(self, sim_small):
        res = estimate_all(sim_small)
        assert set(res.estimates) == set(ESTIMATORS)
        assert all(np.isfinite(v) for v in res.estimates.values())
        assert all(res.variance[n]["robust"] > 0 for n in ESTIMATORS)
        assert res.n_visit_rows == sim_small.visit_rows.n_rows
        assert len(list(res.rows())) == 6
        assert res.gamma.shape == (2,) and res.delta.shape == (1,)

    def test_matches_component_calls(self, sim_small):
        settings = EstimatorSettings()
        res = estimate_all(sim_small, settings)
        w, *_ = fit_weights(sim_small, settings)
        for name in ESTIMATORS:
            b, _ = solve_weighted_ee(sim_small, w, name, settings.basis)
            assert b == res.estimates[name]
            assert robust_variance(sim_small, w, name, settings.basis) == pytest.approx(res.variance[name]["robust"])

    def test_ls_ignores_weights(self, sim_small):
        w, *_ = fit_weights(sim_small)
        a, m = monitoring_weight("LS", w)
        assert np.all(a == 1) and np.all(m == 1)
        with pytest.raises(ValidationError):
            monitoring_weight("XX", w)

    def test_outcome_shift_and_weight_scaling(self, sim_small):
        w, *_ = fit_weights(sim_small)
        basis = BasisSpec()
        shifted = replace(sim_small, subjects=tuple(
            replace(s, visits=tuple(replace(v, outcome=v.outcome + 10.0) for v in s.visits)) for s in sim_small.subjects
        ))
        scaled = replace(w, ipt=w.ipt * 3.0, usw=w.usw * 1e4, sw1=w.sw1 * 0.2, sw2=w.sw2 * 5.0, point_intensity=w.point_intensity * 9.0)
        for name in ESTIMATORS:
            b, coef = solve_weighted_ee(sim_small, w, name, basis)
            b2, coef2 = solve_weighted_ee(shifted, w, name, basis)
            assert abs(b2 - b) < 1e-9
            assert coef2[0] == pytest.approx(coef[0] + 10.0, abs=1e-9)
            b3, _ = solve_weighted_ee(sim_small, scaled, name, basis)
            assert abs(b3 - b) < 1e-10

    def test_entry_time_basis_and_constant(self, sim_small):
        a = estimate_all(sim_small, EstimatorSettings(basis=BasisSpec(time_axis="entry")), robust=False)
        b = estimate_all(sim_small, EstimatorSettings(basis=BasisSpec(BasisKind.CONSTANT)), robust=False)
        assert a.estimates["LS"] != b.estimates["LS"]
        assert len(b.basis_coefs["SW2"]) == 1

    def test_treatment_factor_truncation_is_opt_in(self, sim_small):
        w, *_ = fit_weights(sim_small)
        assert "ipt" not in w.bounds
        wt, *_ = fit_weights(sim_small, EstimatorSettings(truncate_ipt=True))
        lo, hi = np.percentile(w.ipt, [2.5, 97.5])
        assert wt.bounds["ipt"] == (pytest.approx(lo), pytest.approx(hi))
        assert np.array_equal(wt.ipt, np.clip(w.ipt, lo, hi))
        assert np.array_equal(wt.sw2, w.sw2)


class TestBootstrap:
    def test_deterministic_across_workers(self, sim_small):
        a = bootstrap_estimates(sim_small, n_boot=4, seed=17, workers=1)
        b = bootstrap_estimates(sim_small, n_boot=4, seed=17, workers=2)
        for name in ESTIMATORS:
            assert np.array_equal(a[name], b[name])
        c = bootstrap_estimates(sim_small, n_boot=4, seed=18, workers=1)
        assert not np.array_equal(a["SW2"], c["SW2"])

    def test_variance_nonnegative_and_attach(self, sim_small):
        v = bootstrap_variance(sim_small, n_boot=3, seed=1)
        assert all(x >= 0 for x in v.values())
        res = attach_bootstrap(estimate_all(sim_small), v)
        assert res.variance["SW2"]["bootstrap"] == v["SW2"]
        assert "robust" in res.variance["SW2"]

    def test_identical_resamples_give_zero_variance(self, sim_small, monkeypatch):
        fixed = estimate_all(sim_small, robust=False)
        monkeypatch.setattr(est_mod, "estimate_all", lambda *a, **k: fixed)
        v = bootstrap_variance(sim_small, n_boot=2, seed=0)
        assert all(x == 0.0 for x in v.values())

    def test_too_many_failures(self, sim_small, monkeypatch):
        def boom(*a, **k):
            raise RankDeficient("forced")

        monkeypatch.setattr(est_mod, "estimate_all", boom)
        with pytest.raises(TooManyFailures):
            bootstrap_estimates(sim_small, n_boot=3, seed=0)

    def test_needs_two(self, sim_small):
        with pytest.raises(ValidationError):
            bootstrap_variance(sim_small, n_boot=1)
