import math
from dataclasses import replace

import numpy as np
import pytest

from iivw import experiment as exp_mod
from iivw.errors import ConfigError, RankDeficient, TooManyFailures
from iivw.estimator import BasisKind, EstimatorSettings
from iivw.experiment import (
    DEFAULT_CONFIG,
    REPORT_HEADER,
    TABLE1_GAMMAS,
    TABLE1_LABELS,
    ReplicateRecord,
    ReplicationSummary,
    ScenarioConfig,
    emit_report,
    gamma_from_label,
    label_from_gamma,
    parse_config,
    render_report,
    run_records,
    run_scenario,
    summarize,
)
from iivw.intensity import BaselineMode
from iivw.simulate import DgmConfig, Variant

TINY = ScenarioConfig(
    dgm=DgmConfig(n_subjects=80),
    gamma_grid=((0.0, 0.0), (0.1, -0.3)),
    n_replicates=2,
    n_boot=2,
    boot_replicates=1,
)


@pytest.fixture(scope="module")
def tiny_summary():
    return run_scenario(TINY)


def test_label_mapping():
    assert gamma_from_label((-0.3, 0.1)) == (0.1, -0.3)
    assert label_from_gamma(gamma_from_label((0.3, 0.2))) == (0.3, 0.2)
    assert len(TABLE1_GAMMAS) == 8 == len(set(TABLE1_LABELS))


class TestConfig:
    def test_default_document_is_the_default(self):
        assert parse_config(DEFAULT_CONFIG) == ScenarioConfig()
        assert parse_config("[estimator]\ntruncate_ipt = yes\n").settings.truncate_ipt

    def test_empty_document(self):
        assert parse_config("") == ScenarioConfig()

    def test_overrides(self):
        cfg = parse_config(
            "[scenario]\nn_replicates = 7\ntable_rows = -0.3:0.1, 0:0\n"
            "[dgm]\nvariant = TAU10\nn_subjects = 99\n"
            "[estimator]\nbasis = CONSTANT\nbaseline_mode = EVENT_WEIGHTED_LITERAL\ntruncate = no\n"
            "[output]\ncsv = out.csv\n"
        )
        assert cfg.n_replicates == 7
        assert cfg.gamma_grid == ((0.1, -0.3), (0.0, 0.0))
        assert cfg.dgm.grid.tau == 10.0 and cfg.dgm.n_subjects == 99 and cfg.dgm.variant is Variant.TAU10
        assert cfg.settings.basis.kind is BasisKind.CONSTANT
        assert cfg.settings.baseline_mode is BaselineMode.EVENT_WEIGHTED_LITERAL
        assert cfg.settings.truncate is False
        assert cfg.out_csv == "out.csv"

    def test_const_intercept_fit_variant_switches_basis(self):
        cfg = parse_config("[dgm]\nvariant = CONST_INTERCEPT_FIT\n")
        assert cfg.settings.basis.kind is BasisKind.CONSTANT

    @pytest.mark.parametrize(
        "doc,where",
        [
            ("[bogus]\na = 1\n", "[bogus]"),
            ("[scenario]\nreps = 3\n", "reps"),
            ("[scenario]\nn_replicates = many\n", "[scenario] n_replicates"),
            ("[scenario]\ngammas = 0.1\n", "[scenario] gammas"),
            ("[estimator]\ntruncate = maybe\n", "[estimator] truncate"),
            ("[dgm]\nvariant = NOPE\n", "NOPE"),
            ("[scenario]\nn_replicates = 0\n", "n_replicates"),
            ("[scenario]\ngammas = 0:0\ntable_rows = 0:0\n", "either"),
            ("no section header\n", "<config>"),
        ],
    )
    def test_errors_are_located(self, doc, where):
        with pytest.raises(ConfigError, match=None) as err:
            parse_config(doc)
        assert where in str(err.value)

    def test_load_config_file(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[scenario]\nn_boot = 3\n")
        assert exp_mod.load_config(p).n_boot == 3

    def test_gamma_pairs_validated(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(gamma_grid=((math.nan, 0.0),))


class TestRunScenario:
    def test_accounting(self, tiny_summary):
        for row in tiny_summary.rows:
            assert row.n_success + row.n_failed == TINY.n_replicates
            assert row.estimates["SW2"].size == 2
            assert row.bootstrap_var["SW2"].size == 1
            assert all(v >= 0 for v in row.mean_visits_arm)
            assert row.empirical_var("LS") >= 0

    def test_bias_is_absolute_mean_deviation(self, tiny_summary):
        row = tiny_summary.rows[0]
        assert row.mean_abs_bias("LS") == pytest.approx(abs(row.estimates["LS"].mean() - 1.0))

    def test_deterministic_and_worker_independent(self, tiny_summary):
        again = run_scenario(replace(TINY, workers=2))
        assert render_report(again, "csv") == render_report(tiny_summary, "csv")
        one = replace(TINY, n_replicates=1, n_boot=0, gamma_grid=((0.0, 0.0),))
        assert render_report(run_scenario(one), "csv") == render_report(run_scenario(one), "csv")

    def test_extra_settings_reuse_datasets(self):
        cfg = replace(
            TINY,
            n_replicates=1,
            n_boot=0,
            gamma_grid=((0.0, 0.0),),
            extra_settings={"const": EstimatorSettings(basis=replace(EstimatorSettings().basis, kind=BasisKind.CONSTANT))},
        )
        s = run_scenario(cfg)
        assert s.rows[0].extra["const"]["SW2"].shape == (1,)
        assert s.rows[0].mean_abs_bias("SW2", which="const") >= 0

    def test_failures_counted_then_abort(self, monkeypatch):
        real = exp_mod.estimate_all

        calls = []

        def flaky(ds, settings, robust=True):
            calls.append(1)
            if len(calls) % 2:
                raise RankDeficient("forced")
            return real(ds, settings, robust=robust)

        monkeypatch.setattr(exp_mod, "estimate_all", flaky)
        cfg = replace(TINY, n_replicates=4, n_boot=0, gamma_grid=((0.0, 0.0),))
        records = run_records(cfg)
        failed = sum(r.error is not None for r in records)
        assert 0 < failed < 4
        assert all("RankDeficient" in r.error for r in records if r.error)
        with pytest.raises(TooManyFailures):
            summarize(records, cfg.gamma_grid, cfg.n_replicates)


class TestReports:
    def test_empty_summary_header_only(self):
        assert render_report(ReplicationSummary(), "csv") == ",".join(REPORT_HEADER) + "\n"

    def test_csv_rows(self, tiny_summary):
        lines = render_report(tiny_summary, "csv").splitlines()
        assert lines[0] == ",".join(REPORT_HEADER)
        assert len(lines) == 1 + 2 * 6

    def test_single_scenario_text_row(self, tiny_summary):
        single = ReplicationSummary(rows=tiny_summary.rows[:1])
        lines = render_report(single, "text").splitlines()
        assert len(lines) == 2
        cells = lines[1].split()
        numeric = [float(c) for c in cells[1:]]
        assert len(numeric) == 12

    def test_byte_stable(self, tiny_summary, tmp_path):
        for fmt in ("csv", "text"):
            a, b = tmp_path / f"a.{fmt}", tmp_path / f"b.{fmt}"
            emit_report(tiny_summary, fmt, a)
            emit_report(tiny_summary, fmt, b)
            assert a.read_bytes() == b.read_bytes()

    def test_io_error_names_path(self, tiny_summary, tmp_path):
        bad = tmp_path / "missing" / "r.csv"
        with pytest.raises(OSError, match="missing"):
            emit_report(tiny_summary, "csv", bad)

    def test_result_formats(self, sim_small):
        from iivw.estimator import estimate_all

        res = estimate_all(sim_small)
        csv_text = render_report(res, "csv")
        assert csv_text.splitlines()[0] == "estimator,estimate,robust_var,bootstrap_var,n_rows"
        assert len(csv_text.splitlines()) == 7
        assert render_report(res, "jsonl").count("\n") == 6
        with pytest.raises(ConfigError):
            render_report(res, "xml")
