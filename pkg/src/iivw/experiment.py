"""Monte Carlo replication harness.

A scenario is a list of visit-model coefficient pairs; for every pair and
replicate a dataset is simulated, the six estimators are computed and,
optionally, bootstrapped.  Every random stream is derived from
``(master_seed, replicate index, ...)`` so results do not depend on the number
of workers or the scheduling order.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, IIVWError, TooManyFailures
from .estimator import ESTIMATORS, BasisKind, BasisSpec, EstimatorResult, EstimatorSettings, bootstrap_estimates, estimate_all
from .intensity import BaselineMode, IntensitySpec, breslow_baseline, fit_partial_likelihood
from .panel import GridSpec
from .simulate import DgmConfig, Variant, clipped_cells, simulate_dataset

log = logging.getLogger(__name__)

# Rows of the published scenario table, labelled as printed there.  The
# printed pair lists the mediator coefficient first: label (a; b) means
# gamma_Z = a, gamma_I = b (this ordering reproduces the published per-arm
# visit counts).
TABLE1_LABELS = (
    (-0.3, 0.1),
    (-0.2, 0.2),
    (-0.1, 0.2),
    (-0.1, -0.3),
    (0.0, 0.0),
    (0.1, -0.3),
    (0.2, -0.2),
    (0.3, 0.2),
)

BOOT_TAG = 7919
MAX_REPLICATE_FAILURE = 0.02


def gamma_from_label(label) -> tuple[float, float]:
    """Table row label ``(a, b)`` -> ``(gamma_I, gamma_Z)``."""
    a, b = label
    return (float(b), float(a))


def label_from_gamma(gamma) -> tuple[float, float]:
    gI, gZ = gamma
    return (float(gZ), float(gI))


TABLE1_GAMMAS = tuple(gamma_from_label(lab) for lab in TABLE1_LABELS)


@dataclass(frozen=True)
class ScenarioConfig:
    dgm: DgmConfig = field(default_factory=DgmConfig)
    gamma_grid: tuple[tuple[float, float], ...] = TABLE1_GAMMAS  # (gamma_I, gamma_Z)
    n_replicates: int = 1000
    n_boot: int = 200
    boot_replicates: int = 100
    settings: EstimatorSettings = field(default_factory=EstimatorSettings)
    extra_settings: dict = field(default_factory=dict)  # name -> EstimatorSettings, run on the same datasets
    workers: int = 1
    out_csv: str | None = None
    out_text: str | None = None

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be >= 1")
        for g in self.gamma_grid:
            if len(g) != 2 or not all(math.isfinite(x) for x in g):
                raise ConfigError(f"gamma pair {g!r} is not a finite pair")


@dataclass
class ReplicateRecord:
    gamma: tuple[float, float]
    replicate: int
    estimates: dict[str, float] | None = None
    extra: dict[str, dict[str, float]] = field(default_factory=dict)
    gamma_hat: np.ndarray | None = None
    delta_hat: np.ndarray | None = None
    visits_arm: tuple[float, float] = (math.nan, math.nan)
    clipped: int = 0
    bootstrap_var: dict[str, float] | None = None
    error: str | None = None


def baseline_slope(table) -> float:
    """Slope of the per-bucket baseline rate on gap time.

    Buckets are weighted by their risk-set exposure, the inverse variance of
    a Poisson rate estimate, so sparse long-gap buckets do not dominate.
    """
    b = table.gaps * table.dt
    w = np.ones_like(b) if table.exposure is None else table.exposure
    return float(np.polyfit(b, table.rates, 1, w=np.sqrt(w))[0])


def run_replicate(config: ScenarioConfig, gamma, replicate: int, *, bootstrap: bool = False) -> ReplicateRecord:
    dgm = config.dgm.with_gamma(*gamma)
    rec = ReplicateRecord(tuple(gamma), replicate)
    try:
        ds = simulate_dataset(dgm, replicate)
        counts = ds.followup_visit_counts()
        a = ds.treatment
        rec.visits_arm = (float(counts[a == 0].mean()), float(counts[a == 1].mean()))
        rec.clipped = clipped_cells(ds)
        res = estimate_all(ds, config.settings, robust=False)
        rec.estimates = res.estimates
        rec.gamma_hat = res.gamma
        rec.delta_hat = res.delta
        for name, st in config.extra_settings.items():
            rec.extra[name] = estimate_all(ds, st, robust=False).estimates
        if bootstrap and config.n_boot >= 2:
            seed = int(np.random.SeedSequence(dgm.master_seed, spawn_key=(BOOT_TAG, replicate)).generate_state(1)[0])
            reps = bootstrap_estimates(ds, config.settings, config.n_boot, seed)
            rec.bootstrap_var = {k: float(np.var(v, ddof=1)) for k, v in reps.items()}
    except IIVWError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("gamma=%s replicate %d failed: %s", gamma, replicate, rec.error)
    return rec


def _job(args):
    config, gamma, r, boot = args
    return run_replicate(config, gamma, r, bootstrap=boot)


@dataclass
class ScenarioRow:
    gamma: tuple[float, float]
    n_success: int
    n_failed: int
    mean_visits_arm: tuple[float, float]
    gamma_hat_mean: np.ndarray | None
    estimates: dict[str, np.ndarray]
    bootstrap_var: dict[str, np.ndarray]
    extra: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    clipped: int = 0

    @property
    def label(self):
        return label_from_gamma(self.gamma)

    def mean_abs_bias(self, name: str, truth: float = 1.0, which: str | None = None) -> float:
        """Absolute value of the Monte Carlo mean bias."""
        est = self.estimates[name] if which is None else self.extra[which][name]
        return float(abs(np.mean(est) - truth)) if est.size else math.nan

    def empirical_var(self, name: str, which: str | None = None) -> float:
        est = self.estimates[name] if which is None else self.extra[which][name]
        return float(np.var(est, ddof=1)) if est.size > 1 else math.nan

    def mean_bootstrap_var(self, name: str) -> float:
        v = self.bootstrap_var.get(name)
        return float(np.mean(v)) if v is not None and v.size else math.nan


@dataclass
class ReplicationSummary:
    rows: list[ScenarioRow] = field(default_factory=list)
    truth: float = 1.0

    def row(self, gamma) -> ScenarioRow:
        for r in self.rows:
            if np.allclose(r.gamma, gamma):
                return r
        raise KeyError(gamma)


def summarize(records: list[ReplicateRecord], gammas, n_replicates: int, extra_names=()) -> ReplicationSummary:
    out = ReplicationSummary()
    for g in gammas:
        recs = sorted((r for r in records if np.allclose(r.gamma, g)), key=lambda r: r.replicate)
        ok = [r for r in recs if r.error is None]
        failed = len(recs) - len(ok)
        if failed > MAX_REPLICATE_FAILURE * n_replicates:
            raise TooManyFailures(f"gamma={g}: {failed} of {n_replicates} replicates failed")
        est = {n: np.array([r.estimates[n] for r in ok]) for n in ESTIMATORS}
        boot = {n: np.array([r.bootstrap_var[n] for r in ok if r.bootstrap_var]) for n in ESTIMATORS}
        extra = {e: {n: np.array([r.extra[e][n] for r in ok]) for n in ESTIMATORS} for e in extra_names}
        gh = np.mean([r.gamma_hat for r in ok], axis=0) if ok else None
        visits = tuple(float(np.mean([r.visits_arm[a] for r in ok])) if ok else math.nan for a in (0, 1))
        out.rows.append(ScenarioRow(tuple(g), len(ok), failed, visits, gh, est, boot, extra, sum(r.clipped for r in ok)))
    return out


def run_records(config: ScenarioConfig) -> list[ReplicateRecord]:
    jobs = [
        (config, tuple(g), r, r < config.boot_replicates and config.n_boot >= 2)
        for g in config.gamma_grid
        for r in range(config.n_replicates)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            return list(ex.map(_job, jobs, chunksize=max(1, len(jobs) // (8 * config.workers))))
    return [_job(j) for j in jobs]


def run_scenario(config: ScenarioConfig) -> ReplicationSummary:
    records = run_records(config)
    summary = summarize(records, config.gamma_grid, config.n_replicates, tuple(config.extra_settings))
    if config.out_csv:
        emit_report(summary, "csv", config.out_csv)
    if config.out_text:
        emit_report(summary, "text", config.out_text)
    return summary


# -- reports -----------------------------------------------------------------

REPORT_HEADER = (
    "gamma1",
    "gamma2",
    "estimator",
    "mean_abs_bias",
    "empirical_var",
    "mean_bootstrap_var",
    "mean_visits_arm0",
    "mean_visits_arm1",
)

RESULT_HEADER = ("estimator", "estimate", "robust_var", "bootstrap_var", "n_rows")


def _num(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.10g}"


def summary_csv(summary: ReplicationSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for row in summary.rows:
        for name in ESTIMATORS:
            w.writerow(
                [
                    _num(row.gamma[0]),
                    _num(row.gamma[1]),
                    name,
                    _num(row.mean_abs_bias(name, summary.truth)),
                    _num(row.empirical_var(name)),
                    _num(row.mean_bootstrap_var(name)),
                    _num(row.mean_visits_arm[0]),
                    _num(row.mean_visits_arm[1]),
                ]
            )
    return buf.getvalue()


def summary_text(summary: ReplicationSummary) -> str:
    """Aligned table: one row per (gamma_I, gamma_Z) pair, bias then variance for each estimator."""
    head = ["gamma_I;gamma_Z"] + [f"bias_{n}" for n in ESTIMATORS] + [f"var_{n}" for n in ESTIMATORS]
    lines = [head]
    for row in summary.rows:
        var = [row.mean_bootstrap_var(n) for n in ESTIMATORS]
        if all(math.isnan(v) for v in var):
            var = [row.empirical_var(n) for n in ESTIMATORS]
        cells = [f"{row.gamma[0]:g};{row.gamma[1]:g}"]
        cells += [f"{row.mean_abs_bias(n, summary.truth):.2f}" for n in ESTIMATORS]
        cells += [f"{v:.2f}" for v in var]
        lines.append(cells)
    widths = [max(len(r[j]) for r in lines) for j in range(len(head))]
    return "".join("  ".join(c.rjust(wd) for c, wd in zip(r, widths)) + "\n" for r in lines)


def result_csv(result: EstimatorResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for name, est, rv, bv, n in result.rows():
        w.writerow([name, _num(est), _num(rv), _num(bv), n])
    return buf.getvalue()


def result_text(result: EstimatorResult) -> str:
    lines = [f"{'estimator':<9} {'estimate':>10} {'robust_var':>11} {'boot_var':>10}"]
    for name, est, rv, bv, _ in result.rows():
        lines.append(f"{name:<9} {est:>10.4f} {rv:>11.4g} {bv:>10.4g}")
    lines.append(f"visit rows: {result.n_visit_rows}")
    return "\n".join(lines) + "\n"


def result_jsonl(result: EstimatorResult) -> str:
    import json

    out = []
    for name, est, rv, bv, n in result.rows():
        rec = {"name": name, "estimate": est, "robust_var": rv, "bootstrap_var": bv, "n_rows": n}
        out.append(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in rec.items()}))
    return "\n".join(out) + "\n"


def render_report(obj, fmt: str = "csv") -> str:
    if isinstance(obj, ReplicationSummary):
        renderers = {"csv": summary_csv, "text": summary_text}
    elif isinstance(obj, EstimatorResult):
        renderers = {"csv": result_csv, "text": result_text, "jsonl": result_jsonl}
    else:
        raise TypeError(f"cannot report a {type(obj).__name__}")
    if fmt not in renderers:
        raise ConfigError(f"format {fmt!r} not available for {type(obj).__name__}; choose from {sorted(renderers)}")
    return renderers[fmt](obj)


def emit_report(obj, fmt: str, path) -> None:
    text = render_report(obj, fmt)
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc


# -- configuration file --------------------------------------------------------

def _parse_gammas(text: str, where: str, *, labels: bool):
    pairs = []
    for item in text.replace("\n", ",").split(","):
        item = item.strip()
        if not item:
            continue
        try:
            a, b = (float(x) for x in item.replace(";", ":").split(":"))
        except ValueError:
            raise ConfigError(f"{where}: cannot parse gamma pair {item!r} (expected 'a:b')") from None
        pairs.append(gamma_from_label((a, b)) if labels else (a, b))
    if not pairs:
        raise ConfigError(f"{where}: empty gamma list")
    return tuple(pairs)


_SCHEMA = {
    "scenario": {
        "n_replicates": int,
        "n_boot": int,
        "boot_replicates": int,
        "workers": int,
        "gammas": "gammas",
        "table_rows": "labels",
    },
    "dgm": {
        "n_subjects": int,
        "dt": float,
        "tau": float,
        "variant": str,
        "master_seed": int,
        "baseline_rate_scale": float,
        "noise_sd": float,
    },
    "estimator": {
        "basis": str,
        "n_interior_knots": int,
        "basis_time": str,
        "lower_pct": float,
        "upper_pct": float,
        "truncate": bool,
        "baseline_mode": str,
        "link": str,
        "time_scale": str,
        "stabilized_ipt": bool,
        "truncate_ipt": bool,
    },
    "output": {"csv": str, "text": str},
}


def _convert(section, key, raw, kind):
    where = f"[{section}] {key}"
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            return low in ("true", "yes", "1")
        if kind in ("gammas", "labels"):
            return _parse_gammas(raw, where, labels=kind == "labels")
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: invalid value {raw!r} for type {getattr(kind, '__name__', kind)}") from None


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from an INI-style document; unset keys keep their defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    vals: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{source}: [{section}] unknown key {key!r}")
            vals.setdefault(section, {})[key] = _convert(section, key, raw, _SCHEMA[section][key])

    try:
        d = vals.get("dgm", {})
        variant = Variant(d.get("variant", "MAIN"))
        grid_kw = {}
        if "dt" in d or "tau" in d or variant is Variant.TAU10:
            grid_kw["grid"] = GridSpec(d.get("dt", 0.01), d.get("tau", 10.0 if variant is Variant.TAU10 else 5.0))
        dgm = DgmConfig.for_variant(
            variant,
            **grid_kw,
            **{k: v for k, v in d.items() if k in ("n_subjects", "master_seed", "baseline_rate_scale", "noise_sd")},
        )
        e = vals.get("estimator", {})
        basis_kind = e.get("basis", "CONSTANT" if variant is Variant.CONST_INTERCEPT_FIT else "CUBIC_SPLINE_GAP")
        settings = EstimatorSettings(
            basis=BasisSpec(BasisKind(basis_kind), e.get("n_interior_knots", 3), e.get("basis_time", "gap")),
            lower_pct=e.get("lower_pct", 2.5),
            upper_pct=e.get("upper_pct", 97.5),
            truncate=e.get("truncate", True),
            baseline_mode=BaselineMode(e.get("baseline_mode", "RISK_SET")),
            intensity=IntensitySpec(time_scale=e.get("time_scale", "gap")),
            link=e.get("link", "exp"),
            stabilized_ipt=e.get("stabilized_ipt", False),
            truncate_ipt=e.get("truncate_ipt", False),
        )
        s = vals.get("scenario", {})
        if "gammas" in s and "table_rows" in s:
            raise ConfigError(f"{source}: [scenario] give either gammas or table_rows, not both")
        o = vals.get("output", {})
        return ScenarioConfig(
            dgm=dgm,
            gamma_grid=s.get("gammas", s.get("table_rows", TABLE1_GAMMAS)),
            n_replicates=s.get("n_replicates", 1000),
            n_boot=s.get("n_boot", 200),
            boot_replicates=s.get("boot_replicates", 100),
            settings=settings,
            workers=s.get("workers", 1),
            out_csv=o.get("csv"),
            out_text=o.get("text"),
        )
    except ConfigError:
        raise
    except (ValueError, IIVWError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


DEFAULT_CONFIG = """\
# Scenario configuration. Every key is optional; shown values are the defaults.
[scenario]
n_replicates = 1000
n_boot = 200
# bootstrap only the first boot_replicates replicates of each pair
boot_replicates = 100
workers = 1
# pairs as gamma_I:gamma_Z; alternatively table_rows = a:b,... using the
# published row labels (mediator coefficient first)
gammas = 0.1:-0.3, 0.2:-0.2, 0.2:-0.1, -0.3:-0.1, 0:0, -0.3:0.1, -0.2:0.2, 0.2:0.3

[dgm]
n_subjects = 500
dt = 0.01
tau = 5
variant = MAIN
master_seed = 20240101

[estimator]
basis = CUBIC_SPLINE_GAP
n_interior_knots = 3
basis_time = gap
lower_pct = 2.5
upper_pct = 97.5
truncate = true
baseline_mode = RISK_SET
link = exp
time_scale = gap
stabilized_ipt = false
# also winsorize the treatment weight at lower_pct/upper_pct
truncate_ipt = false
"""
