"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure, 4 file system error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import NumericError, ValidationError
from .estimator import BasisKind, BasisSpec, attach_bootstrap, bootstrap_variance, estimate_all, fit_weights
from .experiment import DEFAULT_CONFIG, ScenarioConfig, load_config, render_report, run_scenario
from .io import export_csv, export_weights_csv, ingest_csv
from .simulate import DgmConfig, Variant, simulate_dataset
from .treatment import positivity_diagnostics

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("iivw")


def _with_variant_basis(settings, variant):
    if variant == Variant.CONST_INTERCEPT_FIT.value:
        return replace(settings, basis=BasisSpec(BasisKind.CONSTANT))
    return settings


def _scenario(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    dgm = cfg.dgm
    if args.variant:
        dgm = DgmConfig.for_variant(args.variant, n_subjects=dgm.n_subjects, master_seed=dgm.master_seed)
    if args.seed is not None:
        dgm = replace(dgm, master_seed=args.seed)
    kw = {"dgm": dgm, "settings": _with_variant_basis(cfg.settings, args.variant)}
    if args.workers is not None:
        kw["workers"] = args.workers
    for name in ("n_replicates", "n_boot", "boot_replicates"):
        if getattr(args, name, None) is not None:
            kw[name] = getattr(args, name)
    if getattr(args, "n_subjects", None) is not None:
        kw["dgm"] = replace(dgm, n_subjects=args.n_subjects)
    if getattr(args, "gamma", None):
        kw["gamma_grid"] = (tuple(args.gamma),)
    return replace(cfg, **kw)


def _write(text: str, out) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_simulate(args) -> int:
    cfg = _scenario(args)
    gI, gZ = cfg.gamma_grid[0] if args.gamma else (0.0, 0.0)
    dgm = cfg.dgm.with_gamma(gI, gZ)
    n = args.n_replicates or 1
    if n == 1:
        _write(export_csv(simulate_dataset(dgm, args.replicate)), args.out)
        return EXIT_OK
    if not args.out or args.out == "-":
        raise ValidationError("--out must name a directory when simulating more than one replicate")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in range(args.replicate, args.replicate + n):
        export_csv(simulate_dataset(dgm, r), out / f"replicate_{r:04d}.csv")
    return EXIT_OK


def _settings(args):
    settings = (load_config(args.config) if args.config else ScenarioConfig()).settings
    return _with_variant_basis(settings, args.variant)


def cmd_estimate(args) -> int:
    ds = ingest_csv(args.data, dt=args.dt, tau=args.tau)
    settings = _settings(args)
    res = estimate_all(ds, settings)
    if args.n_boot:
        res = attach_bootstrap(res, bootstrap_variance(ds, settings, args.n_boot, args.seed or 0, args.workers or 1))
    _write(render_report(res, args.format), args.out)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    args.n_boot = args.n_boot or 200
    return cmd_estimate(args)


def cmd_replicate(args) -> int:
    cfg = replace(_scenario(args), out_csv=None, out_text=None)
    summary = run_scenario(cfg)
    _write(render_report(summary, args.format), args.out)
    return EXIT_OK


def cmd_diagnostics(args) -> int:
    ds = ingest_csv(args.data, dt=args.dt, tau=args.tau)
    settings = _settings(args)
    w, full, reduced, tfit = fit_weights(ds, settings)
    if args.format == "csv":
        _write(export_weights_csv(w, ds), args.out)
        return EXIT_OK
    lines = positivity_diagnostics(tfit, ds).lines()
    lines.append("visit intensity coefficients: " + ", ".join(f"{c}={v:.4f}" for c, v in zip(full.columns, full.coefficients)))
    lines.append("treatment-only coefficient: " + ", ".join(f"{v:.4f}" for v in reduced.coefficients))
    for k, (lo, hi) in sorted(w.bounds.items()):
        lines.append(f"{k} truncation bounds: [{lo:.4g}, {hi:.4g}]")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario configuration file (INI sections)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--out", help="output file (stdout if omitted) or directory")
    common.add_argument("--format", choices=("csv", "text"), default="csv")
    common.add_argument("--variant", choices=[v.value for v in Variant])
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("data", help="dataset CSV")
    data.add_argument("--dt", type=float, default=0.01)
    data.add_argument("--tau", type=float, help="follow-up horizon (default: smallest grid point covering all censoring times)")

    p = argparse.ArgumentParser(prog="iivw", description="Inverse-intensity-weighted marginal treatment effects")
    p.add_argument("--print-config", action="store_true", help="print the default configuration and exit")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("simulate", parents=[common], help="simulate dataset(s) to CSV")
    s.add_argument("--gamma", type=float, nargs=2, metavar=("GAMMA_I", "GAMMA_Z"))
    s.add_argument("--replicate", type=int, default=0, help="first replicate index")
    s.add_argument("--n-replicates", type=int)
    s.add_argument("--n-subjects", type=int)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", parents=[common, data], help="six estimators on a dataset")
    e.add_argument("--n-boot", type=int, default=0)
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bootstrap", parents=[common, data], help="estimates with bootstrap variances")
    b.add_argument("--n-boot", type=int, default=200)
    b.set_defaults(func=cmd_bootstrap)

    r = sub.add_parser("replicate-table1", parents=[common], help="Monte Carlo replication over coefficient pairs")
    r.add_argument("--gamma", type=float, nargs=2, metavar=("GAMMA_I", "GAMMA_Z"), help="run a single pair")
    r.add_argument("--n-replicates", type=int)
    r.add_argument("--n-boot", type=int)
    r.add_argument("--boot-replicates", type=int)
    r.add_argument("--n-subjects", type=int)
    r.set_defaults(func=cmd_replicate)

    d = sub.add_parser("diagnostics", parents=[common, data], help="weights (csv) or positivity summary (text)")
    d.set_defaults(func=cmd_diagnostics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    if args.print_config:
        sys.stdout.write(DEFAULT_CONFIG)
        return EXIT_OK
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
