"""Compare the mean bootstrap variance with the Monte Carlo variance of each estimator.

    python scripts/bootstrap_vs_empirical.py --replicates 300 --boot-replicates 20 --n-boot 100
"""

from __future__ import annotations

import argparse
import os

from iivw.estimator import ESTIMATORS, BasisKind, BasisSpec, EstimatorSettings
from iivw.experiment import ScenarioConfig, gamma_from_label, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--label", type=float, nargs=2, default=(0.0, 0.0), metavar=("A", "B"))
    ap.add_argument("--replicates", type=int, default=300)
    ap.add_argument("--boot-replicates", type=int, default=20)
    ap.add_argument("--n-boot", type=int, default=100)
    ap.add_argument("--constant", action="store_true", help="fit a constant intercept instead of the spline")
    ap.add_argument("--truncate-ipt", action="store_true", help="also winsorize the treatment weight")
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    basis = BasisSpec(BasisKind.CONSTANT) if args.constant else BasisSpec()
    settings = EstimatorSettings(basis=basis, truncate_ipt=args.truncate_ipt)
    cfg = ScenarioConfig(
        gamma_grid=(gamma_from_label(tuple(args.label)),),
        n_replicates=args.replicates,
        n_boot=args.n_boot,
        boot_replicates=args.boot_replicates,
        settings=settings,
        workers=args.workers,
    )
    row = run_scenario(cfg).rows[0]
    print(f"{'':<10} " + " ".join(f"{n:>7}" for n in ESTIMATORS))
    print(f"{'empirical':<10} " + " ".join(f"{row.empirical_var(n):7.4f}" for n in ESTIMATORS))
    print(f"{'bootstrap':<10} " + " ".join(f"{row.mean_bootstrap_var(n):7.4f}" for n in ESTIMATORS))


if __name__ == "__main__":
    main()
