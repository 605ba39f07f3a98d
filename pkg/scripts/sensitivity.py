"""Estimator bias under the sensitivity variants of the data-generating model.

    python scripts/sensitivity.py --label 0 0 --replicates 200
"""

from __future__ import annotations

import argparse
import os

from iivw.estimator import ESTIMATORS, BasisKind, BasisSpec, EstimatorSettings
from iivw.experiment import ScenarioConfig, gamma_from_label, run_scenario
from iivw.simulate import DgmConfig, Variant

VARIANTS = {
    "constant intercept fitted": (Variant.MAIN, EstimatorSettings(basis=BasisSpec(BasisKind.CONSTANT))),
    "follow-up to 10": (Variant.TAU10, EstimatorSettings()),
    "mediator drifts with visit count": (Variant.CUMVISIT_Z, EstimatorSettings()),
    "constant outcome intercept": (Variant.CONST_INTERCEPT_DGM, EstimatorSettings()),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--label", type=float, nargs=2, default=(0.0, 0.0), metavar=("A", "B"), help="table row label")
    ap.add_argument("--replicates", type=int, default=200)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    gamma = gamma_from_label(tuple(args.label))
    print(f"{'analysis':<34} " + " ".join(f"{n:>6}" for n in ESTIMATORS))
    for name, (variant, settings) in VARIANTS.items():
        cfg = ScenarioConfig(
            dgm=DgmConfig.for_variant(variant),
            gamma_grid=(gamma,),
            n_replicates=args.replicates,
            n_boot=0,
            settings=settings,
            workers=args.workers,
        )
        row = run_scenario(cfg).rows[0]
        print(f"{name:<34} " + " ".join(f"{row.mean_abs_bias(n):6.2f}" for n in ESTIMATORS))


if __name__ == "__main__":
    main()
