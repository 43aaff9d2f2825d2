"""Conductor multiple scattering: analog, position-free and Wang on the roughness grid."""

import argparse

from posfree import bench
from posfree.bench import SweepConfig

from _common import summarize

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--samples", type=int, default=200_000)
ap.add_argument("--bins", type=int, default=32)
ap.add_argument("--seed", type=int, default=6)
ap.add_argument("--fresnel", default="perfect")
ap.add_argument("--out", default="results/conductor.csv")
args = ap.parse_args()

cfg = SweepConfig(scenario="conductor", methods=("analog", "position_free", "wang"), alpha=(0.2, 0.4, 0.75, 1.0),
                  theta_i=(45, 80), bins=args.bins, samples=args.samples, seed=args.seed, fresnel=args.fresnel)
res = bench.evaluate_cells(cfg)
bench.write_csv(bench.run_sweep(cfg, res), args.out)
summarize(res, "analog", "position_free", "alpha / theta_i = ")
summarize(res, "analog", "wang", "alpha / theta_i = ")
