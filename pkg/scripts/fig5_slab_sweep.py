"""Slab reflectance/transmittance sweep: analog vs position-free on the 75-point grid."""

import argparse

from posfree import bench
from posfree.bench import SweepConfig

from _common import summarize

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--samples", type=int, default=100_000)
ap.add_argument("--bins", type=int, default=32)
ap.add_argument("--seed", type=int, default=5)
ap.add_argument("--out", default="results/slab.csv")
args = ap.parse_args()

cfg = SweepConfig(scenario="slab", methods=("analog", "position_free"), thickness=(0.5, 1, 2, 4, 8),
                  g=(-0.9, -0.5, 0, 0.5, 0.9), theta_i=(0, 45, 80), bins=args.bins, samples=args.samples,
                  seed=args.seed)
res = bench.evaluate_cells(cfg)
bench.write_csv(bench.run_sweep(cfg, res), args.out)
summarize(res, "analog", "position_free", "L, sigma, albedo, g / theta_i = ")
