"""Dielectric (ior 1.8): hybrid vs analog on the reflection lobe, vs Wang on the refraction lobe."""

import argparse
import math

from posfree import bench
from posfree.bench import SweepConfig

from _common import by_point

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--samples", type=int, default=200_000)
ap.add_argument("--bins", type=int, default=32)
ap.add_argument("--seed", type=int, default=10)
ap.add_argument("--out", default="results/dielectric.csv")
args = ap.parse_args()

cfg = SweepConfig(scenario="dielectric", methods=("analog", "wang", "hybrid"), alpha=(0.2, 0.4, 0.75, 1.0),
                  ior=(1.8,), theta_i=(45, 80), bins=args.bins, samples=args.samples, seed=args.seed)
res = bench.evaluate_cells(cfg)
bench.write_csv(bench.run_sweep(cfg, res), args.out)


def lobes(r):
    c, mean, m2 = r.extra["lobes"]
    return mean, [math.sqrt(v / (c - 1) / c) for v in m2]


for (key, a, h), (_k, w, _h) in zip(by_point(res, "analog", "hybrid"), by_point(res, "wang", "hybrid")):
    (ma, sa), (mh, sh), (mw, sw) = lobes(a), lobes(h), lobes(w)
    zr = abs(mh[0] - ma[0]) / math.hypot(sh[0], sa[0])
    zt = abs(mh[1] - mw[1]) / math.hypot(sh[1], sw[1])
    zb = abs(mw[1] - ma[1]) / math.hypot(sw[1], sa[1])
    print(f"{key}: reflection hybrid-analog z {zr:5.2f} | refraction hybrid-wang z {zt:5.2f}, "
          f"wang-analog z {zb:6.2f}")
