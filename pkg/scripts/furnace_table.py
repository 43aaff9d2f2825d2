"""Directional albedo of Perfect-Fresnel GGX conductors (white furnace)."""

import argparse

from posfree import bench

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--samples", type=int, default=1_000_000)
ap.add_argument("--seed", type=int, default=7)
args = ap.parse_args()

print("alpha  theta_i  method          albedo    stderr")
for alpha in (0.2, 0.5, 1.0):
    for theta in (0.0, 45.0, 80.0):
        for method in ("analog", "position_free", "wang"):
            r = bench.furnace(alpha, theta, method, args.samples, args.seed)
            print(f"{alpha:<6g} {theta:<8g} {method:15s} {r.albedo:.5f}  {r.stderr:.5f}")
