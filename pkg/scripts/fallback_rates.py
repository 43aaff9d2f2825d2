"""How often the slab position-free walk falls back to analog tracking, and why."""

import argparse

import numpy as np

from posfree import slab

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--requests", type=int, default=1_000_000)
ap.add_argument("--seed", type=int, default=9)
args = ap.parse_args()

L = np.array([0.5, 1, 2, 4, 8.0])
G = np.array([-0.9, -0.5, 0, 0.5, 0.9])
T = np.radians([0.0, 45.0, 80.0])
n = args.requests
print("distribution            cap      numerical  bad")
for name, lo, hi in (("grid, albedo 1", 1.0, 1.0), ("grid, albedo U[0,1]", 0.0, 1.0), ("grid, albedo U[0.9,1]", 0.9, 1.0)):
    c, m, b = slab.fallback_count(args.seed, n, 64, 1.0, L, G, T, lo, hi)
    print(f"{name:22s} {c / n:8.3%} {m / n:9.3%}  {b}")
for Lk in L:
    c, m, b = slab.fallback_count(args.seed, n // 5, 64, 1.0, np.array([Lk]), G, T, 1.0, 1.0)
    print(f"L = {Lk:<4g} albedo 1      {c / (n // 5):8.3%} {m / (n // 5):9.3%}  {b}")
