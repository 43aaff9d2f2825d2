"""Closed-form height distributions against the quadrature oracle."""

import argparse
import json

from posfree.verify import closed_form_errors

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--count", type=int, default=1000)
ap.add_argument("--seed", type=int, default=2024)
args = ap.parse_args()
print(json.dumps(closed_form_errors(args.count, args.seed), indent=2))
