"""Command line entry point: ``posfree bench|verify|furnace|reciprocity``."""

from __future__ import annotations

import argparse
import json
import sys

from . import bench
from .bench import ConfigError, SweepConfig
from .verify import Suite, run_verify

SUITE_NAMES = {s.value: s for s in Suite}
PARAM_FLAGS = ("L", "sigma", "albedo", "g", "alpha", "ior")


def _add_sweep_flags(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--scenario", choices=bench.SCENARIOS)
    p.add_argument("--method", help="comma separated: analog, position_free, wang, hybrid")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--theta-i", dest="theta_i", help="comma separated incidence angles in degrees")
    p.add_argument("--bins", type=int)
    p.add_argument("--out", help="CSV path ('-' for stdout)")
    for name in PARAM_FLAGS:
        p.add_argument(f"--{name}", help=f"comma separated {name} values")
    p.add_argument("--fresnel", help="perfect | schlick:F0 | conductor:ETA:K")
    p.add_argument("--max-length", dest="max_length", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False)


def sweep_config(args) -> SweepConfig:
    cfg = SweepConfig.from_file(args.config) if args.config else None
    over = {k: getattr(args, k, None) for k in (
        "scenario", "samples", "seed", "theta_i", "bins", "out", "fresnel", "max_length", "threads", "timing",
    ) + PARAM_FLAGS}
    over["methods"] = args.method
    if cfg is None:
        # scenario first, so its default method set can be chosen
        scen = over.get("scenario") or "slab"
        cfg = SweepConfig(scenario=scen, methods=bench.VALID_METHODS[scen][:2] if scen != "dielectric" else ("analog", "hybrid"))
    elif over.get("scenario") and over["scenario"] != cfg.scenario and over["methods"] is None:
        over["methods"] = ",".join(bench.VALID_METHODS[over["scenario"]][:2])
    return cfg.with_overrides(over)


def cmd_bench(args) -> int:
    cfg = sweep_config(args)
    rows = bench.run_sweep(cfg)
    text = bench.write_csv(rows, cfg.out)
    if cfg.out in ("-", ""):
        sys.stdout.write(text)
    else:
        print(f"wrote {len(rows)} rows to {cfg.out}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    kw = {}
    if args.count is not None and args.suite in ("exitprob", "convolution"):
        kw["count"] = args.count
    if args.samples is not None and args.suite in ("furnace", "reciprocity"):
        kw["samples"] = args.samples
    if args.seed is not None and args.suite != "singlescatter":
        kw["seed"] = args.seed
    rep = run_verify(SUITE_NAMES[args.suite], **kw)
    print(json.dumps(rep.to_dict(), indent=2))
    return 0 if rep.passed else 1


def _floats(s):
    return [float(x) for x in s.split(",")]


def cmd_furnace(args) -> int:
    ok = True
    print("alpha,theta_i_deg,method,albedo,stderr,n_samples,fallbacks")
    for a in _floats(args.alpha):
        for t in _floats(args.theta_i):
            for m in args.method.split(","):
                r = bench.furnace(a, t, m, args.samples, args.seed, args.fresnel)
                print(f"{a!r},{t!r},{m},{r.albedo!r},{r.stderr!r},{r.count},{r.fallbacks}")
                if m != "wang" and args.fresnel == "perfect":
                    ok &= abs(r.albedo - 1.0) <= args.tolerance
    return 0 if ok else 1


def cmd_reciprocity(args) -> int:
    ok = True
    print("alpha,pair,f_ab,se_ab,f_ba,se_ba,z")
    for a in _floats(args.alpha):
        for k, p in enumerate(bench.reciprocity(a, args.pairs, args.samples, args.seed, args.method)):
            print(f"{a!r},{k},{p.f_ab!r},{p.se_ab!r},{p.f_ba!r},{p.se_ba!r},{p.z!r}")
            ok &= p.z <= 3.0
    return 0 if ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="posfree", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("bench", help="run a parameter sweep and emit CSV")
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run an oracle suite; nonzero exit on failure")
    p.add_argument("suite", choices=sorted(SUITE_NAMES))
    p.add_argument("--count", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("furnace", help="conductor directional albedo")
    p.add_argument("--alpha", default="0.2,0.5,1.0")
    p.add_argument("--theta-i", dest="theta_i", default="0,45,80")
    p.add_argument("--method", default="analog,position_free")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fresnel", default="perfect")
    p.add_argument("--tolerance", type=float, default=0.005)
    p.set_defaults(func=cmd_furnace)

    p = sub.add_parser("reciprocity", help="f(a, b) vs f(b, a) on random pairs")
    p.add_argument("--alpha", default="0.75")
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", default="position_free")
    p.set_defaults(func=cmd_reciprocity)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
