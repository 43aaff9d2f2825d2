"""One test per acceptance criterion, at full sample counts.

Each test prints a ``criterion N: PASS|FAIL`` line; the lines are repeated
in the terminal summary.  Expensive sweeps are shared between criteria
through module fixtures.  Expect roughly half an hour on one core.
"""

import math

import numpy as np
import pytest

from posfree import bench, slab
from posfree import microfacet as mf
from posfree.bench import STAT_COLUMNS, SweepConfig
from posfree.height import SlabExtent
from posfree.media import Direction, Isotropic, SlabMedium
from posfree.stats import combined_z
from posfree.verify import PROB_FLOOR, closed_form_errors

pytestmark = pytest.mark.slow

SLAB_L = (0.5, 1.0, 2.0, 4.0, 8.0)
SLAB_G = (-0.9, -0.5, 0.0, 0.5, 0.9)
SLAB_THETA = (0.0, 45.0, 80.0)
MF_ALPHA = (0.2, 0.4, 0.75, 1.0)
MF_THETA = (45.0, 80.0)
BINS = 32
N = 1_000_000


def pairs(results, a="analog", b="position_free"):
    """Group cell results by (grid point, theta_i) into {method: result}."""
    out = {}
    for r in results:
        out.setdefault((tuple(r.params.values()), r.theta_i), {})[r.method] = r
    return [(k, v[a], v[b]) for k, v in out.items() if a in v and b in v]


@pytest.fixture(scope="module")
def slab_grid():
    cfg = SweepConfig(scenario="slab", methods=("analog", "position_free"), thickness=SLAB_L, sigma=(1.0,),
                      albedo=(1.0,), g=SLAB_G, theta_i=SLAB_THETA, bins=BINS, samples=N, seed=5)
    return bench.evaluate_cells(cfg)


@pytest.fixture(scope="module")
def conductor_grid():
    cfg = SweepConfig(scenario="conductor", methods=("analog", "position_free", "wang"), alpha=MF_ALPHA,
                      theta_i=MF_THETA, bins=BINS, samples=N, seed=6)
    return bench.evaluate_cells(cfg)


def test_criterion_01_closed_forms(report):
    m = closed_form_errors(1000, seed=2024)
    ok = m["max_exit_error"] <= 1e-8 and m["max_density_error"] <= 1e-8
    report(1, ok, f"1000 sequences (+{m['unstable']} flagged unstable and redrawn): "
                  f"max exit rel. error {m['max_exit_error']:.2e} (floor {PROB_FLOOR:g}), "
                  f"max density error {m['max_density_error']:.2e} of peak; tolerance 1e-8")
    assert ok


def test_criterion_02_slab_unbiased(report, slab_grid):
    z = np.concatenate([combined_z(a.mean, a.stderr, p.mean, p.stderr) for _k, a, p in pairs(slab_grid)])
    frac = float(np.mean(z <= 3.0))
    ok = len(z) == 75 * BINS and frac >= 0.99
    report(2, ok, f"{int(np.sum(z <= 3.0))}/{len(z)} cells within 3 combined stderr ({frac:.2%}, need 99%); "
                  f"max z {z.max():.2f}")
    assert ok


def test_criterion_03_slab_efficiency(report, slab_grid):
    wins = []
    for _k, a, p in pairs(slab_grid):
        wins.append(p.ns_per_eval * p.variance <= a.ns_per_eval * a.variance)
    wins = np.concatenate(wins)
    frac = float(np.mean(wins))
    ratio = np.array([p.ns_per_eval / a.ns_per_eval for _k, a, p in pairs(slab_grid)])
    ok = frac >= 0.85
    report(3, ok, f"position-free inverse efficiency <= analog in {int(wins.sum())}/{len(wins)} cells "
                  f"({frac:.1%}, need 85%); median cost ratio {np.median(ratio):.2f}")
    assert ok


def test_criterion_04_single_scatter(report):
    errs = []
    deterministic = True
    iso = Isotropic()
    down, up = Direction(0.0, 0.0, 1.0), Direction(0.0, 0.0, -1.0)
    cases = [
        (SlabMedium(1.0, SlabExtent.finite(1.0), 1.0, iso), (1 - math.exp(-2)) / 2 / (4 * math.pi)),
        (SlabMedium(1.0, SlabExtent.finite(50.0), 1.0, iso), 0.5 / (4 * math.pi)),
    ]
    for m, ref in cases:
        vals = {slab.eval_position_free(slab.SlabEvalRequest(down, up, m, 2, s)).value for s in range(50)}
        deterministic &= len(vals) == 1
        errs.append(abs(vals.pop() - ref) / ref)
    rng = np.random.default_rng(8)
    for _ in range(50):
        s = mf.GgxSurface(float(rng.uniform(0.05, 1.5)))
        wi = mf.incident(float(rng.uniform(0.0, 85.0)))
        wo = mf.in_plane(float(rng.uniform(-85.0, 85.0)))
        ref = mf.single_scatter(s, wi, wo)
        vals = {mf.eval_conductor(mf.MicrofacetEvalRequest(wi, wo, s, max_length=2, rng_seed=k)).value for k in range(5)}
        deterministic &= len(vals) == 1
        errs.append(abs(vals.pop() - ref) / ref)
    # the analog walk still samples a depth at l_max = 2; check it in expectation
    c, mean, m2, *_ = slab.slab_batch(slab.ANALOG, N, 4, 0.0, 0.0, 1.0, 2, 1.0, 1.0, 0.0, 50.0,
                                      np.array([0.0]), np.array([0.0]), np.array([-1.0]))
    za = abs(mean[0] - 0.5 / (4 * math.pi)) / math.sqrt(m2[0] / (c - 1) / c)
    ok = deterministic and max(errs) <= 1e-12 and za <= 3.0
    report(4, ok, f"position-free deterministic={deterministic}, max rel. error {max(errs):.1e} over "
                  f"{len(errs)} closed forms (L=1 value {cases[0][1]:.9f}); analog l_max=2 mean z {za:.2f}")
    assert ok


def test_criterion_05_conductor_furnace(report):
    worst = 0.0
    lines = []
    for alpha in (0.2, 0.5, 1.0):
        for theta in (0.0, 45.0, 80.0):
            for method in ("analog", "position_free"):
                r = bench.furnace(alpha, theta, method, N, seed=7)
                worst = max(worst, abs(r.albedo - 1.0))
                lines.append(f"{alpha}/{theta:g}/{method}={r.albedo:.4f}")
    ok = worst <= 0.005
    report(5, ok, f"max |albedo - 1| = {worst:.4f} over 18 runs (need <= 0.005)")
    print("  " + ", ".join(lines))
    assert ok


def test_criterion_06_conductor_unbiased_and_wang_bias(report, conductor_grid):
    z = np.concatenate([combined_z(a.mean, a.stderr, p.mean, p.stderr) for _k, a, p in pairs(conductor_grid)])
    frac = float(np.mean(z <= 3.0))
    wang = [(k, a, w) for k, a, w in pairs(conductor_grid, b="wang") if k == ((1.0,), 80.0)]
    (_k, a, w), = wang
    zw = combined_z(a.mean, a.stderr, w.mean, w.stderr)
    ok = frac >= 0.99 and int(np.sum(zw > 3.0)) >= 1
    report(6, ok, f"position-free vs analog: {int(np.sum(z <= 3.0))}/{len(z)} bins within 3 stderr ({frac:.2%}), "
                  f"max z {z.max():.2f}; Wang at alpha=1, 80 deg: {int(np.sum(zw > 3.0))}/{BINS} bins beyond "
                  f"3 stderr, max z {zw.max():.1f}")
    assert ok


def test_criterion_07_conductor_efficiency(report, conductor_grid):
    wins = np.concatenate([p.ns_per_eval * p.variance < a.ns_per_eval * a.variance
                           for _k, a, p in pairs(conductor_grid)])
    frac = float(np.mean(wins))
    ok = frac >= 0.85
    report(7, ok, f"position-free inverse efficiency < analog in {int(wins.sum())}/{len(wins)} bins "
                  f"({frac:.1%}, need 85%)")
    assert ok


def test_criterion_08_reciprocity(report):
    worst = 0.0
    bad = 0
    for alpha in MF_ALPHA:
        for p in bench.reciprocity(alpha, pairs=20, samples=200_000, seed=8):
            worst = max(worst, p.z)
            bad += p.z > 3.0
    ok = bad == 0
    report(8, ok, f"{80 - bad}/80 pairs (20 per alpha in {MF_ALPHA}) within 3 combined stderr; max z {worst:.2f}")
    assert ok


def test_criterion_09_stability_budget(report, slab_grid, conductor_grid):
    n = 10_000_000
    grid = (np.array(SLAB_L), np.array(SLAB_G), np.radians(SLAB_THETA))
    capped, numeric, bad = slab.fallback_count(9, n, 64, 1.0, *grid, 1.0, 1.0)
    rate = (capped + numeric) / n
    c2, n2, b2 = slab.fallback_count(10, 1_000_000, 64, 1.0, *grid, 0.0, 1.0)
    # the shared sweeps abort on any non-finite sample, so reaching here means none occurred
    nonfinite = bad + b2 + sum(r.nonfinite for r in slab_grid + conductor_grid)
    ok = rate <= 0.01 and nonfinite == 0
    report(9, ok, f"slab fallback rate {rate:.3%} over {n:.0e} requests on the slab grid at albedo 1 "
                  f"(term cap {capped / n:.3%}, numerical {numeric / n:.3%}); uniform albedo: "
                  f"{(c2 + n2) / 1e6:.3%} (numerical {n2 / 1e6:.3%}); non-finite samples {nonfinite}")
    assert ok


def test_criterion_10_dielectric_hybrid(report):
    cfg = SweepConfig(scenario="dielectric", methods=("analog", "wang", "hybrid"), alpha=MF_ALPHA, ior=(1.8,),
                      theta_i=MF_THETA, bins=BINS, samples=N, seed=10, timing=False)
    res = bench.evaluate_cells(cfg)
    zr, zt = [], []
    for (_k, a, h), (_k2, w, h2) in zip(pairs(res, "analog", "hybrid"), pairs(res, "wang", "hybrid")):
        assert h is h2
        la, lh, lw = (_lobes(x) for x in (a, h, w))
        zr.append(abs(lh[0][0] - la[0][0]) / math.hypot(lh[1][0], la[1][0]))
        zt.append(abs(lh[0][1] - lw[0][1]) / math.hypot(lh[1][1], lw[1][1]))
    ok = len(zr) == 8 and max(zr) <= 3.0 and max(zt) <= 3.0
    report(10, ok, f"reflection lobe vs analog: max z {max(zr):.2f}; refraction lobe vs Wang: max z {max(zt):.2f} "
                   f"(8 grid points, lobe means over {BINS // 2} bins each)")
    assert ok


def _lobes(r):
    c, mean, m2 = r.extra["lobes"]
    return mean, np.sqrt(m2 / (c - 1) / c)


def test_criterion_11_reproducibility(report):
    base = dict(samples=bench.BLOCK * 2 + 123, bins=8, seed=11)
    cfgs = [
        SweepConfig(scenario="slab", thickness=(0.5, 4.0), g=(-0.5, 0.9), theta_i=(0.0, 80.0), **base),
        SweepConfig(scenario="conductor", methods=("analog", "position_free", "wang"), alpha=(0.2, 1.0), **base),
        SweepConfig(scenario="dielectric", methods=("analog", "wang", "hybrid"), alpha=(0.4,), ior=(1.8,), **base),
    ]
    same = True
    for cfg in cfgs:
        texts = []
        for threads, timing in ((1, True), (1, False), (4, False)):
            rows = bench.run_sweep(cfg.with_overrides({"threads": threads, "timing": timing}))
            texts.append("\n".join(",".join(r[c] for c in STAT_COLUMNS) for r in rows))
        same &= len(set(texts)) == 1
    report(11, same, "statistical columns byte-identical across repeated runs and 1 vs 4 threads, 3 scenarios")
    assert same
