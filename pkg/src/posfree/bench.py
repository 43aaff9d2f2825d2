"""Parameter sweeps, timing probes and verification suites.

Sweeps are split into fixed-size sample blocks.  Every block draws from its
own stream, seeded by ``derive(master_seed, grid index, theta_i index,
method id, block index)``, and blocks are merged in index order, so the
statistics do not depend on how many threads ran them.
"""

from __future__ import annotations

import csv
import io
import math
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import microfacet as mf
from . import slab
from .seeding import derive, seed32
from .stats import EstimateAccumulator

CSV_HEADER = (
    "scenario", "method", "param_L", "param_sigma", "param_albedo", "param_g", "param_alpha", "param_ior",
    "theta_i_deg", "theta_o_deg", "mean", "variance", "stderr", "n_samples", "ns_per_eval", "inv_efficiency",
)
STAT_COLUMNS = ("mean", "variance", "stderr", "n_samples")

BLOCK = 1 << 14

SCENARIOS = ("slab", "conductor", "dielectric")
METHOD_NAMES = {"analog": 0, "position_free": 1, "wang": 2, "hybrid": 3}
VALID_METHODS = {
    "slab": ("analog", "position_free"),
    "conductor": ("analog", "position_free", "wang"),
    "dielectric": ("analog", "wang", "hybrid"),
}


class ConfigError(ValueError):
    pass


class NonFiniteSampleError(RuntimeError):
    def __init__(self, row: int, count: int):
        super().__init__(f"{count} non-finite sample(s) in the cell starting at data row {row}")
        self.row = row
        self.count = count


def _floats(v) -> tuple:
    if isinstance(v, str):
        v = [x for x in v.replace(",", " ").split()]
    if np.ndim(v) == 0:
        v = [v]
    return tuple(float(x) for x in v)


def parse_fresnel(spec: str) -> mf.Fresnel:
    """``perfect``, ``schlick:F0`` or ``conductor:ETA:K``."""
    parts = spec.strip().lower().split(":")
    try:
        if parts[0] == "perfect" and len(parts) == 1:
            return mf.Perfect()
        if parts[0] == "schlick" and len(parts) == 2:
            return mf.SchlickF0(float(parts[1]))
        if parts[0] == "conductor" and len(parts) == 3:
            return mf.ConductorIor(float(parts[1]), float(parts[2]))
    except ValueError as e:
        raise ConfigError(f"bad fresnel spec {spec!r}: {e}") from None
    raise ConfigError(f"bad fresnel spec {spec!r}")


@dataclass(frozen=True)
class SweepConfig:
    scenario: str = "slab"
    methods: tuple = ("analog", "position_free")
    thickness: tuple = (1.0,)
    sigma: tuple = (1.0,)
    albedo: tuple = (1.0,)
    g: tuple = (0.0,)
    alpha: tuple = (0.5,)
    fresnel: str = "perfect"
    ior: tuple = (1.5,)
    theta_i: tuple = (45.0,)
    bins: int = 64
    samples: int = 10000
    seed: int = 0
    out: str = "-"
    max_length: int = 64
    threads: int = 1
    timing: bool = True
    timing_reps: int = 2000

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in self.methods:
            if m not in VALID_METHODS[self.scenario]:
                raise ConfigError(f"method {m!r} is not valid for {self.scenario}; use {VALID_METHODS[self.scenario]}")
        if self.samples < 1 or self.bins < 1:
            raise ConfigError("samples and bins must be at least 1")
        if self.max_length < 2:
            raise ConfigError("max_length must be at least 2")
        if not self.grid():
            raise ConfigError("empty parameter grid")
        if not self.theta_i:
            raise ConfigError("theta_i list is empty")
        parse_fresnel(self.fresnel)

    def grid(self) -> list:
        """Grid points as dicts of CSV parameter columns."""
        if self.scenario == "slab":
            return [
                {"param_L": L, "param_sigma": s, "param_albedo": a, "param_g": g}
                for L in self.thickness for s in self.sigma for a in self.albedo for g in self.g
            ]
        if self.scenario == "conductor":
            return [{"param_alpha": a} for a in self.alpha]
        return [{"param_alpha": a, "param_ior": n} for a in self.alpha for n in self.ior]

    def theta_o(self) -> np.ndarray:
        """Bin centres in degrees; the dielectric also covers the lower hemisphere."""
        span = 360.0 if self.scenario == "dielectric" else 180.0
        return -90.0 + (np.arange(self.bins) + 0.5) * span / self.bins

    # -- key = value files ---------------------------------------------------

    @classmethod
    def from_text(cls, text: str, base: "SweepConfig | None" = None) -> "SweepConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = v
        return (base or cls()).with_overrides(values)

    @classmethod
    def from_file(cls, path: str) -> "SweepConfig":
        try:
            with open(path, encoding="utf-8") as f:
                return cls.from_text(f.read())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None

    def with_overrides(self, values: dict) -> "SweepConfig":
        names = {f.name: f for f in fields(self)}
        aliases = {"L": "thickness", "method": "methods"}
        out = {}
        for k, v in values.items():
            if v is None:
                continue
            k = aliases.get(k, k).replace("-", "_")
            if k not in names:
                raise ConfigError(f"unknown config key {k!r}")
            default = getattr(self, k)
            try:
                if k == "methods":
                    v = tuple(x for x in (v.replace(",", " ").split() if isinstance(v, str) else v))
                elif isinstance(default, tuple):
                    v = _floats(v)
                elif isinstance(default, bool):
                    v = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    v = int(v)
                else:
                    v = str(v)
            except ValueError as e:
                raise ConfigError(f"bad value for {k}: {e}") from None
            out[k] = v
        return replace(self, **out)


# ---------------------------------------------------------------------------
# cell evaluation


@dataclass
class CellResult:
    params: dict
    theta_i: float
    method: str
    theta_o: np.ndarray
    count: int
    mean: np.ndarray
    m2: np.ndarray
    fallbacks: int = 0
    nonfinite: int = 0
    ns_per_eval: float = math.nan
    extra: dict = field(default_factory=dict)

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / (self.count - 1) if self.count > 1 else np.zeros_like(self.mean)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / self.count) if self.count > 1 else np.full_like(self.mean, math.inf)


def _merge(parts):
    """Chan merge of (count, mean, m2) block results, in the given order."""
    n = 0
    mean = None
    m2 = None
    for c, mu, s in parts:
        if c == 0:
            continue
        if mean is None:
            n, mean, m2 = c, np.array(mu, dtype=float), np.array(s, dtype=float)
            continue
        tot = n + c
        d = mu - mean
        mean = mean + d * (c / tot)
        m2 = m2 + s + d * d * (n * c / tot)
        n = tot
    return n, mean, m2


def _slab_dirs(theta_i, theta_o):
    t = np.radians(theta_o)
    ti = math.radians(theta_i)
    return (math.sin(ti), 0.0, math.cos(ti)), (np.sin(t), np.zeros_like(t), -np.cos(t))


def _surface_dirs(theta_i, theta_o):
    t = np.radians(theta_o)
    ti = math.radians(theta_i)
    return (math.sin(ti), 0.0, math.cos(ti)), (-np.sin(t), np.zeros_like(t), np.cos(t))


def _lobe_groups(theta_o):
    return (np.abs(np.asarray(theta_o)) > 90.0).astype(np.int64)


class _Cell:
    """Binds one (grid point, theta_i, method) to its batch kernel."""

    def __init__(self, cfg: SweepConfig, params: dict, theta_i: float, method: str):
        self.cfg = cfg
        self.params = params
        self.theta_i = theta_i
        self.method = method
        self.mid = METHOD_NAMES[method]
        self.theta_o = cfg.theta_o()

    def run_block(self, n, seed):
        cfg, p = self.cfg, self.params
        if cfg.scenario == "slab":
            wi, (ox, oy, oz) = _slab_dirs(self.theta_i, self.theta_o)
            c, mean, m2, fb, nf, _v = slab.slab_batch(
                self.mid, n, seed32(seed), *wi, cfg.max_length, p["param_sigma"], p["param_albedo"],
                p["param_g"], p["param_L"], ox, oy, oz,
            )
            return c, mean, m2, fb, nf, None
        wi, (ox, oy, oz) = _surface_dirs(self.theta_i, self.theta_o)
        if cfg.scenario == "conductor":
            ft, p0, p1 = parse_fresnel(cfg.fresnel).params()
            up = oz > 0.0
            mean = np.zeros(len(oz))
            m2 = np.zeros(len(oz))
            c, mu, s, fb, nf, _v, _w = mf.conductor_batch(
                self.mid, n, seed32(seed), *wi, ox[up], oy[up], oz[up], p["param_alpha"], ft, p0, p1, cfg.max_length, True,
            )
            mean[up] = mu
            m2[up] = s
            return c, mean, m2, fb, nf, None
        groups = _lobe_groups(self.theta_o)
        c, mean, m2, fb, nf, _v, _r, gm, gm2 = mf.dielectric_batch(
            self.mid, n, seed32(seed), *wi, ox, oy, oz, p["param_alpha"], p["param_ior"], cfg.max_length, groups,
        )
        return c, mean, m2, fb, nf, (c, gm, gm2)

    def timing_run(self, bin_index: int) -> Callable[[int], float]:
        """A callable running ``k`` single-direction evaluations."""
        cfg, p = self.cfg, self.params
        to = self.theta_o[bin_index : bin_index + 1]
        if cfg.scenario == "slab":
            wi, (ox, oy, oz) = _slab_dirs(self.theta_i, to)
            return lambda k: slab.slab_timing(
                self.mid, k, 1, *wi, cfg.max_length, p["param_sigma"], p["param_albedo"], p["param_g"], p["param_L"], ox, oy, oz,
            )
        wi, (ox, oy, oz) = _surface_dirs(self.theta_i, to)
        if cfg.scenario == "conductor":
            ft, p0, p1 = parse_fresnel(cfg.fresnel).params()
            return lambda k: mf.conductor_timing(
                self.mid, k, 1, *wi, ox[0], oy[0], max(oz[0], mf.EPS_Z), p["param_alpha"], ft, p0, p1, cfg.max_length, True,
            )
        groups = np.zeros(1, dtype=np.int64)
        return lambda k: mf.dielectric_batch(
            self.mid, k, 1, *wi, ox, oy, oz, p["param_alpha"], p["param_ior"], cfg.max_length, groups,
        )[0]


def timing_probe(run: Callable[[int], object], warmup: int = 200, reps: int = 2000, batches: int = 7) -> float:
    """Median-of-batches wall time per evaluation, in nanoseconds.

    ``run(k)`` must perform ``k`` evaluations.  The batch size grows until
    a batch lasts at least 100 timer ticks (timer error below 1%).
    """
    if reps < 100:
        raise ValueError("reps must be at least 100")
    run(warmup)
    tick = max(time.get_clock_info("perf_counter").resolution, 1e-9)
    k = reps
    while True:
        t0 = time.perf_counter()
        run(k)
        dt = time.perf_counter() - t0
        if dt >= 100.0 * tick:
            break
        k *= 2
    per = [dt / k]
    for _ in range(batches - 1):
        t0 = time.perf_counter()
        run(k)
        per.append((time.perf_counter() - t0) / k)
    return statistics.median(per) * 1e9


def _cell_timing(cell: _Cell) -> float:
    """Per-evaluation time averaged over a few representative bins."""
    nb = len(cell.theta_o)
    picks = sorted({int(round(x)) for x in np.linspace(0, nb - 1, min(4, nb))})
    if cell.cfg.scenario == "conductor":
        picks = [b for b in picks if abs(cell.theta_o[b]) < 89.0] or [nb // 2]
    return float(np.mean([timing_probe(cell.timing_run(b), reps=cell.cfg.timing_reps) for b in picks]))


def evaluate_cells(cfg: SweepConfig) -> list:
    """Run every (grid point, theta_i, method) cell of a sweep."""
    cells = []
    for gi, params in enumerate(cfg.grid()):
        for ti, theta_i in enumerate(cfg.theta_i):
            for m in cfg.methods:
                cells.append(((gi, ti, METHOD_NAMES[m]), _Cell(cfg, params, theta_i, m)))
    nblocks = -(-cfg.samples // BLOCK)
    units = []
    for ci, (key, cell) in enumerate(cells):
        for b in range(nblocks):
            n = min(BLOCK, cfg.samples - b * BLOCK)
            units.append((ci, cell, n, derive(cfg.seed, *key, b)))

    def work(u):
        _ci, cell, n, seed = u
        return cell.run_block(n, seed)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            outs = list(ex.map(work, units))
    else:
        outs = [work(u) for u in units]

    results = []
    row = 0
    for ci, (key, cell) in enumerate(cells):
        parts = [o for u, o in zip(units, outs) if u[0] == ci]
        n, mean, m2 = _merge([(o[0], o[1], o[2]) for o in parts])
        nonfinite = sum(o[4] for o in parts)
        if nonfinite:
            raise NonFiniteSampleError(row, nonfinite)
        res = CellResult(cell.params, cell.theta_i, cell.method, cell.theta_o, n, mean, m2,
                         fallbacks=sum(o[3] for o in parts))
        if parts[0][5] is not None:
            res.extra["lobes"] = _merge([o[5] for o in parts])
        results.append((cell, res))
        row += len(cell.theta_o)
    if cfg.timing:
        for cell, res in results:
            res.ns_per_eval = _cell_timing(cell)
    return [r for _c, r in results]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def cell_rows(cfg: SweepConfig, res: CellResult) -> Iterable[dict]:
    var = res.variance
    se = res.stderr
    for b, to in enumerate(res.theta_o):
        row = dict.fromkeys(CSV_HEADER, "")
        row["scenario"] = cfg.scenario
        row["method"] = res.method
        for k, v in res.params.items():
            row[k] = _fmt(v)
        row["theta_i_deg"] = _fmt(res.theta_i)
        row["theta_o_deg"] = _fmt(to)
        row["mean"] = _fmt(res.mean[b])
        row["variance"] = _fmt(var[b])
        row["stderr"] = _fmt(se[b])
        row["n_samples"] = _fmt(res.count)
        if cfg.timing:
            row["ns_per_eval"] = _fmt(res.ns_per_eval)
            row["inv_efficiency"] = _fmt(res.ns_per_eval * var[b])
        yield row


def run_sweep(cfg: SweepConfig, results: Sequence[CellResult] | None = None) -> list:
    """CSV rows (dicts keyed by ``CSV_HEADER``) in deterministic order."""
    if results is None:
        results = evaluate_cells(cfg)
    return [row for res in results for row in cell_rows(cfg, res)]


def write_csv(rows: Sequence[dict], path: str = "-") -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    text = buf.getvalue()
    if path and path != "-":
        try:
            d = os.path.dirname(os.path.abspath(path))
            os.makedirs(d, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        except OSError as e:
            raise OSError(e.errno, f"cannot write CSV to {path}: {e.strerror}") from None
    return text


# ---------------------------------------------------------------------------
# furnace and reciprocity


@dataclass
class FurnaceResult:
    alpha: float
    theta_i: float
    method: str
    albedo: float
    stderr: float
    count: int
    fallbacks: int


def furnace(alpha: float, theta_i: float, method: str = "position_free", samples: int = 1_000_000,
            seed: int = 0, fresnel: str = "perfect", max_length: int = 64, mis: bool = True) -> FurnaceResult:
    """Directional albedo of a conductor by cosine-weighted exit sampling."""
    ft, p0, p1 = parse_fresnel(fresnel).params()
    wi = mf.incident(theta_i)
    wz = max(wi.z, mf.EPS_Z)
    acc = EstimateAccumulator()
    fb = 0
    mid = METHOD_NAMES[method]
    for b in range(-(-samples // BLOCK)):
        n = min(BLOCK, samples - b * BLOCK)
        c, mean, m2, f = mf.conductor_furnace(
            mid, n, seed32(derive(seed, round(alpha * 1e6), round(theta_i * 1e6), mid, b)),
            wi.x, wi.y, wz, alpha, ft, p0, p1, max_length, mis,
        )
        acc.merge(EstimateAccumulator(c, mean, m2))
        fb += f
    return FurnaceResult(alpha, theta_i, method, acc.mean, acc.stderr, acc.count, fb)


@dataclass
class ReciprocityPair:
    omega_a: tuple
    omega_b: tuple
    f_ab: float
    se_ab: float
    f_ba: float
    se_ba: float

    @property
    def z(self) -> float:
        se = math.hypot(self.se_ab, self.se_ba)
        return abs(self.f_ab - self.f_ba) / se if se > 0 else (0.0 if self.f_ab == self.f_ba else math.inf)


def _brdf(alpha, a, b, method, samples, seed, ft, p0, p1, max_length):
    """Mean and stderr of f(a, b) (the cosine of ``b`` divided out)."""
    mid = METHOD_NAMES[method]
    parts = []
    for k in range(-(-samples // BLOCK)):
        n = min(BLOCK, samples - k * BLOCK)
        c, mean, m2, *_ = mf.conductor_batch(
            mid, n, seed32(derive(seed, k)), *a, np.array([b[0]]), np.array([b[1]]), np.array([b[2]]),
            alpha, ft, p0, p1, max_length, True,
        )
        parts.append((c, mean, m2))
    n, mean, m2 = _merge(parts)
    se = math.sqrt(m2[0] / (n - 1) / n)
    return mean[0] / b[2], se / b[2]


def random_pairs(n: int, seed: int, min_cos: float = 0.05):
    """Random direction pairs in the upper hemisphere (uniform in solid angle)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        v = rng.normal(size=(2, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        v[:, 2] = np.abs(v[:, 2])
        if v[:, 2].min() >= min_cos:
            out.append((tuple(v[0]), tuple(v[1])))
    return out


def reciprocity(alpha: float, pairs: int = 20, samples: int = 200_000, seed: int = 0, method: str = "position_free",
                fresnel: str = "perfect", max_length: int = 64) -> list:
    ft, p0, p1 = parse_fresnel(fresnel).params()
    out = []
    for k, (a, b) in enumerate(random_pairs(pairs, derive(seed, round(alpha * 1e6)))):
        f_ab, s_ab = _brdf(alpha, a, b, method, samples, derive(seed, k, 0), ft, p0, p1, max_length)
        f_ba, s_ba = _brdf(alpha, b, a, method, samples, derive(seed, k, 1), ft, p0, p1, max_length)
        out.append(ReciprocityPair(a, b, f_ab, s_ab, f_ba, s_ba))
    return out
