"""Slab BSDF estimators: analog depth tracking vs. position-free height densities.

Both estimators return single-sample, unbiased estimates of the directional
exit density (per steradian of ``omega_o``) for a photon entering the top of
an index-matched homogeneous slab.  Paths are truncated at ``max_length``
propagation segments, identically for both methods.

All heavy lifting happens in numba kernels that draw from numba's internal
generator, seeded explicitly per evaluation or per sample block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .height import BOUNCE_CAP, exit_factor, hd_add_bounce, hd_sample_depth, mass_checked, mass_factor, prob_ok
from .media import (
    Direction,
    SlabMedium,
    free_flight_k,
    hg_eval_k,
    hg_sample_k,
    sigma_1d_k,
)
from .seeding import seed32

ANALOG = 0
POSITION_FREE = 1

DEFAULT_MAX_LENGTH = 64
RR_START = 32
RR_MIN = 0.05
RR_MAX = 0.95
PF_RR_START = 2

FB_NONE = 0
FB_CAP = 1  # term cap reached
FB_NUMERIC = 2  # degenerate rates, precision guard or invalid probability
PF_RR_MAX = 1.0


@dataclass(frozen=True)
class SlabEvalRequest:
    omega_i: Direction
    omega_o: Direction
    medium: SlabMedium
    max_length: int = DEFAULT_MAX_LENGTH
    rng_seed: int = 0

    def __post_init__(self):
        if self.omega_i[2] <= 0.0:
            raise ValueError("omega_i must point into the slab (z > 0)")
        if self.omega_o[2] == 0.0:
            raise ValueError("omega_o must have a nonzero z component")
        if not self.medium.extent.is_finite:
            raise ValueError("slab estimators need a finite thickness")
        if self.max_length < 2:
            raise ValueError("max_length must be at least 2")


@dataclass(frozen=True)
class SlabEvalResult:
    value: float
    bounces_used: int
    fell_back: bool
    survived_rr: bool


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _nee_analog(vals, T, albedo, g, wx, wy, wz, z, L, ox, oy, oz, so, oup):
    w = T * albedo
    if w == 0.0:
        return
    for b in range(vals.shape[0]):
        c = wx * ox[b] + wy * oy[b] + wz * oz[b]
        d = z if oup[b] else L - z
        vals[b] += w * hg_eval_k(g, c) * math.exp(-so[b] * d)


@numba.njit(cache=True, inline="always")
def _roulette(T, i, albedo):
    """Analog survival probability after vertex i (1 when roulette is off)."""
    if albedo < 1.0 or i < RR_START:
        return 1.0
    return min(RR_MAX, max(RR_MIN, T))


@numba.njit(cache=True, inline="always")
def _roulette_pf(T, mass, i):
    """Position-free survival: keep the expected weight mass * T near one."""
    if i < PF_RR_START:
        return 1.0
    return min(PF_RR_MAX, max(RR_MIN, mass * T))


@numba.njit(cache=True)
def _analog_from_vertex(vals, z, wx, wy, wz, T, i, l_max, sigma, albedo, g, L, ox, oy, oz, so, oup):
    """Continue an analog walk from vertex ``i`` (photon inside at depth z).

    Returns (last vertex, killed by roulette).
    """
    while True:
        _nee_analog(vals, T, albedo, g, wx, wy, wz, z, L, ox, oy, oz, so, oup)
        if i >= l_max - 1:
            return i, False
        T *= albedo
        if T == 0.0:
            return i, False
        q = _roulette(T, i, albedo)
        if q < 1.0:
            if np.random.random() >= q:
                return i, True
            T /= q
        wx, wy, wz = hg_sample_k(g, wx, wy, wz, np.random.random(), np.random.random())
        dz = free_flight_k(sigma_1d_k(sigma, wz), np.random.random())
        z = z + dz if wz > 0.0 else z - dz
        if z < 0.0 or z > L:
            return i, False
        i += 1


@numba.njit(cache=True)
def analog_path(vals, wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz, so, oup):
    z = free_flight_k(sigma_1d_k(sigma, wiz), np.random.random())
    if z > L:
        return 0, False
    return _analog_from_vertex(vals, z, wix, wiy, wiz, 1.0, 1, l_max, sigma, albedo, g, L, ox, oy, oz, so, oup)


@numba.njit(cache=True)
def _replay_depth(seg_sigma, seg_down, k, L):
    """Sample depths along the first ``k`` recorded segments; -1 if it escaped."""
    z = 0.0
    for s in range(k):
        dz = free_flight_k(seg_sigma[s], np.random.random())
        z = z + dz if seg_down[s] else z - dz
        if z < 0.0 or z > L:
            return -1.0
    return z


@numba.njit(cache=True, inline="always")
def _cache_term(F, Mf, j, rate, eterm, L, so, eo, oup):
    Mf[j] = mass_factor(rate[j], eterm[j], L)
    for b in range(so.shape[0]):
        F[j, b] = exit_factor(oup[b], so[b], eo[b], rate[j], eterm[j], L)


@numba.njit(cache=True)
def position_free_path(
    vals, tmp, coef, rate, eterm, F, Mf, seg_sigma, seg_down,
    wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz, so, eo, oup,
):
    """One position-free sample; returns (last vertex, fallback reason, rr_killed).

    Per-term exit and mass factors are cached when a term is created (rates
    never change afterwards), so each vertex costs only dot products.

    Fallbacks keep every closed-form contribution already made:

    * the next bounce cannot be represented (term cap, degenerate rates):
      the depth at the current vertex is drawn from the still valid density
      by inversion, weighted by its mass, and the walk goes on analogically;
    * a precision guard trips, or an exit probability or mass fails
      validation: depths are re-sampled along the segments already drawn
      (exact in distribution whatever the state of the density) and the
      walk resumes analogically.
    """
    B = vals.shape[0]
    wx, wy, wz = wix, wiy, wiz
    s1 = sigma_1d_k(sigma, wz)
    coef[0] = s1
    rate[0] = s1
    eterm[0] = math.exp(-s1 * L)
    n = 1
    _cache_term(F, Mf, 0, rate, eterm, L, so, eo, oup)
    seg_sigma[0] = s1
    seg_down[0] = True
    T = 1.0
    i = 1
    while True:
        mass, ok = mass_checked(coef, Mf, n)
        if ok:
            w = T * albedo
            for b in range(B):
                tmp[b] = 0.0
            if w != 0.0:
                for b in range(B):
                    p = 0.0
                    for j in range(n):
                        p += coef[j] * F[j, b]
                    if not prob_ok(p):
                        ok = False
                        break
                    c = wx * ox[b] + wy * oy[b] + wz * oz[b]
                    tmp[b] = w * hg_eval_k(g, c) * p
        if not ok:
            z = _replay_depth(seg_sigma, seg_down, i, L)
            if z < 0.0:
                return i, FB_NUMERIC, False
            last, killed = _analog_from_vertex(vals, z, wx, wy, wz, T, i, l_max, sigma, albedo, g, L, ox, oy, oz, so, oup)
            return last, FB_NUMERIC, killed
        for b in range(B):
            vals[b] += tmp[b]
        if i >= l_max - 1:
            return i, FB_NONE, False
        T *= albedo
        if T == 0.0:
            return i, FB_NONE, False
        q = _roulette_pf(T, mass, i)
        if q < 1.0:
            if np.random.random() >= q:
                return i, FB_NONE, True
            T /= q
        wx, wy, wz = hg_sample_k(g, wx, wy, wz, np.random.random(), np.random.random())
        s = sigma_1d_k(sigma, wz)
        seg_sigma[i] = s
        seg_down[i] = wz > 0.0
        n_prev = n
        why = FB_CAP
        ok = n < BOUNCE_CAP
        if ok:
            why = FB_NUMERIC
            n, ok = hd_add_bounce(coef, rate, eterm, n, wz > 0.0, s, L)
        if ok:
            _cache_term(F, Mf, n - 1, rate, eterm, L, so, eo, oup)
        else:
            if n == n_prev:
                # arrays untouched: draw the vertex depth from h_i itself
                if not mass > 0.0:
                    return i, why, False
                z = hd_sample_depth(coef, rate, n, mass, np.random.random(), L)
                T *= mass
            else:
                z = _replay_depth(seg_sigma, seg_down, i, L)
                if z < 0.0:
                    return i, why, False
            dz = free_flight_k(s, np.random.random())
            z = z + dz if wz > 0.0 else z - dz
            if z < 0.0 or z > L:
                return i, why, False
            last, killed = _analog_from_vertex(vals, z, wx, wy, wz, T, i + 1, l_max, sigma, albedo, g, L, ox, oy, oz, so, oup)
            return last, why, killed
        i += 1


@numba.njit(cache=True)
def _scratch(B):
    size = BOUNCE_CAP + 2
    return (
        np.zeros(size),
        np.zeros(size),
        np.zeros(size),
        np.zeros((size, B)),
        np.zeros(size),
        np.zeros(size),
        np.zeros(size, dtype=np.bool_),
    )


@numba.njit(cache=True)
def _exit_setup(sigma, L, oz):
    B = oz.shape[0]
    so = np.empty(B)
    eo = np.empty(B)
    oup = np.empty(B, dtype=np.bool_)
    for b in range(B):
        so[b] = sigma_1d_k(sigma, oz[b])
        eo[b] = math.exp(-so[b] * L)
        oup[b] = oz[b] < 0.0
    return so, eo, oup


@numba.njit(cache=True)
def _one(method, vals, tmp, scratch, wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz, so, eo, oup):
    vals[:] = 0.0
    if method == ANALOG:
        k, killed = analog_path(vals, wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz, so, oup)
        return k, FB_NONE, killed
    coef, rate, eterm, F, Mf, seg_sigma, seg_down = scratch
    return position_free_path(
        vals, tmp, coef, rate, eterm, F, Mf, seg_sigma, seg_down,
        wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz, so, eo, oup,
    )


@numba.njit(cache=True, nogil=True)
def slab_batch(method, n_samples, seed, wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz):
    """Run ``n_samples`` independent estimates against every outgoing direction.

    All outgoing directions share each sampled path (a walk never looks at
    omega_o).  Returns (count, mean, m2, fallbacks, nonfinite, vertices).
    """
    np.random.seed(seed)
    B = ox.shape[0]
    so, eo, oup = _exit_setup(sigma, L, oz)
    vals = np.zeros(B)
    tmp = np.zeros(B)
    mean = np.zeros(B)
    m2 = np.zeros(B)
    scratch = _scratch(B)
    fallbacks = 0
    nonfinite = 0
    vertices = 0
    count = 0
    for _ in range(n_samples):
        k, fb, _k = _one(method, vals, tmp, scratch, wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz, so, eo, oup)
        fallbacks += fb != FB_NONE
        vertices += k
        bad = False
        for b in range(B):
            if not math.isfinite(vals[b]):
                bad = True
        if bad:
            nonfinite += 1
            continue
        count += 1
        for b in range(B):
            d = vals[b] - mean[b]
            mean[b] += d / count
            m2[b] += d * (vals[b] - mean[b])
    return count, mean, m2, fallbacks, nonfinite, vertices


@numba.njit(cache=True)
def slab_single(method, seed, wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz):
    np.random.seed(seed)
    so, eo, oup = _exit_setup(sigma, L, oz)
    vals = np.zeros(1)
    tmp = np.zeros(1)
    k, fb, killed = _one(method, vals, tmp, _scratch(1), wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz, so, eo, oup)
    return vals[0], k, fb, killed


@numba.njit(cache=True)
def slab_timing(method, n_evals, seed, wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz):
    """Back-to-back single-direction evaluations, for timing; returns a checksum."""
    np.random.seed(seed)
    so, eo, oup = _exit_setup(sigma, L, oz)
    vals = np.zeros(1)
    tmp = np.zeros(1)
    scratch = _scratch(1)
    acc = 0.0
    for _ in range(n_evals):
        _one(method, vals, tmp, scratch, wix, wiy, wiz, l_max, sigma, albedo, g, L, ox, oy, oz, so, eo, oup)
        acc += vals[0]
    return acc


@numba.njit(cache=True)
def fallback_count(seed, n_requests, l_max, sigma, thicknesses, gs, thetas_i, albedo_lo, albedo_hi):
    """Position-free evaluations over random requests.

    Each request draws L, g and theta_i from the given lists, albedo
    uniformly in [albedo_lo, albedo_hi] and theta_o uniformly in the
    reflection half of the incidence plane.  Returns counts of
    (term-cap fallbacks, numerical fallbacks, non-finite or negative values).
    """
    np.random.seed(seed)
    scratch = _scratch(1)
    vals = np.zeros(1)
    tmp = np.zeros(1)
    ox = np.zeros(1)
    oy = np.zeros(1)
    oz = np.zeros(1)
    capped = 0
    numeric = 0
    bad = 0
    for _ in range(n_requests):
        L = thicknesses[np.random.randint(0, thicknesses.shape[0])]
        g = gs[np.random.randint(0, gs.shape[0])]
        ti = math.radians(thetas_i[np.random.randint(0, thetas_i.shape[0])])
        albedo = albedo_lo + (albedo_hi - albedo_lo) * np.random.random()
        to = math.radians(-90.0 + 180.0 * np.random.random())
        ox[0] = math.sin(to)
        oz[0] = -math.cos(to)
        so, eo, oup = _exit_setup(sigma, L, oz)
        _k, why, _r = _one(
            POSITION_FREE, vals, tmp, scratch, math.sin(ti), 0.0, math.cos(ti),
            l_max, sigma, albedo, g, L, ox, oy, oz, so, eo, oup,
        )
        capped += why == FB_CAP
        numeric += why == FB_NUMERIC
        if not (math.isfinite(vals[0]) and vals[0] >= 0.0):
            bad += 1
    return capped, numeric, bad


# ---------------------------------------------------------------------------
# Python API


def _run(method: int, req: SlabEvalRequest) -> SlabEvalResult:
    m = req.medium
    wi, wo = req.omega_i, req.omega_o
    v, k, fb, killed = slab_single(
        method, seed32(req.rng_seed), wi[0], wi[1], wi[2], req.max_length, m.sigma, m.albedo,
        m.phase.g, m.extent.length, np.array([wo[0]]), np.array([wo[1]]), np.array([wo[2]]),
    )
    return SlabEvalResult(float(v), int(k), fb != FB_NONE, not bool(killed))


def eval_analog(req: SlabEvalRequest) -> SlabEvalResult:
    """Unbiased single-sample estimate by explicit depth tracking."""
    return _run(ANALOG, req)


def eval_position_free(req: SlabEvalRequest) -> SlabEvalResult:
    """Unbiased single-sample estimate with depths integrated in closed form."""
    return _run(POSITION_FREE, req)


def single_scatter(medium: SlabMedium, omega_i, omega_o) -> float:
    """Closed-form single-scattering value (the ``max_length = 2`` estimand)."""
    L = medium.extent.length
    si = medium.sigma / abs(omega_i[2])
    so = medium.sigma / abs(omega_o[2])
    c = sum(a * b for a, b in zip(omega_i, omega_o))
    rho = medium.albedo * hg_eval_k(medium.phase.g, c)
    if omega_o[2] < 0:
        p = si * (1.0 - math.exp(-(si + so) * L)) / (si + so)
    elif abs(so - si) < 1e-12 * si:
        p = si * L * math.exp(-si * L)
    else:
        p = si * (math.exp(-si * L) - math.exp(-so * L)) / (so - si)
    return rho * p
