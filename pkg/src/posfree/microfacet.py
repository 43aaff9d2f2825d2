"""Multiple scattering on Smith GGX microsurfaces as transport in a half-space.

The surface frame has the macro normal along ``+z``.  BRDF arguments follow
the usual convention (``omega_i`` and ``omega_o`` both point away from the
surface); walk directions ``d`` are *travel* directions.  A ray travelling
down (``d.z < 0``) sees extinction ``1 + Lambda``, a ray travelling up sees
``Lambda``, where ``Lambda`` is evaluated from ``|d.z|``.

Reported values are exit densities per steradian of ``omega_o``, i.e.
``f(omega_i, omega_o) * cos(theta_o)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numba
import numpy as np

from .height import BOUNCE_CAP, CANCELLATION_GUARD, hd_add_bounce, prob_ok
from .media import EPS_Z, Direction
from .seeding import seed32

INF = math.inf
LN2 = math.log(2.0)
MAX_RESAMPLE = 8
DEFAULT_MAX_LENGTH = 64

RR_START = 2
RR_MIN = 0.05
RR_MAX = 0.95

# method ids shared with the kernels
ANALOG = 0
POSITION_FREE = 1
WANG = 2
HYBRID = 3

# Fresnel ids
F_PERFECT = 0
F_SCHLICK = 1
F_CONDUCTOR = 2


class Method(enum.IntEnum):
    ANALOG = ANALOG
    POSITION_FREE = POSITION_FREE
    WANG = WANG
    DIELECTRIC_HYBRID = HYBRID


class Strategy(enum.IntEnum):
    FORWARD = 0
    BACKWARD = 1


# ---------------------------------------------------------------------------
# Fresnel models


@dataclass(frozen=True)
class Perfect:
    def params(self):
        return F_PERFECT, 0.0, 0.0


@dataclass(frozen=True)
class SchlickF0:
    f0: float

    def __post_init__(self):
        if not 0.0 <= self.f0 <= 1.0:
            raise ValueError(f"f0 must lie in [0, 1], got {self.f0}")

    def params(self):
        return F_SCHLICK, float(self.f0), 0.0


@dataclass(frozen=True)
class ConductorIor:
    """Complex index ``eta + i k`` for one wavelength channel."""

    eta: float
    k: float

    def __post_init__(self):
        if not (self.eta > 0.0 and self.k >= 0.0):
            raise ValueError("conductor needs eta > 0 and k >= 0")

    def params(self):
        return F_CONDUCTOR, float(self.eta), float(self.k)


Fresnel = Union[Perfect, SchlickF0, ConductorIor]


@dataclass(frozen=True)
class Conductor:
    fresnel: Fresnel = field(default_factory=Perfect)


@dataclass(frozen=True)
class Dielectric:
    ior: float

    def __post_init__(self):
        if not (self.ior > 0.0 and self.ior != 1.0 and math.isfinite(self.ior)):
            raise ValueError(f"relative ior must be positive and differ from 1, got {self.ior}")


@dataclass(frozen=True)
class GgxSurface:
    alpha: float
    mode: Union[Conductor, Dielectric] = field(default_factory=Conductor)

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0.0):
            raise ValueError(f"roughness must be finite and positive, got {self.alpha}")

    @property
    def is_dielectric(self) -> bool:
        return isinstance(self.mode, Dielectric)


@dataclass(frozen=True)
class MicrofacetEvalResult:
    value: float
    strategy: Strategy
    bounces: int
    method: Method


# ---------------------------------------------------------------------------
# GGX primitives


@numba.njit(cache=True, inline="always")
def lambda_k(alpha, cz):
    c = max(abs(cz), EPS_Z)
    c2 = min(c * c, 1.0)
    x = alpha * alpha * (1.0 - c2) / c2
    # (sqrt(1 + x) - 1) / 2 without cancellation
    return 0.5 * x / (1.0 + math.sqrt(1.0 + x))


@numba.njit(cache=True, inline="always")
def sigma_k(alpha, dz):
    lam = lambda_k(alpha, dz)
    return lam + 1.0 if dz < 0.0 else lam


@numba.njit(cache=True, inline="always")
def g1_k(alpha, cz):
    return 1.0 / (1.0 + lambda_k(alpha, cz))


@numba.njit(cache=True, inline="always")
def ggx_d(alpha, hx, hy, hz):
    if hz <= 0.0:
        return 0.0
    a2 = alpha * alpha
    t = hz * hz + (hx * hx + hy * hy) / a2
    return 1.0 / (math.pi * a2 * t * t)


@numba.njit(cache=True, inline="always")
def proj_area(alpha, wz):
    """Projected area of the microfacets visible from ``w`` (either side)."""
    lam = lambda_k(alpha, wz)
    c = max(abs(wz), EPS_Z)
    return (1.0 + lam) * c if wz > 0.0 else lam * c


@numba.njit(cache=True, inline="always")
def vndf_sample_k(alpha, wx, wy, wz, u1, u2):
    """Visible normal for viewing direction ``w`` (any hemisphere), spherical caps."""
    sx = alpha * wx
    sy = alpha * wy
    inv = 1.0 / math.sqrt(sx * sx + sy * sy + wz * wz)
    sx *= inv
    sy *= inv
    sz = wz * inv
    phi = 2.0 * math.pi * u1
    z = (1.0 - u2) * (1.0 + sz) - sz
    st = math.sqrt(max(0.0, 1.0 - z * z))
    hx = alpha * (st * math.cos(phi) + sx)
    hy = alpha * (st * math.sin(phi) + sy)
    hz = max(0.0, z + sz)
    n = math.sqrt(hx * hx + hy * hy + hz * hz)
    if n == 0.0:
        return 0.0, 0.0, 1.0
    return hx / n, hy / n, hz / n


@numba.njit(cache=True, inline="always")
def vndf_pdf_k(alpha, wx, wy, wz, hx, hy, hz):
    c = wx * hx + wy * hy + wz * hz
    if c <= 0.0:
        return 0.0
    return c * ggx_d(alpha, hx, hy, hz) / proj_area(alpha, wz)


@numba.njit(cache=True, inline="always")
def fresnel_k(ftype, p0, p1, c):
    if ftype == F_PERFECT:
        return 1.0
    c = min(1.0, max(0.0, c))
    if ftype == F_SCHLICK:
        m = 1.0 - c
        return p0 + (1.0 - p0) * m * m * m * m * m
    # exact unpolarised conductor reflectance
    eta, k = p0, p1
    c2 = c * c
    s2 = 1.0 - c2
    t0 = eta * eta - k * k - s2
    a2b2 = math.sqrt(t0 * t0 + 4.0 * eta * eta * k * k)
    a = math.sqrt(max(0.0, 0.5 * (a2b2 + t0)))
    t1 = a2b2 + c2
    t2 = 2.0 * c * a
    rs = (t1 - t2) / (t1 + t2)
    t3 = c2 * a2b2 + s2 * s2
    t4 = t2 * s2
    rp = rs * (t3 - t4) / (t3 + t4)
    return 0.5 * (rp + rs)


@numba.njit(cache=True, inline="always")
def fresnel_dielectric_k(c, eta):
    """Unpolarised reflectance for ``cos = c >= 0`` and ``eta = n_t / n_i``."""
    c = min(1.0, max(0.0, c))
    st2 = (1.0 - c * c) / (eta * eta)
    if st2 >= 1.0:
        return 1.0
    ct = math.sqrt(1.0 - st2)
    rs = (c - eta * ct) / (c + eta * ct)
    rp = (eta * c - ct) / (eta * c + ct)
    return 0.5 * (rs * rs + rp * rp)


@numba.njit(cache=True, inline="always")
def reflect_pdf_k(alpha, dx, dy, dz, ox, oy, oz):
    """Phase density (no Fresnel) for travel direction d scattering into o."""
    hx = ox - dx
    hy = oy - dy
    hz = oz - dz
    n = math.sqrt(hx * hx + hy * hy + hz * hz)
    if n == 0.0 or hz <= 0.0:
        return 0.0, 1.0
    hx /= n
    hy /= n
    hz /= n
    c = -(dx * hx + dy * hy + dz * hz)
    if c <= 0.0:
        return 0.0, 1.0
    return ggx_d(alpha, hx, hy, hz) / (4.0 * proj_area(alpha, -dz)), c


@numba.njit(cache=True)
def sample_reflect_k(alpha, dx, dy, dz):
    """Sample the next travel direction; returns (ok, x, y, z, cos_wi_h)."""
    for _ in range(MAX_RESAMPLE):
        hx, hy, hz = vndf_sample_k(alpha, -dx, -dy, -dz, np.random.random(), np.random.random())
        c = -(dx * hx + dy * hy + dz * hz)
        nx = dx + 2.0 * c * hx
        ny = dy + 2.0 * c * hy
        nz = dz + 2.0 * c * hz
        if abs(nz) >= EPS_Z and c > 0.0:
            return True, nx, ny, nz, c
    return False, 0.0, 0.0, 1.0, 1.0


# ---------------------------------------------------------------------------
# conductor walks


@numba.njit(cache=True, inline="always")
def _half_mass(coef, rate, n):
    m = 0.0
    s = 0.0
    for j in range(n):
        t = coef[j] / rate[j]
        m += t
        s += abs(t)
    return m, prob_ok(m) and s <= CANCELLATION_GUARD * abs(m)


@numba.njit(cache=True)
def _replay_half(seg_sigma, seg_down, k):
    z = 0.0
    for s in range(k):
        t = -math.log1p(-np.random.random()) / seg_sigma[s] if seg_sigma[s] > 0.0 else INF
        z = z + t if seg_down[s] else z - t
        if z < 0.0:
            return -1.0
    return z


@numba.njit(cache=True)
def conductor_walk(
    method, ax, ay, az, tx, ty, tz, lam_t, use, alpha, ftype, p0, p1, l_max, mis,
    vals, tmp, coef, rate, eterm, F, seg_sigma, seg_down,
):
    """One walk entering against ``a`` with next-event estimation toward targets.

    Targets ``t`` are BRDF-convention exit directions (``t.z > 0``); only
    entries with ``use[b]`` receive contributions.  With ``mis`` each
    contribution carries the one-sample balance factor ``2 p_a / (p_a + p_b)``
    for forward/backward selection with probability one half each.

    A position-free walk whose density cannot be propagated or validated
    re-samples its depth along the directions drawn so far and carries on
    analogically.  Returns (vertices, fell_back).
    """
    B = tx.shape[0]
    dx, dy, dz = -ax, -ay, -az
    s1 = sigma_k(alpha, dz)
    T = 1.0
    pf = 1.0  # product of forward sampling densities
    q_rev = 1.0  # reversed-path densities, excluding the first reversed step
    fell = False
    z = 0.0
    m = 1.0
    n = 0
    if method == ANALOG:
        z = -math.log1p(-np.random.random()) / s1
    elif method == POSITION_FREE:
        coef[0] = s1
        rate[0] = s1
        n = 1
        for b in range(B):
            F[0, b] = 1.0 / (s1 + lam_t[b])
        seg_sigma[0] = s1
        seg_down[0] = True
    i = 1
    while True:
        # vertex i, incoming travel direction d
        ok = True
        if method == POSITION_FREE:
            mass, ok = _half_mass(coef, rate, n)
        elif method == WANG:
            mass = m
        else:
            mass = 1.0
        for b in range(B):
            tmp[b] = 0.0
            if not (use[b] and ok):
                continue
            rho, c = reflect_pdf_k(alpha, dx, dy, dz, tx[b], ty[b], tz[b])
            if rho == 0.0:
                continue
            if method == POSITION_FREE:
                p = 0.0
                for j in range(n):
                    p += coef[j] * F[j, b]
                if not prob_ok(p):
                    ok = False
                    continue
            elif method == ANALOG:
                p = math.exp(-lam_t[b] * z)
            else:
                p = m / (1.0 + lam_t[b])
            e = T * fresnel_k(ftype, p0, p1, c) * rho * p
            if mis:
                if i == 1:
                    pb = 1.0
                else:
                    pb = q_rev * reflect_pdf_k(alpha, -tx[b], -ty[b], -tz[b], -dx, -dy, -dz)[0]
                e *= 2.0 * pf / (pf + pb)
            tmp[b] = e
        if not ok:
            fell = True
            z = _replay_half(seg_sigma, seg_down, i)
            if z < 0.0:
                return i, fell
            method = ANALOG
            continue
        for b in range(B):
            vals[b] += tmp[b]
        if i >= l_max - 1:
            return i, fell
        if method != ANALOG and i >= RR_START:
            q = min(RR_MAX, max(RR_MIN, mass * T))
            if np.random.random() >= q:
                return i, fell
            T /= q
        ok, nx, ny, nz, c = sample_reflect_k(alpha, dx, dy, dz)
        if not ok:
            return i, fell
        pf *= reflect_pdf_k(alpha, dx, dy, dz, nx, ny, nz)[0]
        if i >= 2:
            q_rev *= reflect_pdf_k(alpha, -nx, -ny, -nz, -dx, -dy, -dz)[0]
        T *= fresnel_k(ftype, p0, p1, c)
        dx, dy, dz = nx, ny, nz
        s = sigma_k(alpha, dz)
        down = dz < 0.0
        if method == POSITION_FREE:
            seg_sigma[i] = s
            seg_down[i] = down
            if down and n >= BOUNCE_CAP:
                ok = False
            else:
                n, ok = hd_add_bounce(coef, rate, eterm, n, down, s, INF)
            if ok and down:
                for b in range(B):
                    F[n - 1, b] = 1.0 / (rate[n - 1] + lam_t[b])
            elif not ok:
                fell = True
                z = _replay_half(seg_sigma, seg_down, i + 1)
                if z < 0.0:
                    return i, fell
                method = ANALOG
        elif method == ANALOG:
            if s <= 0.0:
                return i, fell
            t = -math.log1p(-np.random.random()) / s
            z = z + t if down else z - t
            if z < 0.0:
                return i, fell
        else:
            if not down:
                m *= s / (1.0 + s)
        i += 1


@numba.njit(cache=True)
def _scratch(B, l_max):
    size = BOUNCE_CAP + 2
    return (
        np.zeros(B),
        np.zeros(size),
        np.zeros(size),
        np.zeros(size),
        np.zeros((size, B)),
        np.zeros(l_max + 2),
        np.zeros(l_max + 2, dtype=np.bool_),
    )


# ---------------------------------------------------------------------------
# dielectric walks
#
# Each side of the interface gets its own canonical frame in which the
# current medium lies above the microsurface; crossing to the other side
# negates directions and remaps the depth (height CDF flips to 1 - CDF).


@numba.njit(cache=True, inline="always")
def refract_pdf_k(alpha, eta, wix, wiy, wiz, ox, oy, oz):
    """Transmission density from viewing direction wi into o (o.z < 0), with 1 - F."""
    hx = wix + eta * ox
    hy = wiy + eta * oy
    hz = wiz + eta * oz
    n = math.sqrt(hx * hx + hy * hy + hz * hz)
    if n == 0.0:
        return 0.0
    if hz < 0.0:
        n = -n
    hx /= n
    hy /= n
    hz /= n
    ci = wix * hx + wiy * hy + wiz * hz
    co = ox * hx + oy * hy + oz * hz
    if ci <= 0.0 or co >= 0.0:
        return 0.0
    den = ci + eta * co
    if den == 0.0:
        return 0.0
    fr = fresnel_dielectric_k(ci, eta)
    vis = ci * ggx_d(alpha, hx, hy, hz) / proj_area(alpha, wiz)
    return (1.0 - fr) * vis * eta * eta * (-co) / (den * den)


@numba.njit(cache=True, inline="always")
def flip_depth(z):
    if z <= 0.0:
        return INF
    if z > LN2:
        return -math.log1p(-math.exp(-z))
    return -math.log(-math.expm1(-z))


@numba.njit(cache=True)
def sample_dielectric_k(alpha, eta, dx, dy, dz):
    """Sample reflection or refraction; returns (ok, refracted, x, y, z).

    The returned direction is expressed in the frame of the side the ray
    ends up on.
    """
    for _ in range(MAX_RESAMPLE):
        hx, hy, hz = vndf_sample_k(alpha, -dx, -dy, -dz, np.random.random(), np.random.random())
        c = -(dx * hx + dy * hy + dz * hz)
        if c <= 0.0:
            continue
        fr = fresnel_dielectric_k(c, eta)
        if np.random.random() < fr:
            nx = dx + 2.0 * c * hx
            ny = dy + 2.0 * c * hy
            nz = dz + 2.0 * c * hz
            if abs(nz) >= EPS_Z:
                return True, False, nx, ny, nz
            continue
        ct = math.sqrt(max(0.0, 1.0 - (1.0 - c * c) / (eta * eta)))
        k = c / eta - ct
        # travel direction of the refracted ray, then the other side's frame
        nx = -(dx / eta + k * hx)
        ny = -(dy / eta + k * hy)
        nz = -(dz / eta + k * hz)
        inv = 1.0 / math.sqrt(nx * nx + ny * ny + nz * nz)
        nx *= inv
        ny *= inv
        nz *= inv
        if abs(nz) >= EPS_Z:
            return True, True, nx, ny, nz
    return False, False, 0.0, 0.0, 1.0


@numba.njit(cache=True)
def dielectric_walk(
    method, ax, ay, az, tx, ty, tz, lam_t, alpha, ior, l_max,
    vals, tmp, coef, rate, eterm, F, seg_sigma, seg_down,
):
    """Forward walk for a rough dielectric; ``a`` is incident from above.

    ``method``: ANALOG (exact, depth jumps on refraction), WANG (G1 products
    throughout) or HYBRID.  The hybrid estimates targets above the surface
    exactly (closed-form densities until the walk first refracts, then a
    depth re-sampled along the recorded segments) and targets below it with
    G1 products, so its lower lobe equals WANG's in expectation.
    The direction chain of WANG and HYBRID never stops at an escape.
    Returns (vertices, refractions, fell_back).
    """
    B = tx.shape[0]
    dx, dy, dz = -ax, -ay, -az
    side = 1.0
    eta = ior
    s1 = sigma_k(alpha, dz)
    T = 1.0
    m = 1.0  # G1-product mass
    z = 0.0
    n = 0
    crossings = 0
    fell = False
    exact = method == HYBRID  # closed-form density still valid
    alive = method == ANALOG  # explicit depth z is meaningful
    if alive:
        z = -math.log1p(-np.random.random()) / s1
    if exact:
        coef[0] = s1
        rate[0] = s1
        n = 1
        for b in range(B):
            F[0, b] = 1.0 / (s1 + lam_t[b])
        seg_sigma[0] = s1
        seg_down[0] = True
    i = 1
    while True:
        mass = m
        ok = True
        if exact:
            mass, ok = _half_mass(coef, rate, n)
        elif alive:
            mass = max(m, 1.0)
        for b in range(B):
            tmp[b] = 0.0
            if not ok:
                continue
            ox = side * tx[b]
            oy = side * ty[b]
            oz = side * tz[b]
            g1 = method == WANG or (method == HYBRID and tz[b] < 0.0)
            if not (g1 or exact or alive):
                continue
            if oz > 0.0:
                rho, c = reflect_pdf_k(alpha, dx, dy, dz, ox, oy, oz)
                if rho == 0.0:
                    continue
                rho *= fresnel_dielectric_k(c, eta)
                if g1:
                    p = m / (1.0 + lam_t[b])
                elif exact:
                    p = 0.0
                    for j in range(n):
                        p += coef[j] * F[j, b]
                    if not prob_ok(p):
                        ok = False
                        continue
                else:
                    p = math.exp(-lam_t[b] * z)
            else:
                rho = refract_pdf_k(alpha, eta, -dx, -dy, -dz, ox, oy, oz)
                if rho == 0.0:
                    continue
                if g1:
                    p = m / (1.0 + lam_t[b])
                else:
                    p = math.exp(lam_t[b] * math.log(-math.expm1(-z))) if z > 0.0 else 0.0
            tmp[b] = T * rho * p
        if not ok:
            fell = True
            z = _replay_half(seg_sigma, seg_down, i)
            exact = False
            alive = z >= 0.0
            if method == ANALOG and not alive:
                return i, crossings, fell
            continue
        for b in range(B):
            vals[b] += tmp[b]
        if i >= l_max - 1:
            return i, crossings, fell
        if method != ANALOG and i >= RR_START:
            q = min(RR_MAX, max(RR_MIN, mass * T))
            if np.random.random() >= q:
                return i, crossings, fell
            T /= q
        ok, refracted, nx, ny, nz = sample_dielectric_k(alpha, eta, dx, dy, dz)
        if not ok:
            return i, crossings, fell
        if refracted:
            crossings += 1
            side = -side
            eta = 1.0 / eta
            if exact:
                z = _replay_half(seg_sigma, seg_down, i)
                exact = False
                alive = z >= 0.0
            if alive:
                z = flip_depth(z)
        dx, dy, dz = nx, ny, nz
        s = sigma_k(alpha, dz)
        down = dz < 0.0
        if not down:
            m *= s / (1.0 + s)
        if alive:
            t = -math.log1p(-np.random.random()) / s if s > 0.0 else INF
            z = z + t if down else z - t
            if z < 0.0:
                alive = False
                if method == ANALOG:
                    return i, crossings, fell
        elif exact:
            seg_sigma[i] = s
            seg_down[i] = down
            if down and n >= BOUNCE_CAP:
                ok = False
            else:
                n, ok = hd_add_bounce(coef, rate, eterm, n, down, s, INF)
            if ok and down:
                for b in range(B):
                    F[n - 1, b] = 1.0 / (rate[n - 1] + lam_t[b])
            elif not ok:
                fell = True
                z = _replay_half(seg_sigma, seg_down, i + 1)
                exact = False
                alive = z >= 0.0
                if method == ANALOG and not alive:
                    return i, crossings, fell
        i += 1


# ---------------------------------------------------------------------------
# drivers


@numba.njit(cache=True)
def _lambdas(alpha, tz):
    out = np.empty(tz.shape[0])
    for b in range(tz.shape[0]):
        out[b] = lambda_k(alpha, tz[b])
    return out


@numba.njit(cache=True)
def _conductor_sample(
    method, mis, ax, ay, az, tx, ty, tz, lam_t, lam_a, alpha, ftype, p0, p1, l_max,
    vals, use, fw, bw, av, ay1, az1, vb,
):
    """One estimate for every target; returns (vertices, walks, fell_back).

    With ``mis`` each target flips its own coin: forward targets share one
    walk from ``a``, every backward target gets a walk of its own aimed at
    ``a`` and is rescaled from cos(a) to cos(target).
    """
    B = tx.shape[0]
    vals[:] = 0.0
    # a single vertex leaves nothing for the second strategy to improve on
    mis = mis and l_max > 2
    any_fw = False
    for b in range(B):
        use[b] = (not mis) or np.random.random() < 0.5
        any_fw = any_fw or use[b]
    vertices = 0
    walks = 0
    fell = False
    if any_fw:
        k, f = conductor_walk(method, ax, ay, az, tx, ty, tz, lam_t, use, alpha, ftype, p0, p1, l_max, mis, vals, *fw)
        vertices += k
        walks += 1
        fell = fell or f
    if mis:
        on = np.ones(1, dtype=np.bool_)
        for b in range(B):
            if use[b]:
                continue
            vb[0] = 0.0
            k, f = conductor_walk(
                method, tx[b], ty[b], tz[b], av, ay1, az1, lam_a, on, alpha, ftype, p0, p1, l_max, mis, vb, *bw
            )
            vals[b] = vb[0] * max(tz[b], EPS_Z) / max(az, EPS_Z)
            vertices += k
            walks += 1
            fell = fell or f
    return vertices, walks, fell


@numba.njit(cache=True, nogil=True)
def conductor_batch(method, n_samples, seed, ax, ay, az, tx, ty, tz, alpha, ftype, p0, p1, l_max, mis):
    """Independent estimates for every target; returns
    (count, mean, m2, fallbacks, nonfinite, vertices, walks)."""
    np.random.seed(seed)
    B = tx.shape[0]
    lam_t = _lambdas(alpha, tz)
    av = np.array([ax])
    ay1 = np.array([ay])
    az1 = np.array([az])
    lam_a = _lambdas(alpha, az1)
    fw = _scratch(B, l_max)
    bw = _scratch(1, l_max)
    vals = np.zeros(B)
    vb = np.zeros(1)
    use = np.zeros(B, dtype=np.bool_)
    mean = np.zeros(B)
    m2 = np.zeros(B)
    count = 0
    fallbacks = 0
    nonfinite = 0
    vertices = 0
    walks = 0
    for _ in range(n_samples):
        k, w, f = _conductor_sample(
            method, mis, ax, ay, az, tx, ty, tz, lam_t, lam_a, alpha, ftype, p0, p1, l_max,
            vals, use, fw, bw, av, ay1, az1, vb,
        )
        vertices += k
        walks += w
        fallbacks += f
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
    return count, mean, m2, fallbacks, nonfinite, vertices, walks


@numba.njit(cache=True)
def conductor_single(method, seed, ax, ay, az, ox, oy, oz, alpha, ftype, p0, p1, l_max, mis):
    """Returns (value, backward, vertices, fell_back)."""
    np.random.seed(seed)
    tx = np.array([ox])
    ty = np.array([oy])
    tz = np.array([oz])
    vals = np.zeros(1)
    use = np.zeros(1, dtype=np.bool_)
    k, _w, f = _conductor_sample(
        method, mis, ax, ay, az, tx, ty, tz, _lambdas(alpha, tz), _lambdas(alpha, np.array([az])),
        alpha, ftype, p0, p1, l_max, vals, use, _scratch(1, l_max), _scratch(1, l_max),
        np.array([ax]), np.array([ay]), np.array([az]), np.zeros(1),
    )
    return vals[0], not use[0], k, f


@numba.njit(cache=True)
def conductor_timing(method, n_evals, seed, ax, ay, az, ox, oy, oz, alpha, ftype, p0, p1, l_max, mis):
    """Back-to-back single-target evaluations for timing; returns a checksum."""
    np.random.seed(seed)
    tx = np.array([ox])
    ty = np.array([oy])
    tz = np.array([oz])
    lam_t = _lambdas(alpha, tz)
    av = np.array([ax])
    ay1 = np.array([ay])
    az1 = np.array([az])
    lam_a = _lambdas(alpha, az1)
    fw = _scratch(1, l_max)
    bw = _scratch(1, l_max)
    vals = np.zeros(1)
    vb = np.zeros(1)
    use = np.zeros(1, dtype=np.bool_)
    acc = 0.0
    for _ in range(n_evals):
        _conductor_sample(
            method, mis, ax, ay, az, tx, ty, tz, lam_t, lam_a, alpha, ftype, p0, p1, l_max,
            vals, use, fw, bw, av, ay1, az1, vb,
        )
        acc += vals[0]
    return acc


@numba.njit(cache=True)
def _cosine_dir():
    u1 = np.random.random()
    u2 = np.random.random()
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    return r * math.cos(phi), r * math.sin(phi), math.sqrt(max(EPS_Z * EPS_Z, 1.0 - u1))


@numba.njit(cache=True, nogil=True)
def conductor_furnace(method, n_samples, seed, ax, ay, az, alpha, ftype, p0, p1, l_max, mis):
    """Directional albedo by cosine-weighted sampling of the exit direction.

    Returns (count, mean, m2, fallbacks).
    """
    np.random.seed(seed)
    tx = np.zeros(1)
    ty = np.zeros(1)
    tz = np.ones(1)
    av = np.array([ax])
    ay1 = np.array([ay])
    az1 = np.array([az])
    lam_a = _lambdas(alpha, az1)
    lam_t = np.zeros(1)
    fw = _scratch(1, l_max)
    bw = _scratch(1, l_max)
    vals = np.zeros(1)
    vb = np.zeros(1)
    use = np.zeros(1, dtype=np.bool_)
    mean = 0.0
    m2 = 0.0
    count = 0
    fallbacks = 0
    for _ in range(n_samples):
        tx[0], ty[0], tz[0] = _cosine_dir()
        lam_t[0] = lambda_k(alpha, tz[0])
        _k, _w, f = _conductor_sample(
            method, mis, ax, ay, az, tx, ty, tz, lam_t, lam_a, alpha, ftype, p0, p1, l_max,
            vals, use, fw, bw, av, ay1, az1, vb,
        )
        fallbacks += f
        x = vals[0] * math.pi / tz[0]
        count += 1
        d = x - mean
        mean += d / count
        m2 += d * (x - mean)
    return count, mean, m2, fallbacks


@numba.njit(cache=True, nogil=True)
def dielectric_batch(method, n_samples, seed, ax, ay, az, tx, ty, tz, alpha, ior, l_max, groups):
    """Forward-only estimates for every target (either hemisphere).

    ``groups[b]`` assigns each target to a group whose per-sample average is
    accumulated too (lobe means with the bin correlations accounted for).
    Returns (count, mean, m2, fallbacks, nonfinite, vertices,
    refracted_paths, group_mean, group_m2).
    """
    np.random.seed(seed)
    B = tx.shape[0]
    lam_t = _lambdas(alpha, tz)
    tmp, coef, rate, eterm, F, seg_sigma, seg_down = _scratch(B, l_max)
    vals = np.zeros(B)
    mean = np.zeros(B)
    m2 = np.zeros(B)
    G = groups.max() + 1
    gsize = np.zeros(G)
    for b in range(B):
        gsize[groups[b]] += 1.0
    gval = np.zeros(G)
    gmean = np.zeros(G)
    gm2 = np.zeros(G)
    count = 0
    fallbacks = 0
    nonfinite = 0
    vertices = 0
    refracted = 0
    for _ in range(n_samples):
        vals[:] = 0.0
        k, c, f = dielectric_walk(
            method, ax, ay, az, tx, ty, tz, lam_t, alpha, ior, l_max,
            vals, tmp, coef, rate, eterm, F, seg_sigma, seg_down,
        )
        vertices += k
        refracted += c > 0
        fallbacks += f
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
        gval[:] = 0.0
        for b in range(B):
            gval[groups[b]] += vals[b] / gsize[groups[b]]
        for k in range(G):
            d = gval[k] - gmean[k]
            gmean[k] += d / count
            gm2[k] += d * (gval[k] - gmean[k])
    return count, mean, m2, fallbacks, nonfinite, vertices, refracted, gmean, gm2


@numba.njit(cache=True)
def dielectric_single(method, seed, ax, ay, az, ox, oy, oz, alpha, ior, l_max):
    """Returns (value, vertices, refractions, fell_back)."""
    np.random.seed(seed)
    tx = np.array([ox])
    ty = np.array([oy])
    tz = np.array([oz])
    tmp, coef, rate, eterm, F, seg_sigma, seg_down = _scratch(1, l_max)
    vals = np.zeros(1)
    k, c, f = dielectric_walk(
        method, ax, ay, az, tx, ty, tz, _lambdas(alpha, tz), alpha, ior, l_max,
        vals, tmp, coef, rate, eterm, F, seg_sigma, seg_down,
    )
    return vals[0], k, c, f


@numba.njit(cache=True)
def dielectric_furnace(method, n_samples, seed, ax, ay, az, alpha, ior, l_max):
    """Total exit density over the sphere (cosine-weighted per hemisphere)."""
    np.random.seed(seed)
    tx = np.zeros(1)
    ty = np.zeros(1)
    tz = np.ones(1)
    lam_t = np.zeros(1)
    tmp, coef, rate, eterm, F, seg_sigma, seg_down = _scratch(1, l_max)
    vals = np.zeros(1)
    mean = 0.0
    m2 = 0.0
    for n in range(1, n_samples + 1):
        x, y, zc = _cosine_dir()
        if np.random.random() < 0.5:
            zc = -zc
        tx[0], ty[0], tz[0] = x, y, zc
        lam_t[0] = lambda_k(alpha, zc)
        vals[0] = 0.0
        dielectric_walk(
            method, ax, ay, az, tx, ty, tz, lam_t, alpha, ior, l_max,
            vals, tmp, coef, rate, eterm, F, seg_sigma, seg_down,
        )
        v = vals[0] * 2.0 * math.pi / abs(zc)
        d = v - mean
        mean += d / n
        m2 += d * (v - mean)
    return n_samples, mean, m2


# ---------------------------------------------------------------------------
# Python API


def in_plane(theta_deg: float) -> Direction:
    """Exit direction at signed angle ``theta_deg`` in the incidence plane.

    Positive angles lie on the specular side of ``omega_i = (sin t, 0, cos t)``;
    angles beyond 90 degrees point below the surface (transmission).
    """
    t = math.radians(theta_deg)
    return Direction(-math.sin(t), 0.0, math.cos(t))


def incident(theta_deg: float) -> Direction:
    t = math.radians(theta_deg)
    return Direction(math.sin(t), 0.0, math.cos(t))


def lambda_ggx(alpha: float, cos_theta: float) -> float:
    """Smith lambda of GGX for a direction at ``|cos_theta|`` from the normal."""
    if not abs(cos_theta) <= 1.0:
        raise ValueError(f"cos_theta must lie in [-1, 1], got {cos_theta}")
    return float(lambda_k(float(alpha), float(cos_theta)))


def smith_sigma(surface: GgxSurface, omega) -> float:
    """Extinction seen by a ray *travelling* along ``omega``."""
    return float(sigma_k(surface.alpha, float(omega[2])))


def g1(surface: GgxSurface, omega) -> float:
    return float(g1_k(surface.alpha, float(omega[2])))


def vndf_sample(surface: GgxSurface, omega, rng: np.random.Generator) -> Direction:
    """Visible normal for the viewing direction ``omega`` (pointing away)."""
    h = vndf_sample_k(surface.alpha, float(omega[0]), float(omega[1]), float(omega[2]), rng.random(), rng.random())
    return Direction(*h)


def vndf_pdf(surface: GgxSurface, omega, m) -> float:
    return float(vndf_pdf_k(surface.alpha, *map(float, omega), *map(float, m)))


def _fresnel(surface: GgxSurface):
    if surface.is_dielectric:
        raise ValueError("conductor operation on a dielectric surface")
    return surface.mode.fresnel.params()


def phase_pdf(surface: GgxSurface, omega, omega_p) -> float:
    """Density of scattering from viewing direction ``omega`` into ``omega_p``."""
    d = [-float(c) for c in omega]
    return float(reflect_pdf_k(surface.alpha, *d, *map(float, omega_p))[0])


def conductor_phase(surface: GgxSurface, omega, omega_p) -> float:
    """Phase density times Fresnel for viewing ``omega`` scattering into ``omega_p``."""
    ftype, p0, p1 = _fresnel(surface)
    d = [-float(c) for c in omega]
    rho, c = reflect_pdf_k(surface.alpha, *d, *map(float, omega_p))
    return float(rho * fresnel_k(ftype, p0, p1, c)) if rho > 0.0 else 0.0


def sample_conductor_phase(surface: GgxSurface, omega, rng: np.random.Generator):
    """Reflect about a visible normal; returns (omega_p, throughput) or (None, 0)."""
    ftype, p0, p1 = _fresnel(surface)
    for _ in range(MAX_RESAMPLE):
        m = vndf_sample(surface, omega, rng)
        c = float(np.dot(omega, m))
        o = 2.0 * c * np.asarray(m) - np.asarray(omega, dtype=float)
        if c > 0.0 and abs(o[2]) >= EPS_Z:
            return Direction(*o), float(fresnel_k(ftype, p0, p1, c))
    return None, 0.0


def mis_weight(strategy: Strategy, forward_pdf: float, backward_pdf: float) -> float:
    """Balance heuristic for the two unidirectional strategies (0 if both vanish)."""
    total = forward_pdf + backward_pdf
    if not total > 0.0:
        return 0.0
    return (forward_pdf if strategy == Strategy.FORWARD else backward_pdf) / total


@dataclass(frozen=True)
class MicrofacetEvalRequest:
    omega_i: Direction
    omega_o: Direction
    surface: GgxSurface
    method: Method = Method.POSITION_FREE
    rng_seed: int = 0
    max_length: int = DEFAULT_MAX_LENGTH
    mis: bool = True

    def __post_init__(self):
        if self.omega_i[2] <= 0.0:
            raise ValueError("omega_i must come from above the surface (z > 0)")
        if self.max_length < 2:
            raise ValueError("max_length must be at least 2")


def eval_conductor(req: MicrofacetEvalRequest) -> MicrofacetEvalResult:
    """Single-sample estimate of f(omega_i, omega_o) * cos(theta_o)."""
    if req.method == Method.DIELECTRIC_HYBRID:
        raise ValueError("the hybrid method applies to dielectrics only")
    ftype, p0, p1 = _fresnel(req.surface)
    if req.omega_o[2] <= 0.0:
        return MicrofacetEvalResult(0.0, Strategy.FORWARD, 0, req.method)
    v, backward, k, _f = conductor_single(
        int(req.method), seed32(req.rng_seed), *map(float, req.omega_i), *map(float, req.omega_o),
        req.surface.alpha, ftype, p0, p1, req.max_length, req.mis,
    )
    return MicrofacetEvalResult(float(v), Strategy(int(backward)), int(k), req.method)


def eval_dielectric(req: MicrofacetEvalRequest) -> MicrofacetEvalResult:
    """Single-sample forward estimate for a rough dielectric (either hemisphere)."""
    if not req.surface.is_dielectric:
        raise ValueError("eval_dielectric needs a Dielectric surface")
    if req.method == Method.POSITION_FREE:
        raise ValueError("use DIELECTRIC_HYBRID for the position-free dielectric")
    v, k, _c, _f = dielectric_single(
        int(req.method), seed32(req.rng_seed), *map(float, req.omega_i), *map(float, req.omega_o),
        req.surface.alpha, req.surface.mode.ior, req.max_length,
    )
    return MicrofacetEvalResult(float(v), Strategy.FORWARD, int(k), req.method)


def single_scatter(surface: GgxSurface, omega_i, omega_o) -> float:
    """Closed-form single-reflection value (the ``max_length = 2`` estimand)."""
    ftype, p0, p1 = _fresnel(surface)
    a = surface.alpha
    if omega_o[2] <= 0.0:
        return 0.0
    h = np.asarray(omega_i, dtype=float) + np.asarray(omega_o, dtype=float)
    h /= np.linalg.norm(h)
    li = lambda_k(a, omega_i[2])
    lo = lambda_k(a, omega_o[2])
    f = fresnel_k(ftype, p0, p1, float(np.dot(omega_i, h)))
    return float(f * ggx_d(a, *h) / (4.0 * omega_i[2] * (1.0 + li + lo)))
