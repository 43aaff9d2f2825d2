"""Closed-form collision-depth densities as signed sums of exponentials.

A photon that has travelled ``k`` segments through a homogeneous slab has a
collision-depth density

    h_k(z) = sum_j a_j * exp(-b_j * z)

Downward segments convolve ``h`` with a free-flight density, upward segments
correlate it; both keep the sum-of-exponentials form, so the density can be
propagated exactly with O(n) work per segment.

Terms with a negative rate (created by upward segments in a finite slab)
grow like ``exp(|b| z)`` and are stored *anchored at the bottom boundary*:
the stored coefficient is the term's value at ``z = L``.  This keeps every
stored number bounded by the density scale even when ``|b| L`` is large.
The raw ``a_j`` are still available through :attr:`amplitudes`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "BOUNCE_CAP",
    "DEGENERACY_TOL",
    "PROB_EPS",
    "BounceDirectionSign",
    "HeightDistribution",
    "InvalidParameterError",
    "SlabExtent",
    "init_base",
    "add_bounce",
    "exit_probability",
    "total_mass",
    "evaluate",
]

BOUNCE_CAP = 10
DEGENERACY_TOL = 1e-6
AMPLITUDE_GUARD = 1e12
CANCELLATION_GUARD = 1e7  # sum |term mass| / |mass|
PROB_EPS = 1e-6
BUFFER_SIZE = BOUNCE_CAP + 1


class InvalidParameterError(ValueError):
    pass


class BounceDirectionSign(enum.Enum):
    DOWN = 1  # increasing depth
    UP = -1

    @classmethod
    def of(cls, z: float) -> "BounceDirectionSign":
        if z == 0.0 or not math.isfinite(z):
            raise InvalidParameterError(f"direction z-component must be finite and nonzero, got {z}")
        return cls.DOWN if z > 0.0 else cls.UP

    @property
    def down(self) -> bool:
        return self is BounceDirectionSign.DOWN


@dataclass(frozen=True)
class SlabExtent:
    """Depth range ``[0, L]``; ``thickness=None`` means a half-space."""

    thickness: float | None = None

    def __post_init__(self):
        if self.thickness is not None:
            L = self.thickness
            if not (math.isfinite(L) and L > 0.0):
                raise InvalidParameterError(f"slab thickness must be finite and positive, got {L}")

    @classmethod
    def finite(cls, thickness: float) -> "SlabExtent":
        return cls(float(thickness))

    @classmethod
    def semi_infinite(cls) -> "SlabExtent":
        return cls(None)

    @property
    def is_finite(self) -> bool:
        return self.thickness is not None

    @property
    def length(self) -> float:
        """Thickness, or ``inf`` for the half-space (the form kernels expect)."""
        return math.inf if self.thickness is None else self.thickness


# ---------------------------------------------------------------------------
# numba kernels; ``length = inf`` selects the half-space branch everywhere


@numba.njit(cache=True, inline="always")
def dexp(x, y):
    """(exp(-x) - exp(-y)) / (y - x), continuous across x == y."""
    if x > y:
        x, y = y, x
    d = y - x
    if d == 0.0:
        return math.exp(-x)
    return math.exp(-x) * (-math.expm1(-d)) / d


@numba.njit(cache=True)
def hd_init(coef, rate, eterm, sigma, length):
    coef[0] = sigma
    rate[0] = sigma
    eterm[0] = math.exp(-sigma * length)
    return 1


@numba.njit(cache=True)
def hd_add_bounce(coef, rate, eterm, n, down, sigma, length):
    """Propagate the density by one segment in place.

    ``eterm[j]`` caches ``exp(-|b_j| L)`` (zero for the half-space).
    Returns ``(n_new, ok)``; when ``ok`` is False the update hit a degenerate
    rate pair, the bounce cap or the amplitude guard.  The cap is checked
    before anything is written; after the other failures the arrays must not
    be used any further.  Cancellation is checked separately, per vertex,
    by ``mass_checked``.
    """
    finite = length < math.inf
    sigma0 = rate[0]
    if down:
        if n + 1 > BOUNCE_CAP:
            return n, False
        for j in range(n):
            r = rate[j]
            if r > 0.0 and abs(sigma - r) < DEGENERACY_TOL * max(sigma, r):
                return n, False
        new = 0.0
        for j in range(n):
            r = rate[j]
            coef[j] *= sigma / (sigma - r)
            if r > 0.0:
                new -= coef[j]
            else:
                new -= coef[j] * eterm[j]
        coef[n] = new
        rate[n] = sigma
        eterm[n] = math.exp(-sigma * length)
        n += 1
    elif finite:
        if n + 1 > BOUNCE_CAP:
            return n, False
        for j in range(n):
            r = rate[j]
            if r < 0.0 and abs(sigma + r) < DEGENERACY_TOL * max(sigma, -r):
                return n, False
        new = 0.0
        for j in range(n):
            r = rate[j]
            coef[j] *= sigma / (sigma + r)
            if r > 0.0:
                new -= coef[j] * eterm[j]
            else:
                new -= coef[j]
        coef[n] = new
        rate[n] = -sigma
        eterm[n] = math.exp(-sigma * length)
        n += 1
    else:
        for j in range(n):
            coef[j] *= sigma / (rate[j] + sigma)

    amax = 0.0
    for j in range(n):
        amax = max(amax, abs(coef[j]))
    if not amax <= AMPLITUDE_GUARD * sigma0:
        return n, False
    return n, True


@numba.njit(cache=True, inline="always")
def _ratio(coef, e_hi, e_lo, s, x_hi, x_lo, L):
    # coef * (e_hi - e_lo) / s, with e_hi = exp(-x_hi), e_lo = exp(-x_lo), s*L = x_lo - x_hi
    if abs(s) * L < 0.1:
        return coef * L * dexp(x_hi, x_lo)
    return coef * (e_hi - e_lo) / s


@numba.njit(cache=True, inline="always")
def exit_factor(up, sigma, e_sigma, r, e_r, L):
    """Escape probability contributed by one unit-coefficient term (finite slab).

    Depends only on the term's rate, so walks can cache it per term.
    """
    if up:
        s = sigma + r
        if r > 0.0:
            return _ratio(1.0, 1.0, e_sigma * e_r, s, 0.0, s * L, L)
        return _ratio(1.0, e_r, e_sigma, s, -r * L, sigma * L, L)
    s = sigma - r
    if r > 0.0:
        return _ratio(1.0, e_r, e_sigma, s, r * L, sigma * L, L)
    return _ratio(1.0, 1.0, e_sigma * e_r, s, 0.0, s * L, L)


@numba.njit(cache=True, inline="always")
def mass_factor(r, e_r, L):
    """Integral over [0, L] of one unit-coefficient term."""
    a = abs(r)
    return _ratio(1.0, 1.0, e_r, a, 0.0, a * L, L)


@numba.njit(cache=True)
def hd_exit_e(coef, rate, eterm, n, up, sigma, e_sigma, length):
    """Raw escape probability through the top (``up``) or the bottom.

    ``e_sigma`` must be ``exp(-sigma * length)``; sweeps precompute it once
    per outgoing direction.
    """
    if not length < math.inf:
        if not up:
            return 0.0
        p = 0.0
        for j in range(n):
            p += coef[j] / (rate[j] + sigma)
        return p
    p = 0.0
    for j in range(n):
        p += coef[j] * exit_factor(up, sigma, e_sigma, rate[j], eterm[j], length)
    return p


@numba.njit(cache=True)
def hd_exit(coef, rate, eterm, n, up, sigma, length):
    e_sigma = math.exp(-sigma * length) if length < math.inf else 0.0
    return hd_exit_e(coef, rate, eterm, n, up, sigma, e_sigma, length)


@numba.njit(cache=True)
def hd_mass(coef, rate, eterm, n, length):
    """Probability that the photon is still inside (integral of h)."""
    m = 0.0
    if not length < math.inf:
        for j in range(n):
            m += coef[j] / rate[j]
        return m
    for j in range(n):
        m += coef[j] * mass_factor(rate[j], eterm[j], length)
    return m


@numba.njit(cache=True)
def hd_eval(coef, rate, n, z, length):
    h = 0.0
    for j in range(n):
        r = rate[j]
        if r > 0.0:
            h += coef[j] * math.exp(-r * z)
        else:
            h += coef[j] * math.exp(r * (length - z))
    return h


@numba.njit(cache=True)
def hd_cdf(coef, rate, n, z, length):
    """Integral of h over [0, z] (finite slabs)."""
    c = 0.0
    for j in range(n):
        r = rate[j]
        if r > 0.0:
            c += coef[j] * z * dexp(0.0, r * z)
        else:
            c += coef[j] * z * dexp(-r * (length - z), -r * length)
    return c


@numba.njit(cache=True)
def hd_sample_depth(coef, rate, n, mass, u, length):
    """Invert the normalised CDF of h on [0, L] (safeguarded Newton)."""
    target = u * mass
    lo = 0.0
    hi = length
    z = 0.5 * length
    tol = 1e-13 * mass
    for _ in range(100):
        f = hd_cdf(coef, rate, n, z, length) - target
        if abs(f) <= tol or hi - lo <= 1e-13 * length:
            break
        if f > 0.0:
            hi = z
        else:
            lo = z
        d = hd_eval(coef, rate, n, z, length)
        step = z - f / d if d > 0.0 else -1.0
        z = step if lo < step < hi else 0.5 * (lo + hi)
    return z


@numba.njit(cache=True, inline="always")
def prob_ok(p):
    return -PROB_EPS <= p <= 1.0 + PROB_EPS


@numba.njit(cache=True, inline="always")
def mass_checked(coef, Mf, n):
    """Remaining mass, and whether it (hence the density) is still trustworthy.

    ``Mf[j]`` is the per-term mass factor.  The sum is rejected when it is
    invalid as a probability or when its terms cancel by more than
    ``CANCELLATION_GUARD``, i.e. when rounding of the coefficients could
    exceed ~1e-8 of the mass.
    """
    m = 0.0
    s = 0.0
    for j in range(n):
        t = coef[j] * Mf[j]
        m += t
        s += abs(t)
    return m, prob_ok(m) and s <= CANCELLATION_GUARD * abs(m)


# ---------------------------------------------------------------------------
# value-type API


def _check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not (math.isfinite(sigma) and sigma > 0.0):
        raise InvalidParameterError(f"1D extinction must be finite and positive, got {sigma}")
    return sigma


@dataclass(frozen=True, eq=False)
class HeightDistribution:
    """Immutable sum-of-exponentials depth density.

    ``coefficients`` holds the anchored form described in the module
    docstring; use :attr:`amplitudes` for the plain ``a_j``.
    """

    coefficients: np.ndarray
    rates: np.ndarray
    extent: SlabExtent
    stable: bool = True

    @property
    def n(self) -> int:
        return len(self.rates)

    @property
    def amplitudes(self) -> np.ndarray:
        a = np.array(self.coefficients, dtype=float)
        if self.extent.is_finite:
            neg = self.rates < 0
            with np.errstate(over="ignore"):
                a[neg] = a[neg] * np.exp(self.rates[neg] * self.extent.length)
        return a

    @classmethod
    def from_amplitudes(cls, amplitudes, rates, extent: SlabExtent) -> "HeightDistribution":
        a = np.asarray(amplitudes, dtype=float)
        b = np.asarray(rates, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise InvalidParameterError("amplitudes and rates must be 1D arrays of equal length")
        if not extent.is_finite and np.any(b <= 0):
            raise InvalidParameterError("half-space densities need strictly positive rates")
        c = a.copy()
        if extent.is_finite:
            neg = b < 0
            c[neg] = a[neg] * np.exp(-b[neg] * extent.length)
        return cls(c, b.copy(), extent)

    def _arrays(self):
        coef = np.zeros(BUFFER_SIZE)
        rate = np.zeros(BUFFER_SIZE)
        eterm = np.zeros(BUFFER_SIZE)
        coef[: self.n] = self.coefficients
        rate[: self.n] = self.rates
        if self.extent.is_finite:
            eterm[: self.n] = np.exp(-np.abs(self.rates) * self.extent.length)
        return coef, rate, eterm

    def _require_stable(self):
        if not self.stable:
            raise InvalidParameterError("operation on an unstable height distribution")

    def add_bounce(self, direction: BounceDirectionSign, sigma: float) -> "HeightDistribution":
        self._require_stable()
        sigma = _check_sigma(sigma)
        coef, rate, eterm = self._arrays()
        n, ok = hd_add_bounce(coef, rate, eterm, self.n, direction.down, sigma, self.extent.length)
        if ok:
            L = self.extent.length
            Mf = np.array([mass_factor(rate[j], eterm[j], L) if L < math.inf else 1.0 / rate[j] for j in range(n)])
            ok = mass_checked(coef, Mf, n)[1]
        if not ok:
            return HeightDistribution(self.coefficients, self.rates, self.extent, stable=False)
        return HeightDistribution(coef[:n].copy(), rate[:n].copy(), self.extent)

    def exit_probability(self, exit_dir: BounceDirectionSign, sigma_exit: float, clamp: bool = False) -> float:
        """Probability of escaping through the top (UP) or bottom (DOWN).

        The raw value is returned by default so callers can detect precision
        loss with :func:`prob_ok`; ``clamp=True`` is for display.
        """
        self._require_stable()
        sigma_exit = _check_sigma(sigma_exit)
        coef, rate, eterm = self._arrays()
        p = hd_exit(coef, rate, eterm, self.n, not exit_dir.down, sigma_exit, self.extent.length)
        return min(max(p, 0.0), 1.0) if clamp else p

    def total_mass(self) -> float:
        self._require_stable()
        coef, rate, eterm = self._arrays()
        return hd_mass(coef, rate, eterm, self.n, self.extent.length)

    def evaluate(self, z):
        self._require_stable()
        coef, rate, _ = self._arrays()
        if np.ndim(z) == 0:
            return hd_eval(coef, rate, self.n, float(z), self.extent.length)
        return np.array([hd_eval(coef, rate, self.n, float(zz), self.extent.length) for zz in np.ravel(z)]).reshape(
            np.shape(z)
        )

    def __repr__(self):
        return (
            f"HeightDistribution(n={self.n}, a={self.amplitudes.tolist()}, "
            f"b={self.rates.tolist()}, extent={self.extent}, stable={self.stable})"
        )


def init_base(sigma1: float, extent: SlabExtent) -> HeightDistribution:
    """Density of the first collision: the free-flight pdf ``s e^{-s z}``."""
    sigma1 = _check_sigma(sigma1)
    return HeightDistribution(np.array([sigma1]), np.array([sigma1]), extent)


def add_bounce(h: HeightDistribution, direction: BounceDirectionSign, sigma: float) -> HeightDistribution:
    return h.add_bounce(direction, sigma)


def exit_probability(h: HeightDistribution, exit_dir: BounceDirectionSign, sigma_exit: float) -> float:
    return h.exit_probability(exit_dir, sigma_exit)


def total_mass(h: HeightDistribution) -> float:
    return h.total_mass()


def evaluate(h: HeightDistribution, z):
    return h.evaluate(z)
