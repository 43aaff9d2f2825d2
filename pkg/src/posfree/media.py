"""Directions, phase functions and the depth-parameterised extinction of a slab.

Frame convention for slabs: ``+z`` points *down* into the medium, so a
photon entering from the top has ``omega.z > 0`` and one leaving through
the top has ``omega.z < 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

from .height import InvalidParameterError, SlabExtent

EPS_Z = 1e-7
INV_4PI = 1.0 / (4.0 * math.pi)


class Direction(NamedTuple):
    x: float
    y: float
    z: float

    @classmethod
    def from_angles(cls, theta: float, phi: float = 0.0) -> "Direction":
        """Unit vector at polar angle ``theta`` from +z (radians)."""
        st = math.sin(theta)
        return cls(st * math.cos(phi), st * math.sin(phi), math.cos(theta))

    @classmethod
    def normalized(cls, x, y, z) -> "Direction":
        n = math.sqrt(x * x + y * y + z * z)
        if n == 0.0:
            raise InvalidParameterError("zero-length direction")
        return cls(x / n, y / n, z / n)

    def __neg__(self) -> "Direction":
        return Direction(-self.x, -self.y, -self.z)

    def dot(self, other) -> float:
        return self.x * other[0] + self.y * other[1] + self.z * other[2]

    def validate(self) -> "Direction":
        nrm = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(nrm - 1.0) > 1e-12:
            raise InvalidParameterError(f"direction not unit length (|w|={nrm!r})")
        if self.z == 0.0:
            raise InvalidParameterError("direction lies in the slab plane")
        return self


# --- numba primitives ------------------------------------------------------


@numba.njit(cache=True, inline="always")
def clamp_z(x, y, z):
    """Push |z| up to EPS_Z, keeping the azimuth; returns a unit vector."""
    if abs(z) >= EPS_Z:
        return x, y, z
    zz = EPS_Z if z >= 0.0 else -EPS_Z
    s = math.sqrt(x * x + y * y)
    if s == 0.0:
        return 0.0, 0.0, 1.0 if z >= 0.0 else -1.0
    k = math.sqrt(1.0 - zz * zz) / s
    return x * k, y * k, zz


@numba.njit(cache=True, inline="always")
def sigma_1d_k(sigma, wz):
    return sigma / max(abs(wz), EPS_Z)


@numba.njit(cache=True, inline="always")
def basis(x, y, z):
    """Two unit vectors completing (x, y, z) to an orthonormal frame."""
    # Duff et al. 2017 branchless construction
    s = 1.0 if z >= 0.0 else -1.0
    a = -1.0 / (s + z)
    b = x * y * a
    return (1.0 + s * x * x * a, s * b, -s * x), (b, s + y * y * a, -y)


@numba.njit(cache=True, inline="always")
def hg_eval_k(g, cos_theta):
    d = 1.0 + g * g - 2.0 * g * cos_theta
    return INV_4PI * (1.0 - g * g) / (d * math.sqrt(d))


@numba.njit(cache=True, inline="always")
def hg_cos_k(g, u):
    if abs(g) < 1e-3:
        return 1.0 - 2.0 * u
    s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u)
    c = (1.0 + g * g - s * s) / (2.0 * g)
    return min(1.0, max(-1.0, c))


@numba.njit(cache=True, inline="always")
def hg_sample_k(g, x, y, z, u1, u2):
    c = hg_cos_k(g, u1)
    s = math.sqrt(max(0.0, 1.0 - c * c))
    phi = 2.0 * math.pi * u2
    t, b = basis(x, y, z)
    sx = s * math.cos(phi)
    sy = s * math.sin(phi)
    nx = sx * t[0] + sy * b[0] + c * x
    ny = sx * t[1] + sy * b[1] + c * y
    nz = sx * t[2] + sy * b[2] + c * z
    inv = 1.0 / math.sqrt(nx * nx + ny * ny + nz * nz)
    return clamp_z(nx * inv, ny * inv, nz * inv)


@numba.njit(cache=True, inline="always")
def free_flight_k(sigma, u):
    return -math.log1p(-u) / sigma


# --- Python API ------------------------------------------------------------


class PhaseFunction:
    """Normalised phase function; absorption lives in the medium's albedo."""

    g = 0.0

    def eval(self, omega, omega_p) -> float:
        raise NotImplementedError

    def pdf(self, omega, omega_p) -> float:
        return self.eval(omega, omega_p)

    def sample(self, omega, rng: np.random.Generator) -> Direction:
        raise NotImplementedError


@dataclass(frozen=True)
class HenyeyGreenstein(PhaseFunction):
    g: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.g < 1.0:
            raise InvalidParameterError(f"HG mean cosine must lie in (-1, 1), got {self.g}")

    def eval(self, omega, omega_p) -> float:
        c = sum(a * b for a, b in zip(omega, omega_p))
        return hg_eval(self.g, min(1.0, max(-1.0, c)))

    def sample(self, omega, rng):
        return hg_sample(self.g, omega, rng)


@dataclass(frozen=True)
class Isotropic(HenyeyGreenstein):
    g: float = field(default=0.0, init=False)


def hg_eval(g: float, cos_theta: float) -> float:
    """Henyey-Greenstein density per steradian."""
    return float(hg_eval_k(g, cos_theta))


def hg_sample(g: float, omega, rng: np.random.Generator) -> Direction:
    u1, u2 = rng.random(2)
    return Direction(*hg_sample_k(g, omega[0], omega[1], omega[2], u1, u2))


def hg_pdf(g: float, omega, omega_p) -> float:
    c = omega[0] * omega_p[0] + omega[1] * omega_p[1] + omega[2] * omega_p[2]
    return hg_eval(g, min(1.0, max(-1.0, c)))


def sample_free_flight(sigma_1d: float, rng: np.random.Generator | None = None, u: float | None = None) -> float:
    """Depth increment drawn from ``sigma e^{-sigma t}`` by inversion."""
    if u is None:
        u = rng.random()
    return float(free_flight_k(sigma_1d, u))


@dataclass(frozen=True)
class SlabMedium:
    sigma: float
    extent: SlabExtent
    albedo: float = 1.0
    phase: PhaseFunction = Isotropic()

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise InvalidParameterError(f"extinction must be finite and positive, got {self.sigma}")
        if not 0.0 <= self.albedo <= 1.0:
            raise InvalidParameterError(f"albedo must lie in [0, 1], got {self.albedo}")

    @property
    def thickness(self) -> float:
        return self.extent.length


def sigma_1d(medium: SlabMedium, omega) -> float:
    """Extinction per unit depth seen by a photon travelling along ``omega``."""
    return float(sigma_1d_k(medium.sigma, omega[2]))
