"""Brute-force numerical oracles, deliberately independent of the closed forms.

``PanelDensity`` holds a depth density as values at Chebyshev nodes on graded
panels and propagates it with Gauss-Legendre quadrature of the convolution /
correlation integrals.  Nothing here knows that densities are sums of
exponentials.
"""

from __future__ import annotations

import math

import numpy as np

M_NODES = 24
M_GAUSS = 16
_GX, _GW = np.polynomial.legendre.leggauss(M_GAUSS)
_CK = np.cos((2 * np.arange(M_NODES) + 1) * np.pi / (2 * M_NODES))  # in (-1, 1)
U_BREAKS = np.array([0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 48.0, 64.0])
_BW = (-1.0) ** np.arange(M_NODES) * np.sin((2 * np.arange(M_NODES) + 1) * np.pi / (2 * M_NODES))


def _graded(a, b, delta, ratio=1.5):
    pts = [a]
    w = delta
    while pts[-1] + w < b:
        pts.append(pts[-1] + w)
        w *= ratio
    pts.append(b)
    return np.array(pts)


def make_panels(length, sigma_max, sigma_min):
    delta = 0.4 / sigma_max
    if math.isfinite(length):
        left = _graded(0.0, length / 2, delta)
        right = length - left[::-1]
        return np.concatenate([left, right[1:]])
    zmax = 45.0 / sigma_min
    return _graded(0.0, zmax, delta)


class PanelDensity:
    def __init__(self, edges, values, length):
        self.edges = edges
        self.values = values  # (P, M_NODES)
        self.length = length

    @classmethod
    def from_function(cls, f, edges, length):
        nodes = cls._nodes(edges)
        return cls(edges, f(nodes), length)

    @staticmethod
    def _nodes(edges):
        lo = edges[:-1, None]
        hi = edges[1:, None]
        return 0.5 * (lo + hi) + 0.5 * (hi - lo) * _CK[None, :]

    @property
    def upper(self):
        return self.edges[-1]

    def _interp(self, z):
        p = np.clip(np.searchsorted(self.edges, z, side="right") - 1, 0, len(self.edges) - 2)
        lo = self.edges[p]
        hi = self.edges[p + 1]
        t = (2 * z - lo - hi) / (hi - lo)
        d = t[:, None] - _CK[None, :]
        exact = d == 0
        d[exact] = 1.0
        k = _BW[None, :] / d
        out = (k * self.values[p]).sum(1) / k.sum(1)
        hit = exact.any(1)
        if hit.any():
            out[hit] = self.values[p[hit]][exact[hit]]
        return out

    def _gauss(self, a, b):
        """Gauss nodes/weights on each [a_i, b_i] (arrays of equal shape)."""
        a = np.asarray(a)[..., None]
        b = np.asarray(b)[..., None]
        y = 0.5 * (a + b) + 0.5 * (b - a) * _GX
        w = 0.5 * (b - a) * _GW
        return y, w

    def _full_panel_quadrature(self):
        y, w = self._gauss(self.edges[:-1], self.edges[1:])
        return y, w, self(y.ravel()).reshape(y.shape)

    def __call__(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = self._interp(np.clip(z, self.edges[0], self.edges[-1]))
        out[z > self.edges[-1]] = 0.0  # half-space tail beyond the panels is negligible
        return out

    def _row_integral(self, lo, hi, anchor, scale, sign, weight):
        """Row-wise integral of h(y) * weight(y) over [lo, hi].

        Break points are the panel edges (resolving h) merged with points
        graded away from ``anchor`` on the length scale ``scale`` (resolving
        an exponential weight peaked there).
        """
        kern = anchor[:, None] + sign * U_BREAKS[None, :] * scale
        pts = np.concatenate([np.broadcast_to(self.edges, (len(lo), len(self.edges))), kern], axis=1)
        pts = np.sort(np.clip(pts, lo[:, None], hi[:, None]), axis=1)
        y, w = self._gauss(pts[:, :-1], pts[:, 1:])
        f = self(y.ravel()).reshape(y.shape)
        return np.sum(w * f * weight(y), axis=(1, 2))

    def propagate(self, down: bool, sigma: float) -> "PanelDensity":
        """Density after one more segment (down: convolution, up: correlation)."""
        z = self._nodes(self.edges).ravel()
        if down:
            lo, hi, sign = np.zeros_like(z), z, -1.0
        else:
            lo, hi, sign = z, np.full_like(z, self.upper), 1.0
        out = self._row_integral(lo, hi, z, 1.0 / sigma, sign, lambda y: sigma * np.exp(-sigma * np.abs(y - z[:, None, None])))
        P = len(self.edges) - 1
        return PanelDensity(self.edges, out.reshape(P, M_NODES), self.length)

    def integrate(self, weight=None) -> float:
        yq, wq, fq = self._full_panel_quadrature()
        if weight is not None:
            fq = fq * weight(yq)
        return float(np.sum(wq * fq))

    def exit_probability(self, up: bool, sigma: float) -> float:
        """Integral of h(y) times the transmittance to the exit boundary."""
        if not up and not math.isfinite(self.length):
            return 0.0
        one = np.zeros(1)
        if up:
            anchor, sign, weight = one, 1.0, lambda y: np.exp(-sigma * y)
        else:
            anchor, sign, weight = one + self.length, -1.0, lambda y: np.exp(-sigma * (self.length - y))
        return float(self._row_integral(one, one + self.upper, anchor, 1.0 / sigma, sign, weight)[0])


def convolution_oracle(segments, length):
    """Oracle density after ``segments`` = [(down, sigma), ...]; first must be down."""
    sig = [s for _, s in segments]
    edges = make_panels(length, max(sig), min(sig))
    s1 = segments[0][1]
    h = PanelDensity.from_function(lambda z: s1 * np.exp(-s1 * z), edges, length)
    for down, s in segments[1:]:
        h = h.propagate(down, s)
    return h


def sphere_quadrature(n_theta=400, n_phi=400):
    """Gauss-Legendre in cos(theta) x uniform in phi: (dirs (N,3), weights)."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    c, p = np.meshgrid(x, phi, indexing="ij")
    s = np.sqrt(1 - c**2)
    dirs = np.stack([s * np.cos(p), s * np.sin(p), c], -1).reshape(-1, 3)
    weights = (w[:, None] * np.full(n_phi, 2 * np.pi / n_phi)[None, :]).ravel()
    return dirs, weights
