import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from posfree.height import InvalidParameterError, SlabExtent
from posfree.media import (
    EPS_Z,
    Direction,
    HenyeyGreenstein,
    Isotropic,
    SlabMedium,
    hg_eval,
    hg_pdf,
    hg_sample,
    sample_free_flight,
    sigma_1d,
)


def medium(sigma=1.0, **kw):
    return SlabMedium(sigma, SlabExtent.finite(1.0), **kw)


def test_sigma_1d_divides_by_cosine():
    assert sigma_1d(medium(), (0, 0, 1.0)) == 1.0
    assert sigma_1d(medium(), (0, 0, 0.5)) == 2.0
    assert sigma_1d(medium(3.0), (0, 0, -0.5)) == 6.0


@pytest.mark.parametrize("z", [0.1, 0.7, 1.0])
def test_sigma_1d_even_and_linear(z):
    assert sigma_1d(medium(), (0, 0, z)) == sigma_1d(medium(), (0, 0, -z))
    assert sigma_1d(medium(2.5), (0, 0, z)) == pytest.approx(2.5 * sigma_1d(medium(), (0, 0, z)))


def test_sigma_1d_grazing_clamp():
    assert sigma_1d(medium(), (1.0, 0, 0.0)) == pytest.approx(1.0 / EPS_Z)
    assert math.isfinite(sigma_1d(medium(), (1.0, 0, 1e-300)))


def test_hg_values():
    assert hg_eval(0.0, 0.3) == pytest.approx(1 / (4 * math.pi), rel=1e-15)
    assert hg_eval(0.5, 1.0) == pytest.approx(0.75 / (4 * math.pi * 0.125), rel=1e-14)
    assert hg_eval(-0.5, -1.0) == pytest.approx(hg_eval(0.5, 1.0), rel=1e-15)


@pytest.mark.parametrize("g", [-0.9, -0.3, 0.0, 0.5, 0.9])
def test_hg_normalised(g):
    total, _ = quad(lambda m: 2 * math.pi * hg_eval(g, m), -1, 1, points=[math.copysign(0.99, g)], epsabs=1e-12)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_hg_sample_chi_square(rng):
    g = 0.8
    wi = Direction.from_angles(0.4, 1.0)
    n = 1_000_000
    cos = np.empty(n)
    from posfree.media import hg_sample_k

    u = rng.random((n, 2))
    for k in range(n):
        o = hg_sample_k(g, wi.x, wi.y, wi.z, u[k, 0], u[k, 1])
        cos[k] = o[0] * wi.x + o[1] * wi.y + o[2] * wi.z
    edges = np.linspace(-1, 1, 101)
    # HG cosine CDF in closed form
    cdf = lambda m: (1 - g * g) / (2 * g) * (1 / np.sqrt(1 + g * g - 2 * g * m) - 1 / (1 + g))
    expected = n * np.diff(cdf(edges))
    observed = np.histogram(np.clip(cos, -1, 1), edges)[0]
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_hg_sample_unit_and_uniform_cosine_at_g0(rng):
    wi = Direction(0.0, 0.0, 1.0)
    c = np.array([hg_sample(0.0, wi, rng).z for _ in range(20000)])
    assert stats.kstest(c, "uniform", args=(-1, 2)).pvalue > 0.01
    o = hg_sample(0.6, wi, rng)
    assert abs(math.hypot(*o) - 1) < 1e-12 and abs(o.z) >= EPS_Z


def test_hg_pdf_equals_eval(rng):
    for _ in range(100):
        g = rng.uniform(-0.95, 0.95)
        a = Direction.normalized(*rng.normal(size=3))
        b = Direction.normalized(*rng.normal(size=3))
        assert hg_pdf(g, a, b) == pytest.approx(HenyeyGreenstein(g).eval(a, b), rel=1e-12)


def test_free_flight(rng):
    assert sample_free_flight(1.0, u=0.0) == 0.0
    assert sample_free_flight(1.0, u=1 - math.exp(-1)) == pytest.approx(1.0, rel=1e-14)
    d = np.array([sample_free_flight(2.0, rng) for _ in range(200_000)])
    assert abs(d.mean() - 0.5) <= 3 * d.std() / math.sqrt(len(d))


def test_validation():
    with pytest.raises(InvalidParameterError):
        HenyeyGreenstein(1.0)
    with pytest.raises(InvalidParameterError):
        medium(albedo=1.5)
    with pytest.raises(InvalidParameterError):
        SlabMedium(0.0, SlabExtent.finite(1.0))
    with pytest.raises(InvalidParameterError):
        Direction(0.6, 0.0, 0.6).validate()
    assert Isotropic().g == 0.0
