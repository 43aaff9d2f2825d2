import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from posfree.height import (
    BOUNCE_CAP,
    BounceDirectionSign,
    HeightDistribution,
    InvalidParameterError,
    SlabExtent,
    add_bounce,
    evaluate,
    exit_probability,
    init_base,
    total_mass,
)
from posfree.height import hd_cdf, hd_sample_depth
from posfree.oracles import convolution_oracle
from posfree.verify import PROB_FLOOR, build, sample_depths

DOWN, UP = BounceDirectionSign.DOWN, BounceDirectionSign.UP
HALF = SlabExtent.semi_infinite()
UNIT = SlabExtent.finite(1.0)


def test_base_density():
    h = init_base(1.0, HALF)
    assert h.n == 1 and h.amplitudes.tolist() == [1.0] and h.rates.tolist() == [1.0]
    assert total_mass(h) == 1.0
    assert evaluate(init_base(2.0, UNIT), 0.0) == 2.0
    assert evaluate(init_base(1.0, UNIT), 1.0) == pytest.approx(math.exp(-1), rel=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_base_rejects_bad_sigma(bad):
    with pytest.raises(InvalidParameterError):
        init_base(bad, UNIT)


@pytest.mark.parametrize("L", [0.0, -2.0, math.inf, math.nan])
def test_extent_rejects_bad_thickness(L):
    with pytest.raises(InvalidParameterError):
        SlabExtent.finite(L)


def test_direction_sign():
    assert BounceDirectionSign.of(0.3) is DOWN and BounceDirectionSign.of(-0.3) is UP
    with pytest.raises(InvalidParameterError):
        BounceDirectionSign.of(0.0)


def test_down_bounce_finite():
    h = add_bounce(init_base(1.0, UNIT), DOWN, 2.0)
    np.testing.assert_allclose(h.amplitudes, [2.0, -2.0], rtol=1e-15)
    np.testing.assert_array_equal(h.rates, [1.0, 2.0])
    # against the convolution integral itself
    o = convolution_oracle([(True, 1.0), (True, 2.0)], 1.0)
    z = np.linspace(0, 1, 9)
    np.testing.assert_allclose(h.evaluate(z), o(z), rtol=1e-12, atol=1e-15)


def test_up_bounce_half_space():
    h = add_bounce(init_base(1.0, HALF), UP, 3.0)
    assert h.n == 1
    np.testing.assert_allclose(h.amplitudes, [0.75], rtol=1e-15)
    o = convolution_oracle([(True, 1.0), (False, 3.0)], math.inf)
    z = np.linspace(0, 5, 11)
    np.testing.assert_allclose(h.evaluate(z), o(z), rtol=1e-11)


def test_up_bounce_finite_adds_anchored_term():
    L = 1.5
    h = add_bounce(init_base(1.0, SlabExtent.finite(L)), UP, 2.0)
    a = h.amplitudes
    assert h.n == 2 and h.rates[1] == -2.0
    assert a[0] == pytest.approx(2.0 / 3.0)
    assert a[1] == pytest.approx(-a[0] * math.exp(-L * 3.0))
    assert h.evaluate(L) == pytest.approx(0.0, abs=1e-15)  # nothing arrives from below the bottom


@pytest.mark.parametrize("eps", [1e-12, -1e-12])
def test_degenerate_rates_flag_unstable(eps):
    h = add_bounce(init_base(1.0, UNIT), DOWN, 1.0 + eps)
    assert not h.stable
    with pytest.raises(InvalidParameterError):
        h.total_mass()


def test_bounce_cap():
    h = init_base(1.0, SlabExtent.finite(3.0))
    sig = 1.0
    while h.n < BOUNCE_CAP:
        sig *= 1.37
        h = h.add_bounce(DOWN, sig)
        assert h.stable
    assert not h.add_bounce(DOWN, sig * 1.37).stable


def test_exit_examples():
    assert exit_probability(init_base(1.0, HALF), UP, 1.0) == 0.5
    assert exit_probability(init_base(1.0, HALF), DOWN, 1.0) == 0.0
    h = init_base(1.0, UNIT)
    assert exit_probability(h, DOWN, 2.0) == pytest.approx(math.exp(-2) * (math.e - 1), rel=1e-14)
    assert exit_probability(h, UP, 1.0) == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-14)
    assert 0.2325442 == pytest.approx(exit_probability(h, DOWN, 2.0), abs=5e-8)
    assert 0.4323324 == pytest.approx(exit_probability(h, UP, 1.0), abs=5e-8)


def test_total_mass_examples():
    assert total_mass(init_base(1.0, UNIT)) == pytest.approx(1 - math.exp(-1), rel=1e-15)
    h = HeightDistribution.from_amplitudes([2.0, -2.0], [1.0, 2.0], HALF)
    assert total_mass(h) == pytest.approx(1.0, rel=1e-15)
    assert evaluate(h, math.log(2)) == pytest.approx(0.5, rel=1e-15)


def test_total_mass_near_zero_rate():
    # a rate that nearly vanishes must take the a * L limit smoothly
    L = 2.0
    for b in (1e-9, -1e-9, 1e-3):
        h = HeightDistribution.from_amplitudes([1.0], [b], SlabExtent.finite(L))
        ref = -math.expm1(-b * L) / b
        assert h.total_mass() == pytest.approx(ref, rel=1e-12)


def test_amplitude_round_trip():
    h = HeightDistribution.from_amplitudes([3.0, -1.0, 0.5], [2.0, -1.5, 4.0], SlabExtent.finite(2.0))
    np.testing.assert_allclose(h.amplitudes, [3.0, -1.0, 0.5], rtol=1e-15)
    with pytest.raises(InvalidParameterError):
        HeightDistribution.from_amplitudes([1.0], [-1.0], HALF)


# -- properties against the quadrature oracle --------------------------------

rate = st.floats(0.05, 50.0)
segments = st.lists(st.tuples(st.booleans(), rate), min_size=0, max_size=7).flatmap(
    lambda rest: rate.map(lambda s: [(True, s)] + rest)
)
extent = st.one_of(st.just(math.inf), st.floats(0.1, 10.0))


@given(segments, extent, st.floats(0.05, 50.0))
def test_matches_oracle(segs, L, so):
    h = build(segs, L)
    if not h.stable:
        return
    o = convolution_oracle(segs, L)
    z = sample_depths(segs, L)
    ref = o(z)
    assert np.max(np.abs(h.evaluate(z) - ref)) <= 1e-7 * np.max(np.abs(ref))
    for d in (UP, DOWN):
        got = h.exit_probability(d, so)
        want = o.exit_probability(d is UP, so)
        assert abs(got - want) <= 1e-8 * max(abs(want), PROB_FLOOR)


@given(segments, extent)
def test_density_nonnegative(segs, L):
    h = build(segs, L)
    if not h.stable:
        return
    z = sample_depths(segs, L, 200)
    assert np.all(h.evaluate(z) >= -1e-9 * np.max(np.abs(h.amplitudes)))
    assert -1e-6 <= h.total_mass() <= 1 + 1e-6


@given(segments, rate)
def test_half_space_down_conserves_mass(segs, s):
    h = build(segs, math.inf)
    if not h.stable:
        return
    after = h.add_bounce(DOWN, s)
    if after.stable:
        assert after.total_mass() == pytest.approx(h.total_mass(), rel=1e-9)
        assert after.exit_probability(DOWN, 1.0) == 0.0


@given(segments, st.floats(0.1, 10.0), rate)
def test_finite_up_loses_escaped_fraction(segs, L, s):
    h = build(segs, L)
    if not h.stable:
        return
    after = h.add_bounce(UP, s)
    if not after.stable:
        return
    escaped = convolution_oracle(segs, L).exit_probability(True, s)
    lost = h.total_mass() - after.total_mass()
    assert abs(lost - escaped) <= 1e-7 * max(escaped, 1e-10)


def test_depth_sampling_matches_cdf(rng):
    from scipy import stats

    segs = [(True, 1.3), (True, 0.4), (False, 2.2), (True, 3.1)]
    L = 2.5
    h = build(segs, L)
    coef, rate_, _ = h._arrays()
    m = h.total_mass()
    u = rng.random(4000)
    z = np.array([hd_sample_depth(coef, rate_, h.n, m, x, L) for x in u])
    cdf = np.vectorize(lambda x: hd_cdf(coef, rate_, h.n, x, L) / m)
    assert stats.kstest(z, cdf).pvalue > 0.01
    assert np.all((z >= 0) & (z <= L))
