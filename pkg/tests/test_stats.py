import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from posfree.stats import EstimateAccumulator, combined_z, welford_update


def test_small_example():
    acc = EstimateAccumulator()
    for x in (1.0, 2.0, 3.0):
        welford_update(acc, x)
    assert acc.count == 3 and acc.mean == 2.0 and acc.variance == 1.0


def test_constant_stream_has_zero_variance():
    acc = EstimateAccumulator()
    for _ in range(1_000_000):
        acc.update(0.1)
    assert acc.variance == 0.0
    # the vectorised path rounds its mean once, so only a tight bound holds there
    b = EstimateAccumulator().update_batch(np.full(1_000_000, 0.1))
    assert b.variance <= 1e-30


def test_matches_two_pass(rng):
    x = rng.lognormal(3.0, 2.0, 200_000) + 1e6
    acc = EstimateAccumulator()
    for v in x:
        acc.update(v)
    mu = x.mean()
    var = np.sum((x - mu) ** 2) / (x.size - 1)
    assert acc.mean == pytest.approx(mu, rel=1e-12)
    assert acc.variance == pytest.approx(var, rel=1e-10)
    assert EstimateAccumulator().update_batch(x).variance == pytest.approx(var, rel=1e-10)


def test_nonfinite_samples_are_counted_not_used():
    acc = EstimateAccumulator()
    for v in (1.0, math.nan, math.inf, 3.0):
        acc.update(v)
    assert (acc.count, acc.rejected, acc.mean) == (2, 2, 2.0)
    b = EstimateAccumulator().update_batch([1.0, -math.inf, 3.0])
    assert (b.count, b.rejected, b.mean) == (2, 1, 2.0)


def test_stderr_and_timing():
    acc = EstimateAccumulator()
    assert acc.stderr == math.inf and math.isnan(acc.ns_per_eval)
    acc.update_batch([1.0, 3.0])
    acc.time_ns = 500
    assert acc.stderr == pytest.approx(1.0)
    assert acc.ns_per_eval == 250.0


chunks = st.lists(st.lists(st.floats(-1e3, 1e3), max_size=30), min_size=1, max_size=6)


@given(chunks)
def test_merge_is_order_insensitive(parts):
    flat = [x for p in parts for x in p]
    fwd = EstimateAccumulator()
    for p in parts:
        fwd.merge(EstimateAccumulator().update_batch(p))
    rev = EstimateAccumulator()
    for p in reversed(parts):
        rev.merge(EstimateAccumulator().update_batch(p))
    assert fwd.count == rev.count == len(flat)
    if flat:
        scale = max(1.0, max(abs(x) for x in flat))
        assert fwd.mean == pytest.approx(np.mean(flat), abs=1e-12 * scale)
        assert rev.mean == pytest.approx(fwd.mean, abs=1e-12 * scale)
    if len(flat) > 1:
        ref = np.var(flat, ddof=1)
        assert fwd.variance == pytest.approx(ref, rel=1e-9, abs=1e-9 * scale**2)
        assert rev.variance == pytest.approx(ref, rel=1e-9, abs=1e-9 * scale**2)


def test_combined_z():
    assert combined_z(1.0, 0.3, 1.5, 0.4) == pytest.approx(1.0)
    np.testing.assert_array_equal(combined_z([1.0, 1.0], [0.0, 0.0], [1.0, 2.0], [0.0, 0.0]), [0.0, math.inf])
