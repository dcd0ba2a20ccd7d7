import numpy as np
import pytest
from hypothesis import given, strategies as st

from rlmarket.core import T_Y, make_generator
from rlmarket.fundamentals import (
    FundamentalSeries,
    approximate_fundamental,
    generate_fundamental,
    jump_statistics,
    view_bias,
)


def series(seed, steps=2875, amplitude=0.5):
    return generate_fundamental(steps, amplitude, make_generator(seed, 3, 0))


def test_constant_series_statistics():
    s = jump_statistics(np.full(T_Y, 100.0))
    assert (s.annual_jumps, s.mean_amplitude) == (0.0, 0.0)


def test_two_ten_percent_jumps():
    v = np.full(T_Y, 100.0)
    v[50:] = 110.0
    v[150:] = 121.0
    s = jump_statistics(v)
    assert s.annual_jumps == pytest.approx(2.0)
    assert s.mean_amplitude == pytest.approx(0.10)


def test_zero_amplitude_is_constant():
    f = generate_fundamental(500, 0.0, make_generator(0, 3, 0))
    assert np.all(f.values == f.values[0])


@given(st.integers(0, 2**32), st.floats(0.1, 1.5))
def test_positive_and_piecewise_constant(seed, nu):
    f = generate_fundamental(600, nu, make_generator(seed, 3, 0))
    assert np.all(f.values > 0)
    assert 80.0 <= f.values[0] <= 120.0
    changed = np.flatnonzero(np.diff(f.values) != 0) + 1
    assert set(changed) <= set(f.jump_times.tolist())


def test_generator_round_trip():
    stats = [jump_statistics(series(s).values) for s in range(20)]
    assert np.mean([s.annual_jumps for s in stats]) == pytest.approx(12.70, abs=1.0)
    assert np.mean([s.mean_amplitude for s in stats]) == pytest.approx(0.059, abs=0.005)


def test_amplitude_scales_linearly():
    lo = np.mean([jump_statistics(series(s, amplitude=0.3).values).mean_amplitude for s in range(20)])
    hi = np.mean([jump_statistics(series(s, amplitude=0.6).values).mean_amplitude for s in range(20)])
    assert hi / lo == pytest.approx(2.0, rel=0.1)


def test_zero_noise_view_is_exact():
    f = series(1)
    v = approximate_fundamental(f, make_generator(1, 4, 0, 0), mean_abs_error=0.0)
    assert np.array_equal(v.values, f.values)


def test_view_bias_target_and_persistence():
    f = series(2)
    biases, lag1 = [], []
    for a in range(20):
        v = approximate_fundamental(f, make_generator(2, 4, a, 0))
        biases.append(view_bias(f.values, v.values))
        e = v.values / f.values - 1.0
        lag1.append(np.corrcoef(e[:-1], e[1:])[0, 1])
    assert np.mean(biases) == pytest.approx(0.0237, abs=0.006)
    assert np.mean(lag1) == pytest.approx(0.97, abs=0.02)


def test_views_stay_positive_over_many_steps():
    f = FundamentalSeries(np.full(10**6, 50.0), np.empty(0, int), 0.5)
    v = approximate_fundamental(f, make_generator(3, 4, 0, 0), mean_abs_error=0.5)
    assert np.all(v.values > 0)


def test_agents_get_distinct_views():
    f = series(4)
    a = approximate_fundamental(f, make_generator(4, 4, 0, 0)).values
    b = approximate_fundamental(f, make_generator(4, 4, 1, 0)).values
    assert not np.array_equal(a, b)
