import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from combweyl import exact_kernels as ek

from . import oracles


def test_images_match_spectral_at_midpoint():
    a = ek.kernel_diag_images(1.0, 0.5, 0.05)
    b = ek.kernel_diag_spectral(1.0, 0.5, 0.05)
    assert abs(a - b.value) <= 1e-12
    # frozen from the mpmath image sum
    assert a == pytest.approx(1.244565533005603, abs=1e-13)


def test_images_against_mpmath_oracle():
    for L, x, t in [(1.0, 0.1, 1e-3), (3.0, 2.7, 0.4), (1.0, 0.93, 1.0)]:
        assert ek.kernel_diag_images(L, x, t) == pytest.approx(oracles.images_kernel(L, x, t), rel=1e-12)


def test_images_vanish_at_boundary():
    assert ek.kernel_diag_images(1.0, 1e-9, 0.01) < 1e-6


def test_kernel_rejects_bad_queries():
    with pytest.raises(ValueError):
        ek.kernel_diag_images(1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        ek.kernel_diag_images(1.0, 0.5, 0.0)
    with pytest.raises(ValueError):
        ek.kernel_diag_images(1.0, 0.5, 1e-3, tolerance=1e-18)


def test_spectral_single_term():
    t, L = 0.3, 2.0
    v = ek.kernel_diag_spectral(L, L / 2, t, K=1)
    assert v.value == pytest.approx((2 / L) * math.exp(-t * math.pi**2 / L**2), rel=1e-15)
    assert v.tail_bound > 0


def test_spectral_tail_bound_covers_truncation():
    full = ek.kernel_diag_spectral(1.0, 0.3, 0.01).value
    for K in (2, 5, 10):
        part = ek.kernel_diag_spectral(1.0, 0.3, 0.01, K=K)
        assert 0 <= full - part.value <= part.tail_bound + 1e-15


def test_spectral_decreasing_in_t():
    vals = [ek.kernel_diag_spectral(1.0, 0.4, t).value for t in np.geomspace(1e-3, 1, 20)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


@settings(max_examples=60, deadline=None)
@given(
    L=st.sampled_from([0.5, 1.0, 3.0]),
    frac=st.floats(0.01, 0.99),
    t=st.floats(1e-3, 1.0),
)
def test_kernel_properties(L, frac, t):
    x = frac * L
    k = ek.kernel_diag_images(L, x, t)
    ceiling = 1 / math.sqrt(4 * math.pi * t)
    assert 0 <= k <= ceiling * (1 + 1e-14)
    assert k == pytest.approx(ek.kernel_diag_images(L, L - x, t), abs=1e-14 * ceiling)
    assert k >= ek.interval_kernel_lower_bound(L, x, t) - 1e-15 * ceiling


def test_trace_interval_against_theta():
    # frozen from the Jacobi theta oracle
    frozen = {1e-3: 8.420620580763855, 0.01: 2.3209479177387814, 0.1: 0.39214305718594643}
    for t, v in frozen.items():
        assert ek.trace_interval(1.0, t) == pytest.approx(v, rel=1e-14)
        assert ek.trace_interval(1.0, t) == pytest.approx(oracles.theta_trace(1.0, t), rel=1e-14)


def test_trace_interval_scaling_and_large_t():
    assert ek.trace_interval(3.0, 0.9) == pytest.approx(ek.trace_interval(1.0, 0.1), rel=1e-14)
    t = 5.0
    assert ek.trace_interval(1.0, t) == pytest.approx(math.exp(-t * math.pi**2), rel=1e-15)


def test_trace_box():
    assert ek.trace_box([1.0], 0.2) == ek.trace_interval(1.0, 0.2)
    assert ek.trace_box([1.0, 2.0], 0.2) == pytest.approx(
        ek.trace_interval(1.0, 0.2) * ek.trace_interval(2.0, 0.2), rel=1e-15
    )
    with pytest.raises(ValueError):
        ek.trace_box([], 0.1)


def test_cube_second_coefficient():
    # (4 pi t)^{n/2} Tr_{(0,1)^n} = 1 - n sqrt(pi t) + O(t): the sqrt(t) slope is -n sqrt(pi)
    for n in (1, 2, 3):
        t1, t2 = 1e-6, 4e-6
        f = lambda t: ((4 * math.pi * t) ** (n / 2) * ek.trace_box([1.0] * n, t) - 1) / math.sqrt(t)
        slope = f(t1)
        assert slope == pytest.approx(-n * math.sqrt(math.pi), rel=1e-2)
        assert abs(f(t2) - f(t1)) < 0.05


def test_precise_trace_matches_double():
    for t in (1e-3, 0.05):
        assert float(ek.trace_interval_precise(1.0, t)) == pytest.approx(ek.trace_interval(1.0, t), rel=1e-14)
    assert float(ek.trace_box_precise([1.0, 1.0], 0.05)) == pytest.approx(ek.trace_box([1.0, 1.0], 0.05), rel=1e-14)


def test_expansion_residual_constants():
    # measured maxima over [1e-3, 0.1] are about 0.0135 and 0.0118
    worst = np.max([ek.expansion_residuals(t) for t in np.geomspace(1e-3, 0.1, 15)], axis=0)
    assert worst[0] < 0.02 and worst[1] < 0.02


def test_square_lower_bound():
    L, t = 1.0, 0.01
    assert ek.square_kernel_lower_bound(L, (0.5, 0.5), 1e-4) == pytest.approx(1 / (4 * math.pi * 1e-4), rel=1e-12)
    assert ek.square_kernel_lower_bound(L, (0.0, 0.3), t) <= 0
    assert ek.square_kernel_lower_bound(L, (0.3, 1.0), t) <= 0
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.uniform(0, L, 2)
        tt = 10 ** rng.uniform(-3, 0)
        k = ek.kernel_diag_images(L, x[0], tt) * ek.kernel_diag_images(L, x[1], tt)
        assert k >= ek.square_kernel_lower_bound(L, tuple(x), tt) - 1e-13 * k
    with pytest.raises(ValueError):
        ek.square_kernel_lower_bound(L, (1.5, 0.5), t)


def test_erf_tail_value_and_limits():
    t = 0.04
    gap, upper = ek.erf_tail(math.sqrt(t), t)
    # sqrt(t) * int_1^inf exp(-u^2) du, coefficient frozen from erfc(1)
    assert gap == pytest.approx(0.13940279264033099 * math.sqrt(t), rel=1e-12)
    assert gap <= upper
    assert ek.erf_tail(50.0, 0.1).gap < 1e-300


def test_erf_tail_inequality_grid():
    for delta in np.geomspace(1e-3, 3, 20):
        for t in np.geomspace(1e-3, 1, 20):
            gap, upper = ek.erf_tail(delta, t)
            assert 0 <= gap <= upper
            assert gap == pytest.approx(oracles.erf_gap(delta, t), rel=1e-10, abs=1e-300)
