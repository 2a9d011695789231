"""Closed-form Dirichlet heat kernels and traces on intervals and boxes.

Two independent routes to the on-diagonal kernel of the interval ``(0, L)``
are provided: the method-of-images sum and the sine-series expansion.  They
serve as mutual oracles.  The pointwise lower bounds for intervals and
squares and the Gaussian tail inequality are also here.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import mpmath
import numpy as np
from scipy import integrate

__all__ = [
    "SeriesValue",
    "ErfTail",
    "kernel_diag_images",
    "kernel_diag_spectral",
    "interval_kernel_lower_bound",
    "trace_interval",
    "trace_box",
    "trace_interval_precise",
    "trace_box_precise",
    "expansion_residuals",
    "square_kernel_lower_bound",
    "erf_tail",
]

_IMAGE_EXPONENT_MARGIN = 40.0


class SeriesValue(NamedTuple):
    value: float
    tail_bound: float


class ErfTail(NamedTuple):
    gap: float
    upper: float


def _check_query(L: float, x: float, t: float) -> None:
    if not L > 0:
        raise ValueError(f"interval length must be positive, got {L}")
    if not 0 < x < L:
        raise ValueError(f"x must lie in (0, {L}), got {x}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")


def kernel_diag_images(L: float, x: float, t: float, tolerance: float | None = None) -> float:
    """Dirichlet heat kernel of ``(0, L)`` on the diagonal, by images.

    Sums ``(4 pi t)^{-1/2} (exp(-m^2 L^2 / t) - exp(-(m L + x)^2 / t))`` over
    all ``m`` with ``m^2 L^2 / t <= 40 + ln(1/tolerance)``.  The default
    tolerance is the double-precision resolution of the kernel's scale;
    explicit requests below it are rejected.
    """
    _check_query(L, x, t)
    prefactor = 1.0 / math.sqrt(4.0 * math.pi * t)
    if tolerance is None:
        tolerance = 4.0 * np.finfo(float).eps * prefactor
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    if tolerance < 4.0 * np.finfo(float).eps * prefactor * (1 - 1e-12):
        raise ValueError(
            f"tolerance {tolerance:g} is below double precision resolution "
            f"{4.0 * np.finfo(float).eps * prefactor:g} at t={t:g}"
        )
    bound = _IMAGE_EXPONENT_MARGIN + math.log(1.0 / tolerance)
    m_max = int(math.ceil(math.sqrt(bound * t) / L)) + 1
    m = np.arange(-m_max, m_max + 1, dtype=float)
    terms = np.exp(-(m * L) ** 2 / t) - np.exp(-(m * L + x) ** 2 / t)
    # cancellation can leave a roundoff-level negative value when t >> L^2
    return prefactor * min(max(math.fsum(terms), 0.0), 1.0)


def _spectral_tail(L: float, t: float, K: int) -> float:
    a = t * math.pi**2 / L**2
    return (2.0 / L) * math.exp(-a * K * K) / (2.0 * a * K)


def kernel_diag_spectral(
    L: float, x: float, t: float, K: int | None = None, tolerance: float = 1e-15
) -> SeriesValue:
    """Sine-series form ``(2/L) sum_k exp(-t pi^2 k^2 / L^2) sin^2(pi k x / L)``.

    With ``K=None`` the series is cut once the next term drops below
    ``tolerance / 10``; the integral bound on the dropped terms is returned
    alongside the value.
    """
    _check_query(L, x, t)
    a = t * math.pi**2 / L**2
    if K is None:
        # first k with (2/L) exp(-a k^2) < tolerance / 10
        need = math.log(20.0 / (L * tolerance)) / a
        K = max(1, int(math.ceil(math.sqrt(max(need, 1.0)))))
    if K < 1:
        raise ValueError("K must be at least 1")
    k = np.arange(1, K + 1, dtype=float)
    terms = np.exp(-a * k * k) * np.sin(math.pi * k * x / L) ** 2
    return SeriesValue((2.0 / L) * math.fsum(terms), _spectral_tail(L, t, K))


def interval_kernel_lower_bound(L: float, x: float, t: float) -> float:
    """``(4 pi t)^{-1/2} (1 - exp(-x^2/t) - exp(-(L-x)^2/t))``."""
    _check_query(L, x, t)
    return (1.0 - math.exp(-x * x / t) - math.exp(-((L - x) ** 2) / t)) / math.sqrt(
        4.0 * math.pi * t
    )


def trace_interval(L: float, t: float) -> float:
    """``sum_{k>=1} exp(-t pi^2 k^2 / L^2)`` summed until terms underflow."""
    if not (L > 0 and t > 0):
        raise ValueError("L and t must be positive")
    a = t * math.pi**2 / L**2
    # terms below 1e-17 of the first one are invisible in double precision
    K = max(1, int(math.ceil(math.sqrt((a + 40.0) / a))))
    k = np.arange(1, K + 1, dtype=float)
    return math.fsum(np.exp(-a * k * k))


def trace_box(dims: Sequence[float], t: float) -> float:
    """Heat trace of the box ``prod_j (0, L_j)`` as a product of interval traces."""
    if len(dims) == 0:
        raise ValueError("box needs at least one side length")
    return math.prod(trace_interval(L, t) for L in dims)


def precision_for(t: float, margin: int = 30) -> int:
    """Decimal digits that resolve ``exp(-1/(2t))`` with ``margin`` digits to spare."""
    return int(math.ceil(1.0 / (2.0 * t * math.log(10.0)))) + margin


def trace_interval_precise(L: float, t: float, dps: int | None = None) -> mpmath.mpf:
    """Interval trace summed in ``dps``-digit arithmetic.

    Double precision cannot resolve exponentially small expansion residuals
    once ``exp(-1/(2t))`` drops below 1e-16; this route can.
    """
    if not (L > 0 and t > 0):
        raise ValueError("L and t must be positive")
    dps = precision_for(t) if dps is None else dps
    with mpmath.workdps(dps):
        a = mpmath.mpf(t) * mpmath.pi**2 / mpmath.mpf(L) ** 2
        K = int(math.ceil(math.sqrt((dps * math.log(10.0) + 10.0) / float(a)))) + 1
        return +mpmath.fsum(mpmath.exp(-a * k * k) for k in range(1, K + 1))


def trace_box_precise(dims: Sequence[float], t: float, dps: int | None = None) -> mpmath.mpf:
    if len(dims) == 0:
        raise ValueError("box needs at least one side length")
    dps = precision_for(t) if dps is None else dps
    with mpmath.workdps(dps):
        return +mpmath.fprod(trace_interval_precise(L, t, dps) for L in dims)


def expansion_residuals(t: float) -> tuple[float, float]:
    """Scaled residuals of the unit interval and unit square trace expansions.

    Returns ``|(4 pi t)^{1/2} Tr - (1 - sqrt(pi t))| e^{1/(2t)}`` and
    ``|(4 pi t) Tr - (1 - 2 sqrt(pi t) + pi t)| e^{1/(2t)}``.
    """
    dps = precision_for(t)
    with mpmath.workdps(dps):
        tm = mpmath.mpf(t)
        T = trace_interval_precise(1.0, t, dps)
        s = mpmath.sqrt(mpmath.pi * tm)
        w = mpmath.exp(1 / (2 * tm))
        r1 = abs(mpmath.sqrt(4 * mpmath.pi * tm) * T - (1 - s)) * w
        r2 = abs(4 * mpmath.pi * tm * T * T - (1 - 2 * s + mpmath.pi * tm)) * w
        return float(r1), float(r2)


def square_kernel_lower_bound(L: float, x: Sequence[float], t: float) -> float:
    """Pointwise lower bound for the Dirichlet kernel of ``(0, L)^2`` on the diagonal.

    Uses the reflected distances ``d(x_j) = min(x_j, L - x_j)``.  The result can
    be negative near the boundary.
    """
    x1, x2 = x
    if not (0 <= x1 <= L and 0 <= x2 <= L):
        raise ValueError(f"point {x} outside the closed square of side {L}")
    if not t > 0:
        raise ValueError("t must be positive")
    d1 = min(x1, L - x1)
    d2 = min(x2, L - x2)
    bracket = (
        1.0
        - math.exp(-d1 * d1 / t)
        - math.exp(-d2 * d2 / t)
        - 4.0 * math.exp(-L * L / (4.0 * t))
    )
    return bracket / (4.0 * math.pi * t)


def erf_tail(delta: float, t: float) -> ErfTail:
    """Gaussian tail ``sqrt(pi t)/2 - int_0^delta exp(-s^2/t) ds`` and its bound.

    The tail is integrated as ``exp(-delta^2/t) * int_0^inf exp(-(2 delta u + u^2)/t) du``
    so that relative accuracy survives when the tail underflows the absolute
    scale of the full integral.
    """
    if not (delta > 0 and t > 0):
        raise ValueError("delta and t must be positive")
    scale = t / (2.0 * delta)
    # substitute u = scale * v: integrand exp(-v - scale v^2 / (2 delta)) on (0, inf)
    c = scale / (2.0 * delta)
    inner, _err = integrate.quad(
        lambda v: math.exp(-v - c * v * v), 0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200
    )
    damping = math.exp(-delta * delta / t)
    return ErfTail(gap=damping * scale * inner, upper=scale * damping)
