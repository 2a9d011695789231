"""Spectral functionals on computed spectra and the two-term predictions.

Counting function, Riesz means, heat trace with a certified tail, Weyl and
corner-term predictions, the normalized remainder ``E_M(t)``, the Laplace
identity linking Riesz means to the heat trace, and the report-only tables
(convex-domain constant, counterexample ratio).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from .comb_domain import CombPolygon
from .fd_spectrum import Spectrum

__all__ = [
    "WeylConstants",
    "TraceSeries",
    "RemainderSample",
    "counting",
    "riesz_mean",
    "heat_trace",
    "weyl_riesz",
    "weyl_heat",
    "corner_sum",
    "corner_expansion",
    "remainder_E",
    "remainder_lower_bound",
    "remainder_samples",
    "laplace_check",
    "convex_remainder_report",
    "counterexample_ratio",
]

TAIL_SAFETY = 2.0


class OutOfRangeError(ValueError):
    """Requested point lies beyond the certified part of a spectrum."""


@dataclass(frozen=True)
class WeylConstants:
    dimension: int
    gamma: float = 0.0

    @property
    def omega(self) -> float:
        """Volume of the unit ball in dimension ``d``."""
        d = self.dimension
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1)

    @staticmethod
    def L(gamma: float, d: int) -> float:
        return math.gamma(gamma + 1) / ((4 * math.pi) ** (d / 2) * math.gamma(gamma + 1 + d / 2))

    @property
    def leading(self) -> float:
        return self.L(self.gamma, self.dimension)

    @property
    def boundary(self) -> float:
        return self.L(self.gamma, self.dimension - 1)


@dataclass(frozen=True)
class TraceSeries:
    t: np.ndarray
    trace: np.ndarray
    tail: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (len(self.t) == len(self.trace) == len(self.tail)):
            raise ValueError("t, trace and tail must have equal length")
        if np.any(self.tail < 0):
            raise ValueError("tail bounds must be nonnegative")


@dataclass(frozen=True)
class RemainderSample:
    t: float
    value: float
    lower_bound: float
    budget: float

    @property
    def slack(self) -> float:
        return self.value - self.lower_bound

    @property
    def certified(self) -> bool:
        return self.budget < self.slack

    @property
    def verdict(self) -> str:
        if not self.certified:
            return "inconclusive"
        return "pass" if self.value - self.budget >= self.lower_bound else "fail"


def _certified_limit(spec: Spectrum) -> float:
    return math.inf if spec.complete else float(spec.values[-1])


def counting(spec: Spectrum, lam: float) -> int:
    """``#{k : lambda_k < lam}``."""
    if lam > _certified_limit(spec):
        raise OutOfRangeError(f"lambda={lam} beyond certified range {_certified_limit(spec)}")
    return int(np.searchsorted(spec.values, lam, side="left"))


def riesz_mean(spec: Spectrum, lam: float, gamma: float) -> float:
    """``sum_{lambda_k < lam} (lam - lambda_k)^gamma``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    n = counting(spec, lam)
    if gamma == 0:
        return float(n)
    return math.fsum((lam - spec.values[:n]) ** gamma)


def _tail_envelope(spec: Spectrum, t: float) -> float:
    # t * int_{lam_N}^{Lambda} Nbar e^{-t lam} dlam + dim e^{-t Lambda} - N e^{-t lam_N}
    # with Nbar(lam) = min(dim, 2 |Omega| lam / (4 pi)) bounding the count above
    lam_n = float(spec.values[-1])
    top = spec.upper_bound if spec.upper_bound is not None else math.inf
    dim = spec.dimension if spec.dimension is not None else math.inf
    if spec.area is None:
        raise ValueError("tail model needs the domain area")
    slope = TAIL_SAFETY * spec.area / (4 * math.pi)
    knee = min(top, dim / slope if math.isfinite(dim) else math.inf)

    def ramp(a: float, b: float) -> float:
        # t * int_a^b slope * lam * e^{-t lam} dlam
        if b <= a:
            return 0.0
        fa = (a + 1 / t) * math.exp(-t * a)
        fb = 0.0 if math.isinf(b) else (b + 1 / t) * math.exp(-t * b)
        return slope * (fa - fb)

    total = ramp(lam_n, knee)
    if math.isfinite(dim) and knee < top:
        total += dim * (math.exp(-t * knee) - (math.exp(-t * top) if math.isfinite(top) else 0.0))
    if math.isfinite(dim) and math.isfinite(top):
        total += dim * math.exp(-t * top)
    total -= spec.count * math.exp(-t * lam_n)
    return max(total, 0.0)


def heat_trace(spec: Spectrum, t: float) -> tuple[float, float]:
    """``(sum_{k<=N} exp(-t lambda_k), tail bound)``.

    The true trace of the discrete operator lies in ``[value, value + tail]``.
    Complete spectra have no tail.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    value = math.fsum(np.exp(-t * spec.values))
    if spec.complete:
        return value, 0.0
    return value, _tail_envelope(spec, t)


def weyl_riesz(c: WeylConstants, volume: float, surface: float, lam: float) -> float:
    """Two-term Riesz-mean prediction at ``lam``."""
    d, g = c.dimension, c.gamma
    return c.leading * volume * lam ** (g + d / 2) - c.boundary / 4 * surface * lam ** (g + (d - 1) / 2)


def weyl_heat(d: int, volume: float, surface: float, t: float) -> float:
    """``(4 pi t)^{-d/2} (|Omega| - sqrt(pi t)/2 H^{d-1})``."""
    return (4 * math.pi * t) ** (-d / 2) * (volume - math.sqrt(math.pi * t) / 2 * surface)


def corner_sum(angles: Sequence[float]) -> float:
    """``sum_j (pi^2 - alpha_j^2) / (2 alpha_j)``."""
    out = []
    for a in angles:
        if not 0 < a < 2 * math.pi:
            raise ValueError(f"corner angle {a} outside (0, 2 pi)")
        out.append((math.pi**2 - a * a) / (2 * a))
    return math.fsum(out)


def corner_expansion(polygon: CombPolygon, t: float) -> float:
    """Three-term heat trace of a polygon (straight edges, so no curvature term)."""
    return (
        polygon.area
        - math.sqrt(math.pi * t) / 2 * polygon.perimeter
        + t / 3 * corner_sum(polygon.corners)
    ) / (4 * math.pi * t)


def remainder_E(trace: float, t: float, area: float, perimeter: float) -> float:
    """``4 pi t Tr - |Omega| + sqrt(pi t)/2 H^1``."""
    return 4 * math.pi * t * trace - area + math.sqrt(math.pi * t) / 2 * perimeter


def remainder_lower_bound(M: int, area: float, t: float) -> float:
    """``-(M + 4 |Omega_M| - 1) t``."""
    return -(M + 4 * area - 1) * t


def remainder_samples(
    series: TraceSeries,
    M: int,
    area: float,
    perimeter: float,
    discretization: Sequence[float] | None = None,
) -> list[RemainderSample]:
    """``E_M`` with its lower bound and error budget at each ``t`` of ``series``.

    The budget adds the discretization error of the trace (if given) and the
    tail bound, both scaled by ``4 pi t``.
    """
    disc = np.zeros(len(series.t)) if discretization is None else np.asarray(discretization)
    out = []
    for t, tr, tail, dz in zip(series.t, series.trace, series.tail, disc):
        # the tail only raises the trace, so the midpoint halves the bracket
        value = remainder_E(tr + tail / 2, t, area, perimeter)
        budget = 4 * math.pi * t * (abs(dz) + tail / 2)
        out.append(RemainderSample(float(t), value, remainder_lower_bound(M, area, t), budget))
    return out


def laplace_check(spec: Spectrum, gamma: float, t: float, tol: float = 1e-10) -> tuple[float, float, float]:
    """Both sides of ``Tr e^{-t A} = t^{1+g}/Gamma(1+g) int_0^inf R_g(lam) e^{-t lam} dlam``.

    The right side is integrated by adaptive quadrature between consecutive
    eigenvalues (where the Riesz mean is smooth) up to the last one, plus the
    closed-form tail beyond it.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    ev = np.sort(np.asarray(spec.values, dtype=float))
    lhs = math.fsum(np.exp(-t * ev))
    knots = np.unique(ev)

    def R(lam: float) -> float:
        d = lam - ev[ev < lam]
        return float(len(d)) if gamma == 0 else math.fsum(d**gamma)

    pieces = []
    err = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        val, e = integrate.quad(lambda x: R(x) * math.exp(-t * x), a, b, epsabs=tol * 1e-3, epsrel=1e-13, limit=200)
        pieces.append(val)
        err += e
    # beyond the last eigenvalue every term is (lam - lam_k)^g: closed form per eigenvalue
    lam_n = knots[-1]
    tail_terms = []
    for lk in ev:
        # int_{lam_n}^inf (lam - lk)^g e^{-t lam} dlam = e^{-t lk} Gamma(g+1, t (lam_n - lk)) / t^{g+1}
        upper = special.gammaincc(gamma + 1, t * (lam_n - lk)) if lam_n > lk else 1.0
        tail_terms.append(math.exp(-t * lk) * upper * math.gamma(gamma + 1) / t ** (gamma + 1))
    integral = math.fsum(pieces) + math.fsum(tail_terms)
    rhs = t ** (1 + gamma) / math.gamma(1 + gamma) * integral
    if err * t ** (1 + gamma) > 100 * tol * max(1.0, abs(lhs)):
        raise ArithmeticError(f"quadrature error estimate {err:g} exceeds tolerance")
    return lhs, rhs, abs(lhs - rhs)


def convex_remainder_report(
    spec: Spectrum,
    area: float,
    perimeter: float,
    inradius: float,
    lam_grid: Sequence[float],
    convex: bool = True,
    d: int = 2,
) -> list[dict]:
    """Implied constant of the uniform convex-domain bound at each ``lam``.

    Reports ``|R_1(lam) - two-term| / (H^{d-1} lam^{1+(d-1)/2} (r sqrt(lam))^{-1/11})``.
    Nothing is asserted; the constant is not known.
    """
    if not convex:
        raise ValueError("the uniform remainder bound applies to convex domains only")
    c = WeylConstants(d, 1.0)
    rows = []
    for lam in lam_grid:
        lam = float(lam)
        r1 = riesz_mean(spec, lam, 1.0)
        pred = weyl_riesz(c, area, perimeter, lam)
        denom = perimeter * lam ** (1 + (d - 1) / 2) * (inradius * math.sqrt(lam)) ** (-1 / 11)
        rows.append({"lambda": lam, "riesz1": r1, "two_term": pred, "ratio": abs(r1 - pred) / denom})
    return rows


def counterexample_ratio(
    series: TraceSeries,
    area: float,
    perimeter: float,
    g: Callable[[float], float],
    discretization: Sequence[float] | None = None,
) -> list[dict]:
    """``((4 pi t) Tr - |Omega| + sqrt(pi t)/2 H^1) / (sqrt(t) g(t))`` per ``t``.

    Entries whose error bar exceeds the ratio magnitude are flagged
    inconclusive.
    """
    disc = np.zeros(len(series.t)) if discretization is None else np.asarray(discretization)
    rows = []
    for t, tr, tail, dz in zip(series.t, series.trace, series.tail, disc):
        gt = g(float(t))
        if not gt > 0:
            raise ValueError(f"g must be positive on the t grid (g({t}) = {gt})")
        num = remainder_E(tr + tail / 2, t, area, perimeter)
        scale = math.sqrt(t) * gt
        err = 4 * math.pi * t * (abs(dz) + tail / 2) / scale
        ratio = num / scale
        rows.append(
            {"t": float(t), "ratio": ratio, "error": err, "inconclusive": bool(err > abs(ratio))}
        )
    return rows
