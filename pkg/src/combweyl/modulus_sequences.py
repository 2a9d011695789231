"""From a vanishing modulus to a tooth-size sequence.

Pipeline: modulus ``G`` -> least concave nondecreasing majorant ``Gbar`` on a
grid -> mollified ``Gtilde(tau) = int phi(x) Gbar(tau x) dx`` with ``phi``
supported in (1, 2) -> ``Ghat = Gtilde + sqrt(tau)`` -> density
``h = Ghat' U(Ghat)`` -> inverse profile ``f`` -> sizes ``l_k = c0 f(k)``
and cutoff ``M(tau) = ceil(h(tau))``.

``Gbar`` is piecewise linear, so the mollification and its first two
derivatives reduce exactly to sums over the hinge points of ``Gbar`` in
``(tau, 2 tau)`` weighted by tail moments of ``phi``.
"""

from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy import integrate
from scipy.interpolate import PchipInterpolator

__all__ = [
    "Modulus",
    "PiecewiseLinear",
    "RegularizedModulus",
    "Density",
    "SequencePlan",
    "TailEstimate",
    "modulus_from_spec",
    "concave_majorant",
    "mollifier",
    "smooth_regularize",
    "build_density",
    "build_sequence",
    "M_of_tau",
    "verify_limits",
    "plan_to_json",
    "teeth_from_plan",
]

U_DELTA = 1e-6
BISECT_RTOL = 1e-12
_CHEB_DEGREE = 256
DEFAULT_GRID = np.geomspace(1e-16, 1.0 - 1e-12, 1601)


# -- modulus ------------------------------------------------------------------


@dataclass(frozen=True)
class Modulus:
    """Nonnegative function on (0, 1) vanishing at 0."""

    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    sup_norm: float
    name: str = "custom"

    def __call__(self, tau):
        return self.evaluator(np.asarray(tau, dtype=float))

    def vanishes_at_zero(self, floor: float = 1e-12, points: int = 12, rtol: float = 1e-2) -> bool:
        """Values on a shrinking grid are nonincreasing and end below ``rtol * sup``."""
        grid = np.geomspace(1e-1, floor, points)
        vals = self(grid)
        if np.any(vals < 0):
            return False
        return bool(np.all(np.diff(vals) <= 1e-15 * self.sup_norm) and vals[-1] < rtol * self.sup_norm)


def _closed_form(name: str) -> Modulus:
    if name == "sqrt":
        return Modulus(np.sqrt, 1.0, name)
    if name == "log-inverse":
        return Modulus(lambda t: 1.0 / (1.0 + np.log(1.0 / t)), 1.0, name)
    if name.startswith("power:"):
        p = float(name.split(":", 1)[1])
        if not p > 0:
            raise ValueError("power modulus needs p > 0")
        return Modulus(lambda t: t**p, 1.0, name)
    raise ValueError(f"unknown modulus {name!r}")


def _from_samples(tau: Sequence[float], values: Sequence[float], name: str) -> Modulus:
    tau = np.asarray(tau, dtype=float)
    values = np.asarray(values, dtype=float)
    if tau.ndim != 1 or len(tau) < 2 or np.any(np.diff(tau) <= 0):
        raise ValueError("modulus samples need at least two strictly increasing tau")
    if tau[0] <= 0 or tau[-1] > 1:
        raise ValueError("modulus samples must lie in (0, 1]")
    if np.any(values < 0):
        raise ValueError("modulus samples must be nonnegative")
    # anchor at the origin so the interpolant vanishes there; PCHIP keeps monotone data monotone
    interp = PchipInterpolator(np.concatenate([[0.0], tau]), np.concatenate([[0.0], values]))

    def ev(t: np.ndarray) -> np.ndarray:
        return np.maximum(interp(np.clip(t, 0.0, tau[-1])), 0.0)

    return Modulus(ev, float(values.max()), name)


def modulus_from_spec(spec: str | dict[str, Any]) -> Modulus:
    """Registry name (``sqrt``, ``log-inverse``, ``power:p``) or ``{"csv": path}``."""
    if isinstance(spec, str):
        return _closed_form(spec)
    if "name" in spec:
        return _closed_form(spec["name"])
    if "csv" in spec:
        with open(spec["csv"], newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        data = np.array([[float(a), float(b)] for a, b in rows])
        return _from_samples(data[:, 0], data[:, 1], str(spec["csv"]))
    if "samples" in spec:
        data = np.asarray(spec["samples"], dtype=float)
        return _from_samples(data[:, 0], data[:, 1], "samples")
    raise ValueError(f"cannot build a modulus from {spec!r}")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


# -- concave majorant ---------------------------------------------------------


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear function through ``knots``, constant to the right."""

    x: np.ndarray
    y: np.ndarray

    def __call__(self, s):
        return np.interp(np.asarray(s, dtype=float), self.x, self.y)

    @property
    def slopes(self) -> np.ndarray:
        """Slope on each piece, with a trailing 0 for the flat extension."""
        return np.append(np.diff(self.y) / np.diff(self.x), 0.0)


def concave_majorant(G: Modulus | Callable, grid: Sequence[float]) -> PiecewiseLinear:
    """Pointwise infimum of ``a tau + b`` (``a, b >= 0``) lying above ``G`` on ``grid``.

    This is the upper hull of the grid samples together with the origin,
    continued flat to the right of the maximum.
    """
    s = np.asarray(grid, dtype=float)
    if s.size == 0:
        raise ValueError("grid is empty")
    if np.any(np.diff(s) <= 0) or s[0] <= 0:
        raise ValueError("grid must be strictly increasing and positive")
    g = np.asarray(G(s), dtype=float)
    if np.any(~np.isfinite(g)):
        raise ValueError("G is not bounded on the grid")
    px = np.concatenate([[0.0], s])
    py = np.concatenate([[0.0], np.maximum(g, 0.0)])
    # nondecreasing: nothing after the (last) maximum matters
    stop = int(np.flatnonzero(py == py.max())[-1]) + 1
    px, py = px[:stop], py[:stop]
    hull: list[int] = []
    for i in range(len(px)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies on or below the chord a -> i
            cross = (px[b] - px[a]) * (py[i] - py[a]) - (py[b] - py[a]) * (px[i] - px[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    hx, hy = px[hull], py[hull]
    if hx[-1] < s[-1]:
        hx = np.append(hx, s[-1])
        hy = np.append(hy, hy[-1])
    return PiecewiseLinear(hx, hy)


# -- mollifier ----------------------------------------------------------------


def _bump(x: np.ndarray) -> np.ndarray:
    u = 2.0 * np.asarray(x, dtype=float) - 3.0
    out = np.zeros_like(u)
    m = np.abs(u) < 1
    out[m] = np.exp(-1.0 / (1.0 - u[m] ** 2))
    return out


@dataclass(frozen=True)
class _Mollifier:
    mass: float
    coef0: np.ndarray
    coef1: np.ndarray
    m1: float

    def phi(self, x):
        return _bump(x) / self.mass

    def psi0(self, u):
        """``int_u^2 phi``."""
        return cheb.chebval(2.0 * np.clip(u, 1.0, 2.0) - 3.0, self.coef0)

    def psi1(self, u):
        """``int_u^2 x phi(x) dx``."""
        return cheb.chebval(2.0 * np.clip(u, 1.0, 2.0) - 3.0, self.coef1)


@functools.cache
def mollifier() -> _Mollifier:
    """Normalized bump on (1, 2) with Chebyshev-integrated tail moments."""
    n = _CHEB_DEGREE
    nodes = np.cos(np.pi * (np.arange(n + 1) + 0.5) / (n + 1))
    x = 1.5 + 0.5 * nodes
    b = _bump(x)
    out = []
    for w in (b, x * b):
        c = cheb.chebfit(nodes, w, n)
        # antiderivative in the x variable, pinned to vanish at x = 2 (u = 1)
        ci = cheb.chebint(c, lbnd=1.0, scl=-0.5)
        out.append(ci)
    c0, c1 = out
    mass = float(cheb.chebval(-1.0, c0))
    return _Mollifier(mass, c0 / mass, c1 / mass, float(cheb.chebval(-1.0, c1)) / mass)


# -- regularization -----------------------------------------------------------


@dataclass(frozen=True)
class RegularizedModulus:
    """``Ghat = Gtilde + sqrt(tau)`` with exact derivatives."""

    majorant: PiecewiseLinear
    window: int = field(repr=False)

    def _tilde_jet(self, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(Gtilde, Gtilde', Gtilde'')`` in one pass over the hinge knots."""
        mol = mollifier()
        x, y = self.majorant.x, self.majorant.y
        slopes = self.majorant.slopes
        # hinge jumps at interior knots and at the final knot (start of the flat part)
        dbeta = np.diff(slopes)
        knots = x[1:]
        idx = np.searchsorted(x, tau, side="right") - 1
        beta = slopes[np.clip(idx, 0, len(slopes) - 1)]
        base = np.interp(tau, x, y)
        # hinge knots strictly inside (tau, 2 tau)
        lo = np.searchsorted(knots, tau, side="right")
        cols = lo[:, None] + np.arange(self.window)[None, :]
        valid = cols < len(knots)
        cols = np.minimum(cols, len(knots) - 1)
        s = knots[cols]
        valid &= s < 2.0 * tau[:, None]
        rows = np.nonzero(valid)[0]
        s, db = s[valid], dbeta[cols[valid]]
        u = s / tau[rows]
        # moments only where a hinge is live; the Chebyshev sums dominate the cost
        p0, p1 = mol.psi0(u), mol.psi1(u)
        n = len(tau)
        h0 = np.bincount(rows, db * (tau[rows] * p1 - s * p0), minlength=n)
        h1 = np.bincount(rows, db * p1, minlength=n)
        h2 = np.bincount(rows, db * u * u * mol.phi(u), minlength=n)
        return base + beta * tau * (mol.m1 - 1.0) + h0, beta * mol.m1 + h1, h2 / tau

    def gtilde(self, tau):
        return self._tilde_jet(np.atleast_1d(np.asarray(tau, dtype=float)))[0]

    def gtilde_d1(self, tau):
        return self._tilde_jet(np.atleast_1d(np.asarray(tau, dtype=float)))[1]

    def gtilde_d2(self, tau):
        return self._tilde_jet(np.atleast_1d(np.asarray(tau, dtype=float)))[2]

    def jet(self, tau) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(Ghat, Ghat', Ghat'')``."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        g, g1, g2 = self._tilde_jet(tau)
        r = np.sqrt(tau)
        return g + r, g1 + 0.5 / r, g2 - 0.25 / (tau * r)

    def __call__(self, tau):
        return self.jet(tau)[0]

    def d1(self, tau):
        return self.jet(tau)[1]

    def d2(self, tau):
        return self.jet(tau)[2]

    @property
    def sup_norm(self) -> float:
        """``Ghat`` is nondecreasing, so its sup over (0, 1) is the value at 1."""
        return float(self(1.0)[0])


def smooth_regularize(majorant: PiecewiseLinear) -> RegularizedModulus:
    """Mollify a concave nondecreasing piecewise-linear ``Gbar`` and add ``sqrt(tau)``."""
    x = majorant.x
    if np.any(np.diff(majorant.y) < -1e-15 * max(1.0, abs(majorant.y).max())):
        raise ValueError("majorant must be nondecreasing")
    sl = majorant.slopes[:-1]
    if np.any(np.diff(sl) > 1e-9 * max(1.0, abs(sl).max())):
        raise ValueError("majorant must be concave")
    knots = x[1:]
    # widest count of knots inside any (tau, 2 tau)
    right = np.searchsorted(knots, 2.0 * knots, side="left")
    window = int(max(1, (right - np.arange(len(knots))).max()))
    return RegularizedModulus(majorant, window)


def gtilde_by_quadrature(reg: RegularizedModulus, tau: float, order: int = 0) -> tuple[float, float]:
    """Independent route: quadrature of ``phi``, ``phi'`` or ``phi''`` against ``Gbar``.

    Returns ``(value, error estimate)``; raises if quad cannot reach 1e-12.
    """
    mol = mollifier()
    gb = reg.majorant

    def phid(x: float, k: int) -> float:
        u = 2.0 * x - 3.0
        if abs(u) >= 1:
            return 0.0
        q = 1.0 - u * u
        p = math.exp(-1.0 / q) / mol.mass
        # derivatives of exp(-1/q(u)) in x (du/dx = 2)
        g1 = -2.0 * u / q**2
        if k == 1:
            return 2.0 * p * g1
        g2 = (-2.0 * q**2 - 8.0 * u * u * q) / q**4
        return 4.0 * p * (g1 * g1 + g2)

    if order == 0:
        w = lambda x: mol.phi(np.array([x]))[0]
        scale = 1.0
    elif order == 1:
        w = lambda x: -(mol.phi(np.array([x]))[0] + x * phid(x, 1))
        scale = 1.0 / tau
    elif order == 2:
        w = lambda x: 2.0 * mol.phi(np.array([x]))[0] + 4.0 * x * phid(x, 1) + x * x * phid(x, 2)
        scale = 1.0 / tau**2
    else:
        raise ValueError("order must be 0, 1 or 2")
    pts = [k / tau for k in gb.x if tau < k < 2 * tau][:50]
    val, err = integrate.quad(lambda x: w(x) * float(gb(tau * x)), 1.0, 2.0, points=pts or None, limit=500, epsabs=1e-14, epsrel=1e-13)
    if err > 1e-12 * max(1.0, abs(val)):
        raise ArithmeticError(f"mollification quadrature error estimate {err:g}")
    return scale * val, scale * err


# -- density ------------------------------------------------------------------


@dataclass(frozen=True)
class Density:
    """``h(tau) = Ghat'(tau) U(Ghat(tau))`` with ``U(y) = 1/(y log(e^2 |Ghat| / y)^2)``."""

    ghat: RegularizedModulus
    norm: float

    def U(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if np.any(y <= 0) or np.any(y >= self.norm * math.exp(2.0 - U_DELTA)):
            raise ValueError("U evaluated outside (0, |Ghat| e^(2-delta))")
        L = np.log(math.e**2 * self.norm / y)
        return 1.0 / (y * L * L)

    def U_d1(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        L = np.log(math.e**2 * self.norm / y)
        return (2.0 / L - 1.0) / (y * y * L * L)

    def __call__(self, tau):
        g, g1, _ = self.ghat.jet(tau)
        return g1 * self.U(g)

    def integral(self, tau):
        """``int_0^tau h = 1 / log(e^2 |Ghat| / Ghat(tau))``."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        return 1.0 / np.log(math.e**2 * self.norm / self.ghat(tau))

    def moment1(self, tau: float) -> float:
        """``int_0^tau x h(x) dx = tau F(tau) - int_0^tau F``."""
        F = self.integral
        inner, err = integrate.quad(lambda s: float(F(tau * s)[0]), 0.0, 1.0, limit=400, epsabs=1e-15, epsrel=1e-12)
        return tau * (float(F(tau)[0]) - inner)

    def integral_by_quadrature(self, a: float, b: float, width: float = 0.1, nodes: int = 30) -> tuple[float, float]:
        """``int_a^b h`` by composite Gauss-Legendre in ``log tau``.

        ``h`` is smooth (each hinge enters through the flat end of the bump),
        so fixed panels suffice.  The error estimate is the change on halving
        the panel width.  Returns ``(value, error estimate)``.
        """
        if not 0 < a < b:
            raise ValueError("need 0 < a < b")
        x, w = np.polynomial.legendre.leggauss(nodes)
        lo, hi = math.log(a), math.log(b)

        def composite(n: int) -> float:
            edges = np.linspace(lo, hi, n + 1)
            half = 0.5 * np.diff(edges)
            s = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half[:, None] * x[None, :]
            tau = np.exp(s.ravel())
            vals = (self(tau) * tau).reshape(s.shape)
            return math.fsum((half[:, None] * w[None, :] * vals).ravel())

        n = max(1, int(math.ceil((hi - lo) / width)))
        coarse, fine = composite(n), composite(2 * n)
        return fine, abs(fine - coarse)

    def jet(self, tau) -> tuple[np.ndarray, np.ndarray]:
        """``(h, h')`` with ``h' = Ghat'' U(Ghat) + Ghat'^2 U'(Ghat)``."""
        g, g1, g2 = self.ghat.jet(tau)
        u = self.U(g)
        return g1 * u, g2 * u + g1 * g1 * self.U_d1(g)

    def d1(self, tau):
        return self.jet(tau)[1]

    def inverse(self, y, rtol: float = BISECT_RTOL) -> np.ndarray:
        """``f(y) = h^{-1}(y)`` for ``y > h(1)``, else 1.

        Newton in ``log tau`` on ``log h``, safeguarded by a bisection bracket.
        """
        y = np.atleast_1d(np.asarray(y, dtype=float))
        h1 = float(self(1.0)[0])
        out = np.ones_like(y)
        m = y > h1
        if not np.any(m):
            return out
        target = np.log(y[m])
        xhi = np.zeros_like(target)
        xlo = np.full_like(target, math.log(0.5))
        # step down until h(lo) >= y (h is decreasing)
        for _ in range(200):
            need = np.log(self(np.exp(xlo))) < target
            if not np.any(need):
                break
            xhi = np.where(need, xlo, xhi)
            xlo = np.where(need, xlo - 4.0, xlo)
            if xlo.min() < math.log(1e-300):
                raise ArithmeticError("density is numerically flat; cannot bracket the inverse")
        x = 0.5 * (xlo + xhi)
        for _ in range(200):
            tau = np.exp(x)
            hv, hd = self.jet(tau)
            g = np.log(hv) - target
            xlo = np.where(g >= 0, x, xlo)
            xhi = np.where(g >= 0, xhi, x)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = -g / (tau * hd / hv)
            xn = x + step
            converged = np.abs(step) <= 0.1 * rtol
            bad = ~np.isfinite(xn) | (((xn < xlo) | (xn > xhi)) & ~converged)
            xn = np.where(bad, 0.5 * (xlo + xhi), xn)
            done = (converged & ~bad) | (xhi - xlo <= rtol)
            x = xn
            if np.all(done):
                break
        else:
            raise ArithmeticError("root finding for h^{-1} did not converge")
        out[m] = np.exp(x)
        return out


def build_density(reg: RegularizedModulus) -> Density:
    return Density(reg, reg.sup_norm)


# -- sequence -----------------------------------------------------------------


class TailEstimate(tuple):
    """``(midpoint, half_width)`` of an integral bracket."""

    __slots__ = ()

    def __new__(cls, mid: float, half: float):
        return super().__new__(cls, (mid, half))

    @property
    def mid(self) -> float:
        return self[0]

    @property
    def half(self) -> float:
        return self[1]


_DIRECT_TERMS = 256


@dataclass(frozen=True)
class SequencePlan:
    density: Density
    sizes: np.ndarray
    c0: float
    A: float
    tail_f: TailEstimate
    tail_f2: TailEstimate
    flags: tuple[str, ...] = ()

    @property
    def K(self) -> int:
        return len(self.sizes)

    def f(self, y):
        return self.density.inverse(y)

    def f_tail(self, M: int) -> tuple[TailEstimate, TailEstimate]:
        """Brackets for ``sum_{k>=M} f(k)`` and ``sum_{k>=M} f(k)^2``."""
        return _f_tails(self.density, M)

    def tail_sums(self, M: int) -> tuple[float, float]:
        """``(sum_{k>=M} l_k, sum_{k>=M} l_k^2)`` at bracket midpoints."""
        s1, s2 = self.f_tail(M)
        return self.c0 * s1.mid, self.c0**2 * s2.mid


def _integral_tail(d: Density, Y: float) -> tuple[float, float]:
    """``int_Y^inf f`` and ``int_Y^inf f^2`` for ``Y > h(1)``."""
    tau = float(d.inverse(Y)[0])
    i1 = float(d.integral(tau)[0]) - Y * tau
    i2 = 2.0 * d.moment1(tau) - Y * tau * tau
    return i1, i2


def _f_tails(d: Density, M: int) -> tuple[TailEstimate, TailEstimate]:
    if M < 1:
        raise ValueError("M must be at least 1")
    h1 = float(d(1.0)[0])
    # below h(1) the profile is identically 1; sum those terms exactly
    start = max(M, int(math.floor(h1)) + 1)
    flat = start - M
    ks = np.arange(start, start + _DIRECT_TERMS, dtype=float)
    fk = d.inverse(ks)
    Y = start + _DIRECT_TERMS
    i1, i2 = _integral_tail(d, Y)
    fY = float(d.inverse(Y)[0])
    # int_Y f <= sum_{k>=Y} f(k) <= f(Y) + int_Y f
    s1 = TailEstimate(flat + math.fsum(fk) + i1 + fY / 2, fY / 2)
    s2 = TailEstimate(flat + math.fsum(fk * fk) + i2 + fY * fY / 2, fY * fY / 2)
    return s1, s2


def build_sequence(density: Density, A: float, K: int) -> SequencePlan:
    """``l_k = c0 f(k)`` for ``k = 1..K`` with ``c0`` fixed by ``sum_k l_k = A``."""
    if not A > 0:
        raise ValueError("A must be positive")
    if K < 1:
        raise ValueError("K must be at least 1")
    f = density.inverse(np.arange(1, K + 1, dtype=float))
    t1, t2 = _f_tails(density, K + 1)
    total = math.fsum(f) + t1.mid
    c0 = A / total
    sizes = c0 * f
    if np.any(np.diff(sizes) > 0):
        raise ArithmeticError("computed sizes are not non-increasing")
    flags = []
    if A > 1:
        flags.append("sum of sizes exceeds 1: not admissible as comb teeth")
    if c0 * t1.half > 1e-10 * A:
        flags.append(f"normalization uncertainty {c0 * t1.half:g} above 1e-10 A")
    return SequencePlan(density, sizes, c0, A, t1, t2, tuple(flags))


def M_of_tau(plan: SequencePlan | Density, tau) -> np.ndarray | int:
    """Smallest integer ``>= h(tau)``."""
    d = plan.density if isinstance(plan, SequencePlan) else plan
    scalar = np.ndim(tau) == 0
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any((tau <= 0) | (tau >= 1)):
        raise ValueError("tau must lie in (0, 1)")
    out = np.ceil(d(tau)).astype(np.int64)
    return int(out[0]) if scalar else out


def _limits_row(plan: SequencePlan, G: Modulus, tau: float, rtol: float) -> dict:
    M = M_of_tau(plan, tau)
    s1, s2 = plan.f_tail(M)
    if s1.half > rtol * s1.mid or s2.half > rtol * s2.mid:
        raise ArithmeticError(f"tail bracket too wide at tau={tau}: {s1}, {s2}")
    S1 = plan.c0 * s1.mid
    S2 = plan.c0**2 * s2.mid
    g = float(G(tau))
    return {
        "tau": tau,
        "M": M,
        "tail_l1": S1,
        "tail_l2": S2,
        "ratio1": S1 / g if g > 0 else math.inf,
        "ratio2": (tau * M + S2 / tau) / S1,
        "rel_uncertainty": max(s1.half / s1.mid, s2.half / s2.mid),
    }


def verify_limits(plan: SequencePlan, G: Modulus, taus: Sequence[float], rtol: float = 1e-3, jobs: int = 1) -> list[dict]:
    """Ratio table sorted by decreasing ``tau``."""
    taus = sorted((float(t) for t in taus), reverse=True)
    if jobs > 1 and len(taus) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as ex:
            rows = list(ex.map(lambda t: _limits_row(plan, G, t, rtol), taus))
    else:
        rows = [_limits_row(plan, G, t, rtol) for t in taus]
    return rows


# -- export -------------------------------------------------------------------


def plan_to_json(plan: SequencePlan) -> dict[str, Any]:
    return {
        "kind": "pipeline",
        "c0": plan.c0,
        "A": plan.A,
        "sizes": [float(v) for v in plan.sizes],
        "tail": {
            "f1": list(plan.tail_f),
            "f2": list(plan.tail_f2),
            "l1": plan.c0 * plan.tail_f.mid,
            "l2": plan.c0**2 * plan.tail_f2.mid,
        },
        "flags": list(plan.flags),
    }


def teeth_from_plan(plan: SequencePlan | dict[str, Any], anchors: Any = "cumulative", count: int | None = None):
    """Tooth sequence for ``comb_domain`` from a plan or its JSON export.

    Only the first ``count`` sizes become teeth (all stored ones by default).
    Tail sums beyond the stored prefix use the plan's integral brackets.
    """
    from .comb_domain import ToothSequence, _anchors

    if isinstance(plan, SequencePlan):
        doc = plan_to_json(plan)
        live = plan
    else:
        doc = plan
        live = None
    sizes = [float(v) for v in doc["sizes"]]
    if count is not None:
        sizes = sizes[:count]
    K = len(doc["sizes"])
    stored = np.asarray(doc["sizes"], dtype=float)
    tl1, tl2 = float(doc["tail"]["l1"]), float(doc["tail"]["l2"])

    def tail(M: int) -> tuple[float, float]:
        if M <= K + 1:
            rest = stored[M - 1 :]
            return math.fsum(rest) + tl1, math.fsum(rest * rest) + tl2
        if live is not None:
            return live.tail_sums(M)
        raise ValueError(f"plan export stores {K} sizes; tail from M={M} needs the live plan")

    return ToothSequence(
        tuple(sizes),
        _anchors(sizes, anchors),
        kind="pipeline",
        finite=False,
        tail=tail,
        params={"c0": doc["c0"], "A": doc["A"]},
    )


def build_plan(modulus: Modulus, A: float, K: int, grid: Sequence[float] | None = None) -> SequencePlan:
    """Full pipeline from a modulus."""
    gbar = concave_majorant(modulus, DEFAULT_GRID if grid is None else grid)
    return build_sequence(build_density(smooth_regularize(gbar)), A, K)


def write_plan(plan: SequencePlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan_to_json(plan), indent=2, sort_keys=True) + "\n")
