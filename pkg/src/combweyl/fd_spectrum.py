"""Five-point finite differences for the Dirichlet Laplacian on comb polygons.

Grids are aligned with the tooth geometry: every tooth anchor and half-width
must be a multiple of the spacing, so the 45-degree edges run exactly through
grid diagonals and no node is ambiguous.  Nodes on the boundary are excluded.

Besides the low end of the spectrum, :func:`discrete_heat_trace` evaluates
``Tr exp(-t A_h)`` exactly (to contour-quadrature accuracy) by splitting the
operator into the base square, diagonalised by sine transforms, and the
nodes above it, folded in through a Schur complement.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .comb_domain import CombPolygon

__all__ = [
    "AlignmentError",
    "ConvergenceError",
    "GridOperator",
    "Spectrum",
    "aligned_spacing",
    "discretize",
    "lowest_eigenvalues",
    "refine_extrapolate",
    "discrete_heat_trace",
    "discrete_square_eigenvalues",
    "SpectrumCache",
]

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
CLUSTER_RTOL = 1e-8


class AlignmentError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residuals: np.ndarray):
        super().__init__(message)
        self.residuals = residuals


def _dyadic_exponent(value: float) -> int | None:
    frac = Fraction(value).limit_denominator(2**40)
    if abs(float(frac) - value) > 1e-12 * max(1.0, abs(value)):
        return None
    den = frac.denominator
    if den & (den - 1):
        return None
    return den.bit_length() - 1


def aligned_spacing(polygon: CombPolygon) -> float | None:
    """Largest dyadic spacing that puts every tooth corner on the grid."""
    coords = [polygon.side]
    for lk, ck in polygon.teeth:
        coords += [ck, 0.5 * lk]
    exps = [_dyadic_exponent(c) for c in coords]
    if any(e is None for e in exps):
        return None
    return 2.0 ** -max(exps)


@dataclass(frozen=True, eq=False)
class GridOperator:
    """``-Delta_h`` restricted to grid nodes strictly inside the polygon.

    ``nodes`` holds integer grid indices ``(i, j)`` of the unknowns, ordered
    row by row from the bottom, so the base-square rows come first.
    """

    h: float
    nodes: np.ndarray
    polygon: CombPolygon
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.nodes)

    @property
    def upper_bound(self) -> float:
        """Gershgorin bound on the spectrum."""
        return 8.0 / self.h**2

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    @property
    def square_count(self) -> int:
        n = int(round(self.polygon.side / self.h))
        return (n - 1) ** 2


def discretize(polygon: CombPolygon, h: float) -> GridOperator:
    """Assemble the 5-point operator on all nodes strictly inside ``polygon``."""
    step = aligned_spacing(polygon)
    if step is None:
        raise AlignmentError("tooth coordinates are not dyadic; no aligned grid exists")
    ratio = step / h
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise AlignmentError(f"spacing {h} is not aligned; the coarsest aligned spacing is {step}")
    n = int(round(polygon.side / h))
    xs = np.arange(1, n) * h
    heights = polygon.height(xs)
    # number of rows strictly below the profile
    rows = np.ceil(heights / h - 1e-9).astype(int) - 1
    top = int(rows.max())
    ii, jj = [], []
    for j in range(1, top + 1):
        cols = np.nonzero(rows >= j)[0] + 1
        ii.append(cols)
        jj.append(np.full(len(cols), j))
    ii = np.concatenate(ii)
    jj = np.concatenate(jj)
    nodes = np.stack([ii, jj], axis=1)

    index = -np.ones((n + 1, top + 2), dtype=np.int64)
    index[ii, jj] = np.arange(len(ii))
    data, r, c = [np.full(len(ii), 4.0 / h**2)], [np.arange(len(ii))], [np.arange(len(ii))]
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = index[ii + di, jj + dj]
        ok = nb >= 0
        r.append(np.nonzero(ok)[0])
        c.append(nb[ok])
        data.append(np.full(int(ok.sum()), -1.0 / h**2))
    A = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(r), np.concatenate(c))), shape=(len(ii), len(ii))
    )
    return GridOperator(h=h, nodes=nodes, polygon=polygon, matrix=A)


def _domain_hash(polygon: CombPolygon) -> str:
    payload = json.dumps({"side": polygon.side, "teeth": [list(t) for t in polygon.teeth]})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Sorted low end of a Dirichlet spectrum.

    ``dimension`` is the size of the operator the values came from; when it
    equals the number of stored values the spectrum is complete.  ``area`` and
    ``perimeter`` feed the heat-trace tail model.
    """

    eigenvalues: np.ndarray
    residuals: np.ndarray
    h: float | None = None
    dimension: int | None = None
    area: float | None = None
    perimeter: float | None = None
    upper_bound: float | None = None
    domain_hash: str = ""
    extrapolated: np.ndarray | None = None
    errors: np.ndarray | None = None
    flags: np.ndarray | None = None

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "Spectrum":
        """A complete toy spectrum with no discretization attached."""
        ev = np.sort(np.asarray(values, dtype=float))
        return cls(ev, np.zeros_like(ev), dimension=len(ev))

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    @property
    def complete(self) -> bool:
        return self.dimension is not None and self.dimension == self.count

    @property
    def values(self) -> np.ndarray:
        """Extrapolated values when present, raw values otherwise."""
        return self.extrapolated if self.extrapolated is not None else self.eigenvalues

    def clusters(self, rtol: float = CLUSTER_RTOL) -> list[tuple[float, int]]:
        """``(mean value, multiplicity)`` for groups within relative ``rtol``."""
        out: list[list[float]] = []
        for v in self.eigenvalues:
            if out and abs(v - out[-1][-1]) <= rtol * abs(v):
                out[-1].append(v)
            else:
                out.append([v])
        return [(float(np.mean(g)), len(g)) for g in out]

    def to_json(self) -> dict:
        return {
            "domainHash": self.domain_hash,
            "h": self.h,
            "dimension": self.dimension,
            "area": self.area,
            "perimeter": self.perimeter,
            "upperBound": self.upper_bound,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residuals": [float(v) for v in self.residuals],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Spectrum":
        return cls(
            eigenvalues=np.asarray(doc["eigenvalues"], dtype=float),
            residuals=np.asarray(doc["residuals"], dtype=float),
            h=doc.get("h"),
            dimension=doc.get("dimension"),
            area=doc.get("area"),
            perimeter=doc.get("perimeter"),
            upper_bound=doc.get("upperBound"),
            domain_hash=doc.get("domainHash", ""),
        )


def discrete_square_eigenvalues(side: float, h: float, count: int | None = None) -> np.ndarray:
    """Closed-form spectrum of the 5-point operator on ``(0, side)^2``."""
    n = int(round(side / h))
    k = np.arange(1, n)
    mu = 4.0 / h**2 * np.sin(k * np.pi / (2 * n)) ** 2
    ev = np.sort((mu[:, None] + mu[None, :]).ravel())
    return ev if count is None else ev[:count]


def _residuals(op: GridOperator, vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    R = op.apply(vecs) - vecs * vals
    return np.linalg.norm(R, axis=0) / np.linalg.norm(vecs, axis=0)


def _dense(op: GridOperator, N: int) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(op.matrix.toarray())
    return vals[:N], vecs[:, :N]


def _arpack(op: GridOperator, N: int, tol: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(op.dimension)
    vals, vecs = sla.eigsh(op.matrix.tocsc(), k=N, sigma=0.0, which="LM", v0=v0, tol=tol * 1e-2)
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def _orthonormalize(X: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    for _ in range(2):
        for Q in basis:
            X = X - Q @ (Q.T @ X)
    Q, R = np.linalg.qr(X)
    keep = np.abs(np.diag(R)) > 1e-10 * max(1.0, np.abs(np.diag(R)).max(initial=0.0))
    return Q[:, keep]


def _chebyshev_filter(op: GridOperator, X: np.ndarray, degree: int, cut: float, top: float) -> np.ndarray:
    # damp [cut, top]; amplify everything below cut
    e = 0.5 * (top - cut)
    c = 0.5 * (top + cut)
    Y_prev = X
    Y = (op.apply(X) - c * X) / e
    for _ in range(2, degree + 1):
        Y_next = 2.0 * (op.apply(Y) - c * Y) / e - Y_prev
        Y_prev, Y = Y, Y_next
        # rescale to avoid overflow; only the span matters
        s = np.abs(Y).max()
        Y /= s
        Y_prev /= s
    return Y


def _filtered_lanczos(
    op: GridOperator, N: int, tol: float, seed: int, max_restarts: int = 60
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = op.dimension
    p = min(n, N + max(6, N // 4))
    block = min(p, 8)
    steps = 4
    degree = 24
    top = op.upper_bound
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    cut = top / 8.0
    res = np.full(N, np.inf)
    vals = np.zeros(N)
    vecs = np.zeros((n, N))
    for _ in range(max_restarts):
        Y = _chebyshev_filter(op, X, degree, cut, top)
        basis = [_orthonormalize(Y, [])]
        # a few block Lanczos steps with full reorthogonalization
        W = basis[-1][:, :block]
        for _ in range(steps):
            W = _orthonormalize(op.apply(W), basis)
            if W.shape[1] == 0:
                break
            basis.append(W)
        Q = np.hstack(basis)
        H = Q.T @ op.apply(Q)
        theta, S = np.linalg.eigh(0.5 * (H + H.T))
        X = Q @ S[:, :p]
        vals, vecs = theta[:N], X[:, :N]
        res = _residuals(op, vals, vecs)
        if np.all(res <= tol * np.abs(vals)):
            return vals, vecs, res
        cut = min(float(theta[min(p, len(theta)) - 1]), 0.5 * top)
    raise ConvergenceError(
        f"filtered Lanczos did not converge after {max_restarts} restarts", res
    )


def lowest_eigenvalues(
    op: GridOperator, N: int, tol: float = 1e-8, seed: int = 0, method: str = "auto"
) -> Spectrum:
    """The ``N`` smallest eigenvalues of ``op`` with residual certificates.

    ``method`` is ``"dense"``, ``"lanczos"`` (Chebyshev-filtered block
    Lanczos, matrix-free), ``"arpack"`` (shift-invert ARPACK) or ``"auto"``
    (dense up to 2000 unknowns, Lanczos above).
    """
    if not 1 <= N <= op.dimension:
        raise ValueError(f"N={N} outside [1, {op.dimension}]")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if method == "auto":
        method = "dense" if op.dimension <= DENSE_LIMIT else "lanczos"
    if method == "dense":
        vals, vecs = _dense(op, N)
        res = _residuals(op, vals, vecs)
    elif method == "lanczos":
        vals, vecs, res = _filtered_lanczos(op, N, tol, seed)
    elif method == "arpack":
        vals, vecs = _arpack(op, N, tol, seed)
        res = _residuals(op, vals, vecs)
    else:
        raise ValueError(f"unknown method {method!r}")
    if np.any(res > tol * np.abs(vals)):
        raise ConvergenceError("residual certificate failed", res)
    poly = op.polygon
    return Spectrum(
        eigenvalues=np.asarray(vals, dtype=float),
        residuals=np.asarray(res, dtype=float),
        h=op.h,
        dimension=op.dimension,
        area=poly.area,
        perimeter=poly.perimeter,
        upper_bound=op.upper_bound,
        domain_hash=_domain_hash(poly),
    )


def _cluster_means(values: np.ndarray, rtol: float = CLUSTER_RTOL) -> np.ndarray:
    out = values.copy()
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or abs(values[i] - values[i - 1]) > rtol * abs(values[i]):
            out[start:i] = values[start:i].mean()
            start = i
    return out


def refine_extrapolate(
    s1: Spectrum, s2: Spectrum, coarse: Spectrum | None = None
) -> Spectrum:
    """Richardson values ``(4 lam_{h/2} - lam_h) / 3`` paired by order.

    ``s1`` is at spacing ``h`` and ``s2`` at ``h/2``.  Degenerate clusters are
    replaced by their mean first.  With ``coarse`` at ``2h`` the empirical
    order is estimated and values outside ``[1.5, 2.5]`` are flagged.
    """
    n = min(s1.count, s2.count)
    a = _cluster_means(s1.eigenvalues[:n])
    b = _cluster_means(s2.eigenvalues[:n])
    rich = (4.0 * b - a) / 3.0
    flags = np.zeros(n, dtype=bool)
    if coarse is not None:
        n = min(n, coarse.count)
        c = _cluster_means(coarse.eigenvalues[:n])
        num = np.abs(c - a[:n])
        den = np.abs(a[:n] - b[:n])
        with np.errstate(divide="ignore", invalid="ignore"):
            order = np.log2(num / den)
        flags[:n] = ~((order >= 1.5) & (order <= 2.5))
        if flags[:n].any():
            warnings.warn(f"{int(flags[:n].sum())} eigenvalues converge outside order [1.5, 2.5]")
    return Spectrum(
        eigenvalues=s2.eigenvalues[: len(rich)],
        residuals=s2.residuals[: len(rich)],
        h=s2.h,
        dimension=s2.dimension,
        area=s2.area,
        perimeter=s2.perimeter,
        upper_bound=s2.upper_bound,
        domain_hash=s2.domain_hash,
        extrapolated=rich,
        errors=np.abs(rich - b),
        flags=flags,
    )


# Parabolic contour for inverse-Laplace-type integrals; nodes and constants
# follow the Weideman-Trefethen choice for exp(t L) with L on the negative axis.
_CONTOUR_N = 32


def _contour(t: float) -> tuple[np.ndarray, np.ndarray]:
    theta = (np.arange(_CONTOUR_N) + 0.5) * np.pi / _CONTOUR_N
    s = _CONTOUR_N / t * (0.1309 - 0.1194 * theta**2 + 0.25j * theta)
    ds = _CONTOUR_N / t * (-2 * 0.1194 * theta + 0.25j)
    return s, ds


def discrete_heat_trace(op: GridOperator, ts: Sequence[float]) -> np.ndarray:
    """``Tr exp(-t A_h)`` for each ``t``, without computing eigenvalues.

    The base-square block is diagonal in the sine basis.  The nodes above the
    square enter through ``log det K(z)`` with ``K`` the Schur complement, so
    ``Tr (z - A)^{-1} = Tr (z - S)^{-1} + Tr(K^{-1} K')``, and the exponential
    is recovered by trapezoidal quadrature on a parabolic contour around the
    positive axis.  Contour error is below 1e-12 relative.
    """
    side = op.polygon.side
    h = op.h
    n = int(round(side / h))
    k = np.arange(1, n)
    mu = 4.0 / h**2 * np.sin(k * np.pi / (2 * n)) ** 2
    n_sq = (n - 1) ** 2
    extra = op.nodes[n_sq:]
    ts = np.asarray(ts, dtype=float)
    base = np.array([np.exp(-t * mu).sum() ** 2 for t in ts])
    m = len(extra)
    if m == 0:
        return base

    T = op.matrix[n_sq:, n_sq:].toarray()
    coupled = np.nonzero(extra[:, 1] == n)[0]
    cols = extra[coupled, 0]
    # sine eigenvectors of the 1-D block, sampled at the coupled columns
    S = np.sqrt(2.0 / n) * np.sin(np.outer(cols, k) * np.pi / n)
    w = (np.sqrt(2.0 / n) * np.sin((n - 1) * k * np.pi / n)) ** 2
    scale = 1.0 / h**4
    eye = np.eye(m)
    out = np.empty(len(ts))
    pair = mu[:, None] + mu[None, :]
    for idx, t in enumerate(ts):
        s, ds = _contour(t)
        acc = 0.0
        for sk, dsk in zip(s, ds):
            z = -sk
            D = 1.0 / (z - pair)
            g1 = D @ w
            g2 = (D * D) @ w
            K = z * eye - T
            Kp = eye.astype(complex)
            K[np.ix_(coupled, coupled)] -= scale * (S * g1) @ S.T
            Kp[np.ix_(coupled, coupled)] += scale * (S * g2) @ S.T
            val = np.trace(np.linalg.solve(K, Kp))
            acc += np.exp(t * sk) * val * (-dsk)
        # conjugate half of the contour doubles the real part
        corr = 2.0 * (acc / (2 * _CONTOUR_N) / 1j).real
        out[idx] = base[idx] + corr
    return out


class SpectrumCache:
    """Spectra persisted as JSON under content-addressed file names."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(op: GridOperator, N: int, tol: float, seed: int, method: str) -> str:
        payload = json.dumps(
            [_domain_hash(op.polygon), op.h, N, tol, seed, method], sort_keys=True
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:24]

    def path(self, key: str) -> Path:
        return self.root / f"spectrum-{key}.json"

    def get(self, key: str) -> Spectrum | None:
        p = self.path(key)
        if not p.exists():
            return None
        try:
            return Spectrum.from_json(json.loads(p.read_text()))
        except (ValueError, KeyError) as exc:
            log.warning("corrupt cache entry %s (%s); rebuilding", p.name, exc)
            return None

    def put(self, key: str, spec: Spectrum) -> None:
        self.path(key).write_text(json.dumps(spec.to_json()))

    def solve(
        self, op: GridOperator, N: int, tol: float = 1e-8, seed: int = 0, method: str = "auto"
    ) -> Spectrum:
        key = self.key(op, N, tol, seed, method)
        hit = self.get(key)
        if hit is not None:
            return hit
        spec = lowest_eigenvalues(op, N, tol, seed, method)
        self.put(key, spec)
        return spec
