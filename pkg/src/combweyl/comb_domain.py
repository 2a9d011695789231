"""Comb domains: a square with triangular 45-degree teeth on its top edge.

The domain ``Omega_M`` is ``{0 < x1 < side, 0 < x2 < H_M(x1)}`` where
``H_M(x) = side + sum_{k<M} l_k H0((x - c_k)/l_k)`` and ``H0`` is the unit
tent.  Everything here is exact segment arithmetic; no meshing.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "ToothSequence",
    "CombPolygon",
    "ProductExtension",
    "dyadic_teeth",
    "power_teeth",
    "explicit_teeth",
    "cumulative_anchors",
    "tent",
    "height_profile",
    "build_polygon",
    "square_polygon",
    "geometry_deficits",
    "product_extension",
    "domain_from_spec",
    "write_vertices_csv",
]

INFINITY = math.inf
_SLACK = 1e-14

TailSums = Callable[[int], "tuple[float, float]"]


@dataclass(frozen=True)
class ToothSequence:
    """Tooth sizes ``l_k`` and anchors ``c_k`` (1-based in the maths, 0-based here).

    ``tail`` maps ``M`` to ``(sum_{k>=M} l_k, sum_{k>=M} l_k^2)`` and is
    available when the sequence is known beyond its stored prefix (or is
    finite).  ``finite`` marks sequences whose stored prefix is everything.
    """

    sizes: tuple[float, ...]
    anchors: tuple[float, ...]
    kind: str = "explicit"
    finite: bool = True
    tail: TailSums | None = field(default=None, compare=False, repr=False)
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if len(self.sizes) != len(self.anchors):
            raise ValueError("sizes and anchors must have the same length")
        self.validate()

    @property
    def count(self) -> int:
        return len(self.sizes)

    def validate(self) -> None:
        l = self.sizes
        c = self.anchors
        for k, lk in enumerate(l):
            if not lk > 0:
                raise ValueError(f"tooth size l_{k + 1} = {lk} is not positive")
            if k + 1 < len(l) and l[k + 1] > lk * (1 + _SLACK):
                raise ValueError(f"tooth sizes increase at k={k + 1}")
        total = self.total_size()
        if total > 1 + _SLACK:
            raise ValueError(f"sum of tooth sizes {total} exceeds 1")
        for k, ck in enumerate(c):
            if ck < 1 - _SLACK or ck > 2 + _SLACK:
                raise ValueError(f"anchor c_{k + 1} = {ck} outside [1, 2]")
            if k + 1 < len(c) and ck + l[k] > c[k + 1] + _SLACK:
                raise ValueError(f"tooth {k + 1} overlaps tooth {k + 2}")

    def total_size(self) -> float:
        if self.tail is not None:
            return self.tail(1)[0]
        return math.fsum(self.sizes)

    def tail_sums(self, M: int | float) -> tuple[float, float]:
        """``(sum_{k>=M} l_k, sum_{k>=M} l_k^2)``."""
        if M == INFINITY:
            return 0.0, 0.0
        M = int(M)
        if M < 1:
            raise ValueError("M must be at least 1")
        if self.tail is not None:
            return self.tail(M)
        if self.finite:
            rest = self.sizes[M - 1 :]
            return math.fsum(rest), math.fsum(x * x for x in rest)
        raise ValueError(f"tail of {self.kind!r} sequence beyond stored prefix is unknown")

    def active(self, M: int | float) -> list[tuple[float, float]]:
        """``(l_k, c_k)`` pairs for ``k < M``."""
        if M == INFINITY:
            if not self.finite:
                raise ValueError("infinitely many teeth cannot be listed; pass a finite M")
            return list(zip(self.sizes, self.anchors))
        M = int(M)
        if M - 1 > self.count:
            raise ValueError(f"M={M} needs {M - 1} stored teeth, only {self.count} available")
        return list(zip(self.sizes[: M - 1], self.anchors[: M - 1]))


def cumulative_anchors(sizes: Sequence[float]) -> tuple[float, ...]:
    """``c_1 = 1`` and ``c_k = 1 + sum_{j<k} l_j``."""
    out = []
    acc: list[float] = []
    for lk in sizes:
        out.append(1.0 + math.fsum(acc))
        acc.append(lk)
    return tuple(out)


def _anchors(sizes: Sequence[float], anchors: str | Sequence[float]) -> tuple[float, ...]:
    if isinstance(anchors, str):
        if anchors != "cumulative":
            raise ValueError(f"unknown anchor rule {anchors!r}")
        return cumulative_anchors(sizes)
    anchors = tuple(float(a) for a in anchors)
    if len(anchors) < len(sizes):
        raise ValueError("explicit anchor list shorter than the stored teeth")
    return anchors[: len(sizes)]


def dyadic_teeth(A: float = 0.5, count: int = 16, anchors: str | Sequence[float] = "cumulative") -> ToothSequence:
    """``l_k = A 2^{-k}``; tails are geometric series."""

    def tail(M: int) -> tuple[float, float]:
        return A * 2.0 ** (1 - M), A * A * 4.0 ** (-M) * 4.0 / 3.0

    sizes = tuple(A * 2.0**-k for k in range(1, count + 1))
    return ToothSequence(sizes, _anchors(sizes, anchors), "dyadic", False, tail, {"A": A})


def power_teeth(
    c0: float, p: float, count: int = 64, anchors: str | Sequence[float] = "cumulative"
) -> ToothSequence:
    """``l_k = c0 k^{-p}`` with ``p > 1``; tails via the Hurwitz zeta function."""
    if not p > 1:
        raise ValueError("power-law teeth need p > 1 to be summable")

    def tail(M: int) -> tuple[float, float]:
        return c0 * float(special.zeta(p, M)), c0 * c0 * float(special.zeta(2 * p, M))

    sizes = tuple(c0 * k**-p for k in range(1, count + 1))
    return ToothSequence(sizes, _anchors(sizes, anchors), "power", False, tail, {"c0": c0, "p": p})


def explicit_teeth(sizes: Sequence[float], anchors: str | Sequence[float] = "cumulative") -> ToothSequence:
    sizes = tuple(float(s) for s in sizes)
    return ToothSequence(sizes, _anchors(sizes, anchors), "explicit", True)


def tent(u: np.ndarray | float) -> np.ndarray | float:
    """Unit tent ``H0``: ``u`` on ``[0, 1/2]``, ``1 - u`` on ``(1/2, 1]``, else 0."""
    u = np.asarray(u, dtype=float)
    out = np.where((u >= 0) & (u <= 0.5), u, 0.0)
    out = np.where((u > 0.5) & (u <= 1.0), 1.0 - u, out)
    return out if out.ndim else float(out)


def height_profile(
    x: float | np.ndarray, teeth: ToothSequence, M: int | float = INFINITY, side: float = 3.0
) -> float | np.ndarray:
    """``H_M(x)`` for ``x`` in ``(0, side)``."""
    xa = np.asarray(x, dtype=float)
    if np.any((xa <= 0) | (xa >= side)):
        raise ValueError(f"height profile is defined on (0, {side})")
    if M == INFINITY and not teeth.finite:
        # unstored teeth sit beyond the last stored tooth
        edge = teeth.anchors[-1] + teeth.sizes[-1] if teeth.count else 1.0
        reach = 1.0 + teeth.total_size()
        if np.any((xa > edge) & (xa < max(reach, 2.0))):
            raise ValueError("x falls where unstored teeth may sit; store more teeth")
        active = list(zip(teeth.sizes, teeth.anchors))
    else:
        active = teeth.active(M)
    h = np.full_like(xa, side)
    for lk, ck in active:
        h = h + lk * tent((xa - ck) / lk)
    return h if h.ndim else float(h)


@dataclass(frozen=True)
class CombPolygon:
    """Counterclockwise vertex chain of ``Omega_M`` with exact functionals."""

    vertices: tuple[tuple[float, float], ...]
    corners: tuple[float, ...]
    area: float
    perimeter: float
    truncation: int
    side: float = 3.0
    teeth: tuple[tuple[float, float], ...] = ()

    def height(self, x: np.ndarray | float) -> np.ndarray | float:
        xa = np.asarray(x, dtype=float)
        h = np.full_like(xa, self.side)
        for lk, ck in self.teeth:
            h = h + lk * tent((xa - ck) / lk)
        return h if h.ndim else float(h)

    def edge_slopes(self) -> list[float]:
        out = []
        n = len(self.vertices)
        for i in range(n):
            (x0, y0), (x1, y1) = self.vertices[i], self.vertices[(i + 1) % n]
            out.append(math.inf if x1 == x0 else (y1 - y0) / (x1 - x0))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "vertices": [list(v) for v in self.vertices],
            "corners": list(self.corners),
            "area": self.area,
            "perimeter": self.perimeter,
            "truncation": self.truncation,
            "side": self.side,
            "teeth": [list(t) for t in self.teeth],
        }


def _shoelace(vertices: Sequence[tuple[float, float]]) -> float:
    n = len(vertices)
    terms = []
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        terms.append(x0 * y1)
        terms.append(-x1 * y0)
    return 0.5 * math.fsum(terms)


def _interior_angles(vertices: Sequence[tuple[float, float]]) -> list[float]:
    n = len(vertices)
    out = []
    for i in range(n):
        px, py = vertices[i - 1]
        cx, cy = vertices[i]
        nx, ny = vertices[(i + 1) % n]
        ex, ey = cx - px, cy - py
        fx, fy = nx - cx, ny - cy
        turn = math.atan2(ex * fy - ey * fx, ex * fx + ey * fy)
        out.append(math.pi - turn)
    return out


def _clean(vertices: list[tuple[float, float]]) -> list[tuple[float, float]]:
    # drop repeated points (touching teeth) and straight-through vertices
    pts = [v for i, v in enumerate(vertices) if v != vertices[i - 1]]
    changed = True
    while changed:
        changed = False
        angles = _interior_angles(pts)
        for i, a in enumerate(angles):
            if abs(a - math.pi) < 1e-12:
                del pts[i]
                changed = True
                break
    return pts


def _polygon(side: float, active: Sequence[tuple[float, float]], M: int) -> CombPolygon:
    verts: list[tuple[float, float]] = [(0.0, 0.0), (side, 0.0), (side, side)]
    for lk, ck in sorted(active, key=lambda p: -p[1]):
        verts.append((ck + lk, side))
        verts.append((ck + 0.5 * lk, side + 0.5 * lk))
        verts.append((ck, side))
    verts.append((0.0, side))
    verts = _clean(verts)
    perimeter = math.fsum(
        math.hypot(verts[(i + 1) % len(verts)][0] - x, verts[(i + 1) % len(verts)][1] - y)
        for i, (x, y) in enumerate(verts)
    )
    return CombPolygon(
        vertices=tuple(verts),
        corners=tuple(_interior_angles(verts)),
        area=_shoelace(verts),
        perimeter=perimeter,
        truncation=M,
        side=side,
        teeth=tuple(active),
    )


def build_polygon(teeth: ToothSequence, M: int, side: float = 3.0) -> CombPolygon:
    """Polygon of ``Omega_M``: the base square plus teeth ``k < M``.

    Separated teeth give ``4 + 3 (M - 1)`` vertices.  Teeth that touch (the
    cumulative anchor rule) share a base vertex, which then carries a single
    ``3 pi / 2`` corner instead of two ``5 pi / 4`` corners.
    """
    if M == INFINITY or M < 1:
        raise ValueError("build_polygon needs a finite M >= 1")
    if max(teeth.anchors[: M - 1], default=1.0) + max(teeth.sizes[: M - 1], default=0.0) > side:
        raise ValueError("teeth extend past the base square")
    return _polygon(side, teeth.active(M), int(M))


def square_polygon(side: float) -> CombPolygon:
    """Plain square ``(0, side)^2`` in polygon form."""
    return _polygon(side, (), 1)


def geometry_deficits(teeth: ToothSequence, M: int | float) -> tuple[float, float]:
    """``(|Omega| - |Omega_M|, H^1(bd Omega) - H^1(bd Omega_M))``."""
    s1, s2 = teeth.tail_sums(M)
    return s2 / 4.0, (math.sqrt(2.0) - 1.0) * s1


@dataclass(frozen=True)
class ProductExtension:
    dimension: int
    volume: float
    surface_measure: float


def product_extension(base: CombPolygon, d: int) -> ProductExtension:
    """Geometry of ``Omega x (0,1)^{d-2}``."""
    if d < 2:
        raise ValueError("product extension needs d >= 2")
    return ProductExtension(d, base.area, base.perimeter + 2 * (d - 2) * base.area)


def _sequence_from_spec(seq: dict[str, Any], anchors: Any) -> ToothSequence:
    kind = seq.get("kind")
    if kind == "dyadic":
        return dyadic_teeth(float(seq.get("A", 0.5)), int(seq.get("count", 16)), anchors)
    if kind == "power":
        return power_teeth(float(seq["c0"]), float(seq["p"]), int(seq.get("count", 64)), anchors)
    if kind == "explicit":
        return explicit_teeth(seq["sizes"], anchors)
    if kind == "pipeline":
        from .modulus_sequences import teeth_from_plan

        plan = seq.get("plan")
        if plan is None:
            plan = json.loads(Path(seq["path"]).read_text())
        return teeth_from_plan(plan, anchors)
    raise ValueError(f"unknown sequence kind {kind!r}")


def domain_from_spec(spec: dict[str, Any]) -> tuple[ToothSequence, int | float]:
    """Parse ``{"sequence": {...}, "M": int | "infinity", "anchors": ...}``."""
    teeth = _sequence_from_spec(spec["sequence"], spec.get("anchors", "cumulative"))
    M = spec.get("M", "infinity")
    M = INFINITY if M == "infinity" else int(M)
    return teeth, M


def write_vertices_csv(polygon: CombPolygon, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in polygon.vertices:
            w.writerow([repr(x), repr(y)])
