"""Independent reference computations used only by the tests.

Nothing here imports the package under test.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np
import scipy.linalg as la


def theta_trace(L: float, t: float, dps: int = 30) -> float:
    """``sum_{k>=1} exp(-t pi^2 k^2 / L^2)`` via the Jacobi theta function."""
    with mpmath.workdps(dps):
        q = mpmath.exp(-mpmath.mpf(t) * mpmath.pi**2 / mpmath.mpf(L) ** 2)
        return float((mpmath.jtheta(3, 0, q) - 1) / 2)


def images_kernel(L: float, x: float, t: float, dps: int = 30) -> float:
    with mpmath.workdps(dps):
        L, x, t = mpmath.mpf(L), mpmath.mpf(x), mpmath.mpf(t)
        s = mpmath.nsum(
            lambda m: mpmath.exp(-((m * L) ** 2) / t) - mpmath.exp(-((m * L + x) ** 2) / t),
            [-mpmath.inf, mpmath.inf],
        )
        return float(s / mpmath.sqrt(4 * mpmath.pi * t))


def erf_gap(delta: float, t: float, dps: int = 40) -> float:
    """``int_delta^inf exp(-s^2/t) ds = sqrt(pi t)/2 erfc(delta / sqrt t)``."""
    with mpmath.workdps(dps):
        t = mpmath.mpf(t)
        return float(mpmath.sqrt(mpmath.pi * t) / 2 * mpmath.erfc(mpmath.mpf(delta) / mpmath.sqrt(t)))


def lattice_count(lam: float, L: float = 1.0) -> int:
    """``#{(m, n) >= 1 : pi^2 (m^2 + n^2) / L^2 < lam}``."""
    top = int(math.sqrt(lam) * L / math.pi) + 2
    return sum(
        1
        for m in range(1, top)
        for n in range(1, top)
        if math.pi**2 * (m * m + n * n) / L**2 < lam
    )


def lattice_spectrum(L: float, count: int) -> np.ndarray:
    m = np.arange(1, 40)
    vals = np.sort((math.pi**2 * (m[:, None] ** 2 + m[None, :] ** 2) / L**2).ravel())
    return vals[:count]


def discrete_square(side: float, h: float) -> np.ndarray:
    n = int(round(side / h))
    mu = np.array([4 / h**2 * math.sin(k * math.pi / (2 * n)) ** 2 for k in range(1, n)])
    return np.sort((mu[:, None] + mu[None, :]).ravel())


def _on_segment(p, a, b, eps=1e-12) -> bool:
    (px, py), (ax, ay), (bx, by) = p, a, b
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > eps:
        return False
    return min(ax, bx) - eps <= px <= max(ax, bx) + eps and min(ay, by) - eps <= py <= max(ay, by) + eps


def point_strictly_inside(p, vertices) -> bool:
    """Even-odd ray casting; points on an edge are outside."""
    n = len(vertices)
    for i in range(n):
        if _on_segment(p, vertices[i], vertices[(i + 1) % n]):
            return False
    x, y = p
    inside = False
    for i in range(n):
        (x1, y1), (x2, y2) = vertices[i], vertices[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def raster_census(vertices, h: float) -> list[tuple[int, int]]:
    xs = [v[0] for v in vertices]
    ys = [v[1] for v in vertices]
    nodes = []
    for i in range(1, int(round(max(xs) / h))):
        for j in range(1, int(math.ceil(max(ys) / h))):
            if point_strictly_inside((i * h, j * h), vertices):
                nodes.append((i, j))
    return nodes


def dense_fd_eigenvalues(vertices, h: float) -> np.ndarray:
    """Five-point Dirichlet Laplacian assembled from the raster census."""
    nodes = raster_census(vertices, h)
    index = {p: k for k, p in enumerate(nodes)}
    A = np.zeros((len(nodes), len(nodes)))
    for k, (i, j) in enumerate(nodes):
        A[k, k] = 4 / h**2
        for q in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if q in index:
                A[k, index[q]] = -1 / h**2
    return la.eigvalsh(A)


def brute_majorant(values: np.ndarray, grid: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """``min_a (a tau + b(a))`` with ``b(a) = max(0, max_i (G_i - a s_i))``."""
    b = np.maximum(0.0, (values[None, :] - slopes[:, None] * grid[None, :]).max(axis=1))
    return (slopes[:, None] * grid[None, :] + b[:, None]).min(axis=0)


def shoelace(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def perimeter(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())
