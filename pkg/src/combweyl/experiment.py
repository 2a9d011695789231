"""Configuration-driven runs: domains, traces, remainder tables, fits, checks.

A run is a pure function of its JSON config.  Heavy work (one discrete heat
trace or eigenvalue solve per domain and spacing) is farmed out to a process
pool and merged in sorted order; a single writer emits every file with 17
significant digits so that reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import exact_kernels as ek
from .comb_domain import (
    CombPolygon,
    ToothSequence,
    build_polygon,
    domain_from_spec,
    geometry_deficits,
    write_vertices_csv,
)
from .fd_spectrum import (
    ConvergenceError,
    Spectrum,
    SpectrumCache,
    aligned_spacing,
    discrete_heat_trace,
    discretize,
    lowest_eigenvalues,
    refine_extrapolate,
)
from .modulus_sequences import (
    build_plan,
    modulus_from_spec,
    plan_to_json,
    teeth_from_plan,
    verify_limits,
)
from .spectral_functionals import (
    TraceSeries,
    WeylConstants,
    corner_sum,
    counterexample_ratio,
    counting,
    heat_trace,
    laplace_check,
    remainder_lower_bound,
    remainder_E,
    remainder_samples,
    riesz_mean,
)

__all__ = [
    "ConfigError",
    "RunConfig",
    "AsymptoticFit",
    "fit_coefficients",
    "corner_slope",
    "trace_table",
    "counterexample_bound_table",
    "verify_kernels",
    "verify_bounds",
    "verify_laplace",
    "run",
]

log = logging.getLogger(__name__)

CONTOUR_RTOL = 1e-12
TOOTH_CORNER_COEFF = math.pi / 10


class ConfigError(ValueError):
    """Invalid run configuration, raised before any solve."""


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _sorted_nonempty(name: str, values: Sequence[float]) -> list[float]:
    vals = [float(v) for v in values]
    if not vals:
        raise ConfigError(f"{name} grid is empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{name} grid must be strictly increasing")
    return vals


@dataclass(frozen=True)
class RunConfig:
    """One experiment.  See ``examples`` in the README for the JSON shape."""

    domain: dict = field(default_factory=lambda: {"sequence": {"kind": "dyadic", "A": 1.0, "count": 8}})
    M: tuple[int, ...] = (1, 2, 3, 4, 5)
    side: float = 3.0
    spacings: tuple[float, ...] = (1 / 32, 1 / 64)
    N: int = 0
    t: tuple[float, ...] = tuple(np.geomspace(5e-3, 0.1, 9).tolist())
    lam: tuple[float, ...] = ()
    gamma: tuple[float, ...] = (0.0, 1.0, 2.0)
    modulus: Any = "sqrt"
    pipeline: dict | None = None
    trace_method: str = "contour"
    eig_method: str = "auto"
    eig_tol: float = 1e-8
    out: str = "out"
    cache: str = ".cache"
    jobs: int = 1
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        kw = dict(doc)
        for key in ("M", "spacings", "t", "lam", "gamma"):
            if key in kw:
                kw[key] = tuple(kw[key])
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("M", "spacings", "t", "lam", "gamma"):
            d[key] = list(d[key])
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def validate(self) -> None:
        _sorted_nonempty("t", self.t)
        if any(t <= 0 for t in self.t):
            raise ConfigError("t values must be positive")
        if list(self.M) != sorted(set(self.M)) or not self.M or min(self.M) < 1:
            raise ConfigError("M must be a nonempty increasing list of integers >= 1")
        sp = sorted(self.spacings, reverse=True)
        if not sp or list(self.spacings) != sp or len(set(sp)) != len(sp):
            raise ConfigError("spacings must be nonempty and strictly decreasing")
        if len(sp) > 1 and any(abs(a / b - 2.0) > 1e-12 for a, b in zip(sp, sp[1:])):
            raise ConfigError("consecutive spacings must halve (Richardson pairs)")
        if self.lam:
            _sorted_nonempty("lambda", self.lam)
        if any(g < 0 for g in self.gamma):
            raise ConfigError("gamma must be nonnegative")
        if self.trace_method not in ("contour", "eigen"):
            raise ConfigError("trace_method is 'contour' or 'eigen'")
        if self.trace_method == "eigen" and self.N < 1:
            raise ConfigError("trace_method 'eigen' needs N >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        for poly in self.polygons().values():
            a = aligned_spacing(poly)
            for h in self.spacings:
                if a is None or not _dyadic_multiple(a, h):
                    raise ConfigError(
                        f"spacing {h} not aligned with M={poly.truncation} (coarsest aligned: {a})"
                    )

    def teeth(self) -> ToothSequence:
        spec = dict(self.domain)
        spec.setdefault("M", "infinity")
        teeth, _ = domain_from_spec(spec)
        return teeth

    def polygons(self) -> dict[int, CombPolygon]:
        teeth = self.teeth()
        return {M: build_polygon(teeth, M, self.side) for M in self.M}


def _dyadic_multiple(coarse: float, h: float) -> bool:
    r = Fraction(coarse).limit_denominator(1 << 40) / Fraction(h).limit_denominator(1 << 40)
    if r.denominator != 1:
        return False
    n = r.numerator
    return n >= 1 and n & (n - 1) == 0


# -- fits ---------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticFit:
    """``(4 pi t)^{d/2} Tr ~ a + b sqrt(t) + c t`` with predicted counterparts."""

    a: float
    b: float
    c: float
    covariance: list[list[float]]
    residual_norm: float
    used: int
    t_min: float
    t_max: float
    predicted: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def fit_coefficients(
    series: TraceSeries,
    d: int = 2,
    errors: Sequence[float] | None = None,
    predicted: dict | None = None,
) -> AsymptoticFit:
    """Weighted least squares of ``(4 pi t)^{d/2} Tr`` on ``{1, sqrt t, t}``.

    Weights are inverse squared error budgets (discretization ``errors`` plus
    the tail bound).  Entries whose tail bound exceeds 1% of the ``b sqrt(t)``
    scale are trimmed first.
    """
    t = np.asarray(series.t, dtype=float)
    pref = (4 * math.pi * t) ** (d / 2)
    y = pref * (np.asarray(series.trace) + np.asarray(series.tail) / 2)
    tail = pref * np.asarray(series.tail)
    err = np.zeros_like(t) if errors is None else pref * np.abs(np.asarray(errors, dtype=float))
    budget = err + tail / 2
    X = np.column_stack([np.ones_like(t), np.sqrt(t), t])

    def solve(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        if mask.sum() < 4:
            raise ValueError(f"need at least 4 usable points, have {int(mask.sum())}")
        tm = t[mask]
        if tm.max() / tm.min() < math.sqrt(10.0):
            raise ValueError("t window spans less than half a decade; fit is ill-conditioned")
        floor = 1e-15 * np.abs(y[mask]).max()
        w = 1.0 / np.maximum(budget[mask], floor) ** 2
        if not np.any(budget[mask] > floor):
            w = np.ones(int(mask.sum()))
        sw = np.sqrt(w)
        A = X[mask] * sw[:, None]
        coef, *_ = np.linalg.lstsq(A, y[mask] * sw, rcond=None)
        r = (X[mask] @ coef - y[mask]) * sw
        dof = max(int(mask.sum()) - 3, 1)
        cov = np.linalg.pinv(A.T @ A) * max(float(r @ r) / dof, 1.0 if budget[mask].any() else 0.0)
        return coef, cov, float(np.linalg.norm(X[mask] @ coef - y[mask]))

    mask = np.ones(len(t), dtype=bool)
    coef, _, _ = solve(mask)
    mask = tail <= 0.01 * abs(coef[1]) * np.sqrt(t)
    coef, cov, res = solve(mask)
    return AsymptoticFit(
        float(coef[0]),
        float(coef[1]),
        float(coef[2]),
        cov.tolist(),
        res,
        int(mask.sum()),
        float(t[mask].min()),
        float(t[mask].max()),
        predicted,
    )


def corner_slope(t: Sequence[float], delta: Sequence[float], budget: Sequence[float]) -> tuple[float, float]:
    """Weighted least-squares slope through the origin of ``delta`` against ``t``.

    Returns ``(slope, standard error)``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(delta, dtype=float)
    b = np.maximum(np.asarray(budget, dtype=float), 1e-300)
    w = 1.0 / b**2
    den = float(np.sum(w * t * t))
    slope = float(np.sum(w * t * y)) / den
    return slope, math.sqrt(1.0 / den)


# -- traces -------------------------------------------------------------------


def _trace_task(args: tuple) -> np.ndarray:
    polygon, h, ts = args
    return discrete_heat_trace(discretize(polygon, h), ts)


def _solve_task(args: tuple) -> Spectrum:
    polygon, h, N, tol, seed, method, cache = args
    op = discretize(polygon, h)
    if cache is not None:
        return SpectrumCache(cache).solve(op, N, tol, seed, method)
    return lowest_eigenvalues(op, N, tol, seed, method)


def _pool_map(fn, tasks: list, jobs: int) -> list:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(a) for a in tasks]


def discrete_traces(cfg: RunConfig) -> dict[tuple[int, float], np.ndarray]:
    """Exact discrete traces keyed by ``(M, h)``."""
    polys = cfg.polygons()
    keys = [(M, h) for M in cfg.M for h in cfg.spacings]
    vals = _pool_map(_trace_task, [(polys[M], h, list(cfg.t)) for M, h in keys], cfg.jobs)
    return dict(zip(keys, vals))


def spectra(cfg: RunConfig, failures: list | None = None) -> dict[tuple[int, float], Spectrum]:
    polys = cfg.polygons()
    keys = [(M, h) for M in cfg.M for h in cfg.spacings]
    tasks = [
        (polys[M], h, cfg.N, cfg.eig_tol, cfg.seed, cfg.eig_method, cfg.cache) for M, h in keys
    ]
    out = {}
    if cfg.jobs > 1:
        results = _pool_map(_safe_solve, tasks, cfg.jobs)
    else:
        results = [_safe_solve(a) for a in tasks]
    for key, res in zip(keys, results):
        if isinstance(res, str):
            if failures is None:
                raise ConvergenceError(res, np.array([]))
            failures.append({"M": key[0], "h": key[1], "error": res})
        else:
            out[key] = res
    return out


def _safe_solve(args: tuple) -> Spectrum | str:
    try:
        return _solve_task(args)
    except (ConvergenceError, ValueError, MemoryError) as exc:
        return f"{type(exc).__name__}: {exc}"


def _richardson(coarse: np.ndarray, fine: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rich = (4.0 * fine - coarse) / 3.0
    return rich, np.abs(rich - fine)


def trace_rows(
    cfg: RunConfig,
    traces: dict[tuple[int, float], np.ndarray] | None = None,
    spec: dict[tuple[int, float], Spectrum] | None = None,
) -> dict[int, dict[str, np.ndarray]]:
    """Per ``M``: extrapolated trace, discretization error, tail and ``E_M`` data."""
    polys = cfg.polygons()
    ts = np.asarray(cfg.t)
    out = {}
    for M in cfg.M:
        poly = polys[M]
        if cfg.trace_method == "contour":
            per_h = [traces[(M, h)] for h in cfg.spacings]
            tail = np.zeros_like(ts)
            contour = CONTOUR_RTOL * per_h[-1]
        else:
            per_h, tails = [], []
            for h in cfg.spacings:
                vals = [heat_trace(spec[(M, h)], t) for t in ts]
                per_h.append(np.array([v for v, _ in vals]))
                tails.append(np.array([b for _, b in vals]))
            tail = tails[-1]
            contour = np.zeros_like(ts)
        if len(per_h) >= 2:
            trace, disc = _richardson(per_h[-2], per_h[-1])
        else:
            trace, disc = per_h[-1], np.full_like(ts, np.nan)
        disc = disc + contour
        series = TraceSeries(ts, trace, tail, {"M": M, "method": cfg.trace_method})
        samples = remainder_samples(series, M, poly.area, poly.perimeter, disc)
        out[M] = {
            "series": series,
            "per_h": per_h,
            "disc": disc,
            "samples": samples,
            "polygon": poly,
        }
    return out


def trace_table(cfg: RunConfig, rows: dict[int, dict]) -> str:
    header = ["M", "t"] + [f"trace_h{i}" for i in range(len(cfg.spacings))] + [
        "trace",
        "disc_error",
        "tail",
        "E_M",
        "lower_bound",
        "budget",
        "slack",
        "verdict",
    ]
    body = []
    for M in cfg.M:
        r = rows[M]
        for i, s in enumerate(r["samples"]):
            body.append(
                [M, s.t]
                + [p[i] for p in r["per_h"]]
                + [r["series"].trace[i], r["disc"][i], r["series"].tail[i], s.value, s.lower_bound, s.budget, s.slack, s.verdict]
            )
    return csv_text(header, body)


def corner_rows(cfg: RunConfig, rows: dict[int, dict]) -> list[dict]:
    """Per-tooth corner slope of ``E_M - E_1`` over the jointly certified window."""
    if 1 not in rows:
        return []
    base = rows[1]
    corners1 = corner_sum(base["polygon"].corners)
    out = []
    for M in cfg.M:
        if M == 1:
            continue
        r = rows[M]
        cert = np.array([a.certified and b.certified for a, b in zip(r["samples"], base["samples"])])
        if cert.sum() < 2:
            out.append({"M": M, "slope": math.nan, "points": int(cert.sum())})
            continue
        t = np.asarray(cfg.t)[cert]
        delta = np.array([a.value - b.value for a, b in zip(r["samples"], base["samples"])])[cert]
        # the base-square discretization error is common to both traces and
        # cancels; the budget of the difference is its own Richardson increment
        diff_h = [p - q for p, q in zip(r["per_h"], base["per_h"])]
        if len(diff_h) >= 2:
            _, dd = _richardson(diff_h[-2], diff_h[-1])
        else:
            dd = r["disc"] + base["disc"]
        tails = np.asarray(r["series"].tail) + np.asarray(base["series"].tail)
        contour = CONTOUR_RTOL * (np.abs(r["per_h"][-1]) + np.abs(base["per_h"][-1]))
        budget = (4 * math.pi * np.asarray(cfg.t) * (dd + tails / 2 + contour))[cert]
        slope, se = corner_slope(t, delta, budget)
        predicted = TOOTH_CORNER_COEFF * (M - 1)
        exact = (corner_sum(r["polygon"].corners) - corners1) / 3.0
        out.append(
            {
                "M": M,
                "slope": slope,
                "std_error": se,
                "tooth_value": predicted,
                "polygon_value": exact,
                "rel_dev_tooth": abs(slope - predicted) / predicted,
                "rel_dev_polygon": abs(slope - exact) / abs(exact),
                "points": int(cert.sum()),
                "t_min": float(t.min()),
                "t_max": float(t.max()),
            }
        )
    return out


# -- counterexample -----------------------------------------------------------


def counterexample_bound_table(
    teeth: ToothSequence,
    plan,
    g,
    ts: Sequence[float],
    side: float = 3.0,
) -> list[dict]:
    """Certified lower bound on the normalized remainder of the full comb.

    For the infinite comb ``Omega`` and ``M = M(sqrt t)``, domain monotonicity
    and the lower bound for ``E_M`` give
    ``4 pi t Tr_Omega - |Omega| + sqrt(pi t)/2 H(dOmega) >=
    -(M + 4 |Omega_M| - 1) t - sum_{k>=M} l_k^2 / 4 + sqrt(pi t)/2 (sqrt 2 - 1) sum_{k>=M} l_k``.
    The table reports that bound divided by ``sqrt(t) g(t)``.
    """
    from .modulus_sequences import M_of_tau

    rows = []
    for t in sorted(float(v) for v in ts):
        tau = math.sqrt(t)
        M = int(M_of_tau(plan, tau))
        s1, s2 = teeth.tail_sums(M)
        area_M = side * side + (teeth.tail_sums(1)[1] - s2) / 4.0
        bound = (
            remainder_lower_bound(M, area_M, t)
            - s2 / 4.0
            + math.sqrt(math.pi * t) / 2.0 * (math.sqrt(2.0) - 1.0) * s1
        )
        gt = float(g(t))
        rows.append(
            {
                "t": t,
                "tau": tau,
                "M": M,
                "tail_l1": s1,
                "tail_l2": s2,
                "lower_bound": bound,
                "g": gt,
                "ratio_lower_bound": bound / (math.sqrt(t) * gt),
            }
        )
    return rows


# -- verification suites -------------------------------------------------------


def verify_kernels(ts: Sequence[float] | None = None) -> dict:
    """Images against sine series on ``L in {1, 3}``, ``x in {0.1..0.9} L``."""
    ts = np.geomspace(1e-3, 1.0, 31) if ts is None else np.asarray(ts)
    worst = 0.0
    rows = []
    for L in (1.0, 3.0):
        for frac in np.arange(1, 10) / 10:
            x = frac * L
            for t in ts:
                a = ek.kernel_diag_images(L, x, t)
                b = ek.kernel_diag_spectral(L, x, t).value
                worst = max(worst, abs(a - b))
                rows.append((L, x, float(t), a, b, abs(a - b)))
    return {"max_abs_diff": worst, "rows": rows}


def verify_bounds(ts: Sequence[float] | None = None, n: int = 41) -> dict:
    """Count violations of the interval, square and Gaussian-tail lower bounds."""
    ts = np.geomspace(1e-3, 1.0, 13) if ts is None else np.asarray(ts)
    viol = {"interval": 0, "square": 0, "erf": 0}
    checked = {"interval": 0, "square": 0, "erf": 0}
    for L in (1.0, 3.0):
        xs = L * (np.arange(1, n) / n)
        for t in ts:
            t = float(t)
            k1 = {}
            for x in xs:
                k = ek.kernel_diag_images(L, x, t)
                k1[x] = k
                lb = ek.interval_kernel_lower_bound(L, x, t)
                checked["interval"] += 1
                viol["interval"] += k < lb - 1e-14 * abs(k)
            for x1 in xs[::4]:
                for x2 in xs[::4]:
                    k = k1[x1] * k1[x2]
                    lb = ek.square_kernel_lower_bound(L, (x1, x2), t)
                    checked["square"] += 1
                    viol["square"] += k < lb - 1e-14 * abs(k)
    for delta in np.geomspace(1e-3, 3.0, 25):
        for t in ts:
            gap, upper = ek.erf_tail(float(delta), float(t))
            checked["erf"] += 1
            viol["erf"] += not (0.0 <= gap <= upper * (1 + 1e-13))
    return {"violations": viol, "checked": checked}


def verify_laplace(ts: Sequence[float] = (0.3, 0.5), gammas: Sequence[float] = (0.0, 1.0, 2.0)) -> list[dict]:
    """Laplace identity on a toy spectrum and a unit-square 20-eigenvalue prefix."""
    m = np.arange(1, 8)
    lattice = np.sort((np.pi**2 * (m[:, None] ** 2 + m[None, :] ** 2)).ravel())[:20]
    cases = {"toy": Spectrum.from_values([1.0, 2.0, 4.0]), "square20": Spectrum.from_values(lattice)}
    rows = []
    for name, spec in cases.items():
        for g in gammas:
            for t in ts:
                lhs, rhs, gap = laplace_check(spec, g, t)
                rows.append({"spectrum": name, "gamma": g, "t": t, "lhs": lhs, "rhs": rhs, "gap": gap})
    return rows


# -- run ----------------------------------------------------------------------


def _write(out: Path, name: str, text: str, written: dict[str, str]) -> None:
    p = out / name
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    written[name] = hashlib.sha256(text.encode()).hexdigest()


def _json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_fmt) + "\n"


def build_domains(cfg: RunConfig, out: Path, written: dict) -> None:
    for M, poly in cfg.polygons().items():
        _write(out, f"domains/M{M}.json", _json(poly.to_dict()), written)
        buf = out / f"domains/M{M}_vertices.csv"
        buf.parent.mkdir(parents=True, exist_ok=True)
        write_vertices_csv(poly, buf)
        written[f"domains/M{M}_vertices.csv"] = hashlib.sha256(buf.read_bytes()).hexdigest()


def spectra_table(cfg: RunConfig, spec: dict[tuple[int, float], Spectrum]) -> tuple[str, dict[int, Spectrum]]:
    """Eigenvalues per ``(M, h)`` plus the Richardson values at the finest pair."""
    rows = []
    best: dict[int, Spectrum] = {}
    for M in cfg.M:
        hs = [h for h in cfg.spacings if (M, h) in spec]
        if not hs:
            continue
        fine = spec[(M, hs[-1])]
        if len(hs) >= 2:
            coarse = spec[(M, hs[-3])] if len(hs) >= 3 else None
            fine = refine_extrapolate(spec[(M, hs[-2])], spec[(M, hs[-1])], coarse)
        best[M] = fine
        for k in range(fine.count):
            raw = [spec[(M, h)].eigenvalues[k] for h in hs]
            rich = fine.extrapolated[k] if fine.extrapolated is not None else fine.eigenvalues[k]
            err = fine.errors[k] if fine.errors is not None else math.nan
            rows.append([M, k + 1] + raw + [rich, err, fine.residuals[k]])
    width = len(cfg.spacings)
    header = ["M", "k"] + [f"lambda_h{i}" for i in range(width)] + ["lambda_extrapolated", "disc_error", "residual"]
    return csv_text(header, [r for r in rows if len(r) == len(header)]), best


def riesz_table(cfg: RunConfig, best: dict[int, Spectrum]) -> str:
    header = ["M", "lambda", "counting"] + [f"riesz_{_fmt(g)}" for g in cfg.gamma] + ["two_term_riesz_1", "status"]
    rows = []
    for M, spec in best.items():
        c1 = WeylConstants(2, 1.0)
        for lam in cfg.lam:
            try:
                n = counting(spec, lam)
                vals = [riesz_mean(spec, lam, g) for g in cfg.gamma]
                status = "ok"
            except ValueError:
                n, vals, status = -1, [math.nan] * len(cfg.gamma), "beyond-range"
            two = c1.leading * spec.area * lam**2 - c1.boundary / 4 * spec.perimeter * lam**1.5
            rows.append([M, lam, n] + vals + [two, status])
    return csv_text(header, rows)


def run(cfg: RunConfig, out: str | Path | None = None, steps: Sequence[str] | None = None) -> dict:
    """Execute ``steps`` (all by default) and write the bundle under ``out``.

    Returns the manifest.
    """
    cfg.validate()
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = set(steps or ("domains", "spectra", "traces", "fit", "counterexample", "limits"))
    written: dict[str, str] = {}
    failures: list[dict] = []
    summary: dict[str, Any] = {}

    if "domains" in steps:
        build_domains(cfg, out, written)

    spec: dict = {}
    if cfg.N > 0 and ("spectra" in steps or cfg.trace_method == "eigen"):
        spec = spectra(cfg, failures)
        text, best = spectra_table(cfg, spec)
        _write(out, "spectra.csv", text, written)
        if cfg.lam:
            _write(out, "riesz.csv", riesz_table(cfg, best), written)

    rows = None
    if steps & {"traces", "fit", "counterexample"}:
        traces = discrete_traces(cfg) if cfg.trace_method == "contour" else None
        if cfg.trace_method == "eigen" and failures:
            summary["traces"] = "skipped: eigen solves failed"
        else:
            rows = trace_rows(cfg, traces, spec)

    if rows is not None and "traces" in steps:
        _write(out, "traces.csv", trace_table(cfg, rows), written)
        corners = corner_rows(cfg, rows)
        keys = ["M", "slope", "std_error", "tooth_value", "polygon_value", "rel_dev_tooth", "rel_dev_polygon", "points", "t_min", "t_max"]
        _write(out, "corner_slopes.csv", csv_text(keys, [[c.get(k, math.nan) for k in keys] for c in corners]), written)
        verdicts = [s.verdict for M in cfg.M for s in rows[M]["samples"]]
        summary["lower_bound"] = {
            "entries": len(verdicts),
            "pass": verdicts.count("pass"),
            "fail": verdicts.count("fail"),
            "inconclusive": verdicts.count("inconclusive"),
        }
        summary["corner_slopes"] = corners

    if rows is not None and "fit" in steps:
        fits = {}
        for M in cfg.M:
            r = rows[M]
            poly = r["polygon"]
            predicted = {
                "a": poly.area,
                "b": -math.sqrt(math.pi) / 2 * poly.perimeter,
                "c": corner_sum(poly.corners) / 3.0,
            }
            try:
                fits[str(M)] = fit_coefficients(r["series"], 2, r["disc"], predicted).to_dict()
            except ValueError as exc:
                fits[str(M)] = {"error": str(exc)}
        _write(out, "fit.json", _json(fits), written)

    g_mod = modulus_from_spec(cfg.modulus)

    def g(t: float) -> float:
        return float(g_mod(math.sqrt(t)))

    if rows is not None and "counterexample" in steps:
        M = cfg.M[-1]
        r = rows[M]
        table = counterexample_ratio(r["series"], r["polygon"].area, r["polygon"].perimeter, g, r["disc"])
        _write(
            out,
            "counterexample_fd.csv",
            csv_text(["M", "t", "ratio", "error", "inconclusive"], [[M, x["t"], x["ratio"], x["error"], x["inconclusive"]] for x in table]),
            written,
        )

    if cfg.pipeline is not None and steps & {"counterexample", "limits"}:
        p = cfg.pipeline
        plan = build_plan(g_mod, float(p.get("A", 0.5)), int(p.get("K", 200)))
        _write(out, "plan.json", _json(plan_to_json(plan)), written)
        if "limits" in steps:
            taus = p.get("tau", [10.0**-k for k in range(1, 9)])
            lim = verify_limits(plan, g_mod, taus, jobs=cfg.jobs)
            keys = ["tau", "M", "tail_l1", "tail_l2", "ratio1", "ratio2", "rel_uncertainty"]
            _write(out, "limits.csv", csv_text(keys, [[x[k] for k in keys] for x in lim]), written)
        if "counterexample" in steps:
            teeth = teeth_from_plan(plan)
            ts = p.get("t", [10.0**-k for k in range(2, 15)])
            tab = counterexample_bound_table(teeth, plan, g, ts, cfg.side)
            keys = ["t", "tau", "M", "tail_l1", "tail_l2", "lower_bound", "g", "ratio_lower_bound"]
            _write(out, "counterexample_bound.csv", csv_text(keys, [[x[k] for k in keys] for x in tab]), written)

    if failures:
        _write(out, "failures.json", _json(failures), written)
    manifest = {
        "config": cfg.to_dict(),
        "configHash": cfg.digest(),
        "weyl": {"L_0_2": WeylConstants(2, 0).leading, "L_1_2": WeylConstants(2, 1).leading},
        "outputs": dict(sorted(written.items())),
        "summary": summary,
        "failures": failures,
    }
    (out / "manifest.json").write_text(_json(manifest))
    return manifest
