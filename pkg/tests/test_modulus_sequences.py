import json
import math

import numpy as np
import pytest

from combweyl import comb_domain as cd
from combweyl import modulus_sequences as ms

from . import oracles

GRID = np.geomspace(1e-12, 1 - 1e-12, 400)


@pytest.fixture(scope="module")
def sqrt_plan():
    return ms.build_plan(ms.modulus_from_spec("sqrt"), 0.5, 200)


class PowerDensity:
    """Stand-in density ``h = tau^{-1/2}`` whose inverse profile is ``k^{-2}``."""

    def __call__(self, tau):
        return np.atleast_1d(np.asarray(tau, dtype=float)) ** -0.5

    def integral(self, tau):
        return 2 * np.sqrt(np.atleast_1d(np.asarray(tau, dtype=float)))

    def moment1(self, tau):
        return 2 / 3 * tau**1.5

    def inverse(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.where(y > 1, 1 / np.maximum(y, 1) ** 2, 1.0)


def test_modulus_registry():
    assert ms.modulus_from_spec("sqrt")(0.25) == 0.5
    assert ms.modulus_from_spec("power:2")(0.5) == 0.25
    assert ms.modulus_from_spec({"name": "log-inverse"})(1.0) == 1.0
    for name in ("sqrt", "power:0.3"):
        assert ms.modulus_from_spec(name).vanishes_at_zero()
    # 1/(1 + log(1/tau)) is still about 0.035 at tau = 1e-12
    assert not ms.modulus_from_spec("log-inverse").vanishes_at_zero()
    with pytest.raises(ValueError):
        ms.modulus_from_spec("power:-1")
    with pytest.raises(ValueError):
        ms.modulus_from_spec("wiggle")


def test_csv_modulus(tmp_path):
    path = tmp_path / "g.csv"
    tau = np.geomspace(1e-6, 1, 40)
    path.write_text("tau,G\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(tau, np.sqrt(tau))))
    G = ms.modulus_from_spec({"csv": str(path)})
    assert G(tau[10]) == pytest.approx(math.sqrt(tau[10]), rel=1e-12)
    assert G(1e-9) < 1e-3 and G(1e-9) >= 0
    with pytest.raises(ValueError):
        ms.modulus_from_spec({"samples": [[0.5, 1.0], [0.2, 2.0]]})


@pytest.mark.parametrize(
    "fn, expect",
    [
        (np.sqrt, np.sqrt),
        (lambda t: t**2, lambda t: t),
        (lambda t: np.where(np.abs(t - 0.5) < 1e-9, 1.0, 0.0), lambda t: np.minimum(2 * t, 1.0)),
    ],
)
def test_majorant_examples(fn, expect):
    grid = np.linspace(0.01, 1.0, 100)
    gbar = ms.concave_majorant(fn, grid)
    slopes = np.linspace(0, 20, 4001)
    brute = oracles.brute_majorant(np.asarray(fn(grid), dtype=float), grid, slopes)
    assert gbar(grid) == pytest.approx(brute, abs=5e-3)
    assert np.all(gbar(grid) >= fn(grid) - 1e-15)
    # on the grid the hull matches the closed-form majorant up to chord error
    assert gbar(grid) == pytest.approx(expect(grid), abs=2e-2)


def test_majorant_is_concave_nondecreasing():
    rng = np.random.default_rng(4)
    grid = np.sort(rng.uniform(0, 1, 300))
    vals = rng.uniform(0, 1, 300) * np.sqrt(grid)
    gbar = ms.concave_majorant(lambda s: np.interp(s, grid, vals), grid)
    assert np.all(np.diff(gbar.y) >= 0)
    assert np.all(np.diff(gbar.slopes[:-1]) <= 1e-12)
    assert np.all(gbar(grid) >= vals - 1e-15)
    with pytest.raises(ValueError):
        ms.concave_majorant(np.sqrt, [])
    with pytest.raises(ValueError):
        ms.concave_majorant(lambda s: np.full_like(s, np.inf), [0.1, 0.2])


def test_mollifier_moments():
    mol = ms.mollifier()
    from scipy import integrate

    mass = integrate.quad(lambda x: mol.phi(np.array([x]))[0], 1, 2, epsabs=1e-15)[0]
    assert mass == pytest.approx(1.0, abs=1e-12)
    assert mol.m1 == pytest.approx(1.5, abs=1e-12)
    for u in (1.1, 1.5, 1.83):
        ref = integrate.quad(lambda x: x * mol.phi(np.array([x]))[0], u, 2, epsabs=1e-15)[0]
        assert float(mol.psi1(u)) == pytest.approx(ref, abs=1e-12)


def test_regularize_examples():
    const = ms.smooth_regularize(ms.PiecewiseLinear(np.array([0.0, 1e-6, 1.0]), np.array([0.0, 2.0, 2.0])))
    assert const.gtilde([0.01, 0.3])[0] == pytest.approx(2.0, abs=1e-12)
    lin = ms.smooth_regularize(ms.PiecewiseLinear(np.array([0.0, 1.0]), np.array([0.0, 1.0])))
    tau = np.array([0.01, 0.2, 0.4])
    assert lin.gtilde(tau) == pytest.approx(1.5 * tau, rel=1e-12)
    with pytest.raises(ValueError):
        ms.smooth_regularize(ms.PiecewiseLinear(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.1, 1.0])))


def test_regularized_shape_and_quadrature():
    gbar = ms.concave_majorant(np.sqrt, GRID)
    reg = ms.smooth_regularize(gbar)
    tau = np.geomspace(1e-10, 0.9, 60)
    assert np.all(reg(tau) > np.sqrt(tau))
    assert np.all(reg.d1(tau) > 0) and np.all(reg.d2(tau) < 0)
    for t in (1e-9, 3e-5, 0.02, 0.4):
        for k, fn in enumerate((reg.gtilde, reg.gtilde_d1, reg.gtilde_d2)):
            q, err = ms.gtilde_by_quadrature(reg, t, k)
            assert float(fn(t)[0]) == pytest.approx(q, rel=1e-9, abs=10 * err)


def test_density_identities(sqrt_plan):
    d = sqrt_plan.density
    y = np.geomspace(1e-3, 1.0, 20) * d.norm
    L = np.log(math.e**2 * d.norm / y)
    assert d.U(y) == pytest.approx(1 / (y * L * L), rel=1e-14)
    # U + y U' > 0 keeps the second density condition positive
    assert np.all(d.U(y) + y * d.U_d1(y) > 0)
    with pytest.raises(ValueError):
        d.U(d.norm * math.e**2)
    tau = np.geomspace(1e-8, 0.9, 50)
    h = d(tau)
    assert np.all(np.diff(h) < 0)
    # F' = h by central differences
    for t in (1e-5, 0.1):
        e = t * 1e-5
        fd = (d.integral(t + e)[0] - d.integral(t - e)[0]) / (2 * e)
        assert fd == pytest.approx(d(t)[0], rel=1e-6)
    assert d.integral(1.0)[0] == pytest.approx(0.5, rel=1e-12)


def test_inverse_consistency(sqrt_plan):
    d = sqrt_plan.density
    ys = np.array([2.0, 10.0, 1e3, 1e6])
    ys = ys[ys > d(1.0)[0]]
    tau = d.inverse(ys)
    assert d(tau) == pytest.approx(ys, rel=1e-9)
    assert d.inverse([0.5 * d(1.0)[0]])[0] == 1.0


def test_synthetic_power_density():
    plan = ms.build_sequence(PowerDensity(), 1.0, 10)
    # the normalization is exact up to the reported tail bracket
    total = math.pi**2 / 6
    assert abs(plan.c0 - 1 / total) <= plan.c0 * plan.tail_f.half / total
    assert plan.c0 == pytest.approx(6 / math.pi**2, rel=1e-8)
    k = np.arange(1, 11)
    assert plan.sizes == pytest.approx(plan.c0 / k**2, rel=1e-12)
    s1, s2 = plan.f_tail(5)
    assert s1.mid - s1.half <= math.pi**2 / 6 - math.fsum(1 / k[:4] ** 2) <= s1.mid + s1.half
    assert s2.mid == pytest.approx(math.pi**4 / 90 - math.fsum(1 / k[:4] ** 4), rel=1e-9)


def test_sequence_normalization(sqrt_plan):
    p = sqrt_plan
    assert p.sizes == pytest.approx(p.c0 * p.f(np.arange(1, p.K + 1)), rel=1e-14)
    assert np.all(np.diff(p.sizes) <= 0)
    total = math.fsum(p.sizes) + p.c0 * p.tail_f.mid
    assert total == pytest.approx(0.5, rel=1e-12)
    assert p.c0 * p.tail_f.half <= 1e-3 * p.A
    assert any("exceeds 1" in f for f in ms.build_sequence(p.density, 2.0, 50).flags)
    with pytest.raises(ValueError):
        ms.build_sequence(p.density, 0.0, 5)


def test_M_of_tau(sqrt_plan):
    d = sqrt_plan.density
    for t in (1e-6, 1e-3, 0.3):
        M = ms.M_of_tau(sqrt_plan, t)
        assert isinstance(M, int)
        assert M - 1 < d(t)[0] <= M
    assert list(ms.M_of_tau(d, [1e-6, 1e-3])) == [ms.M_of_tau(d, 1e-6), ms.M_of_tau(d, 1e-3)]
    with pytest.raises(ValueError):
        ms.M_of_tau(d, 1.0)


def test_tail_bracket_contains_direct_sum(sqrt_plan):
    d = sqrt_plan.density
    M = 20
    s1, s2 = sqrt_plan.f_tail(M)
    f = d.inverse(np.arange(M, 4000, dtype=float))
    tail, _ = ms._integral_tail(d, 4000.0)
    direct = math.fsum(f) + tail
    assert abs(direct - s1.mid) <= s1.half + 1e-9 * direct


def test_verify_limits_trends(sqrt_plan):
    G = ms.modulus_from_spec("sqrt")
    taus = [1e-1, 1e-3, 1e-5, 1e-7]
    rows = ms.verify_limits(sqrt_plan, G, taus)
    assert [r["tau"] for r in rows] == sorted(taus, reverse=True)
    r1 = [r["ratio1"] for r in rows]
    r2 = [r["ratio2"] for r in rows]
    assert all(b > a for a, b in zip(r1, r1[1:]))
    assert all(b < a for a, b in zip(r2, r2[1:]))
    one = ms.verify_limits(sqrt_plan, G, [1e-3])
    assert len(one) == 1 and one[0] == rows[1]
    assert ms.verify_limits(sqrt_plan, G, taus, jobs=2) == rows


def test_plan_export_and_teeth(sqrt_plan, tmp_path):
    path = tmp_path / "plan.json"
    ms.write_plan(sqrt_plan, path)
    doc = json.loads(path.read_text())
    assert doc["sizes"] == pytest.approx(list(sqrt_plan.sizes), rel=0)
    assert doc["c0"] == sqrt_plan.c0
    live = ms.teeth_from_plan(sqrt_plan, count=6)
    frozen = ms.teeth_from_plan(doc, count=6)
    assert live.sizes == frozen.sizes and len(live.sizes) == 6
    assert live.tail(3) == pytest.approx(frozen.tail(3), rel=1e-14)
    with pytest.raises(ValueError):
        frozen.tail(500)
    assert live.tail(500)[0] > 0
    p = cd.build_polygon(live, 4)
    assert p.area == pytest.approx(9 + math.fsum(np.asarray(live.sizes[:3]) ** 2) / 4, rel=1e-14)
