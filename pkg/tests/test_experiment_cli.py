import csv
import json
import math

import numpy as np
import pytest

from combweyl import cli
from combweyl import exact_kernels as ek
from combweyl import experiment as ex
from combweyl import spectral_functionals as sf

SQUARE = {"domain": {"sequence": {"kind": "explicit", "sizes": []}}, "M": [1], "side": 1.0}


def small_cfg(tmp_path, **kw):
    doc = {
        "domain": {"sequence": {"kind": "dyadic", "A": 1.0, "count": 4}},
        "M": [1, 2, 3],
        "spacings": [1 / 16, 1 / 32],
        "t": list(np.geomspace(0.01, 0.1, 5)),
        "out": str(tmp_path / "out"),
        "cache": str(tmp_path / "cache"),
    }
    doc.update(kw)
    return ex.RunConfig.from_dict(doc)


def test_config_validation(tmp_path):
    with pytest.raises(ex.ConfigError, match="empty"):
        small_cfg(tmp_path, t=[])
    with pytest.raises(ex.ConfigError, match="increasing"):
        small_cfg(tmp_path, t=[0.1, 0.01])
    with pytest.raises(ex.ConfigError, match="aligned"):
        small_cfg(tmp_path, M=[1, 2, 3, 4], spacings=[1 / 8, 1 / 16])
    with pytest.raises(ex.ConfigError, match="halve"):
        small_cfg(tmp_path, spacings=[1 / 16, 1 / 64])
    with pytest.raises(ex.ConfigError, match="unknown"):
        small_cfg(tmp_path, colour="red")
    with pytest.raises(ex.ConfigError):
        small_cfg(tmp_path, trace_method="eigen")
    cfg = small_cfg(tmp_path)
    assert ex.RunConfig.from_dict(cfg.to_dict()) == cfg


def test_csv_text_round_trips_floats():
    text = ex.csv_text(["a", "b"], [[0.1, 1 / 3], [math.pi, 7]])
    rows = list(csv.reader(text.splitlines()))
    assert float(rows[2][0]) == math.pi and float(rows[1][1]) == 1 / 3


def test_fit_synthetic_recovery():
    t = np.geomspace(1e-3, 0.1, 12)
    a, b, c = 9.0, -6.2, 0.9
    trace = (a + b * np.sqrt(t) + c * t) / (4 * math.pi * t)
    fit = ex.fit_coefficients(sf.TraceSeries(t, trace, np.zeros_like(t)))
    assert (fit.a, fit.b, fit.c) == pytest.approx((a, b, c), abs=1e-10)
    assert fit.used == 12


def test_fit_unit_square_exact_traces():
    t = np.geomspace(1e-4, 1e-2, 10)
    trace = np.array([ek.trace_box([1.0, 1.0], s) for s in t])
    fit = ex.fit_coefficients(sf.TraceSeries(t, trace, np.zeros_like(t)))
    assert fit.a == pytest.approx(1.0, abs=1e-8)
    assert fit.b == pytest.approx(-2 * math.sqrt(math.pi), rel=1e-2)
    assert fit.c == pytest.approx(math.pi, rel=5e-2)


def test_fit_rejects_thin_data():
    t = np.geomspace(1e-3, 1e-2, 3)
    with pytest.raises(ValueError, match="4"):
        ex.fit_coefficients(sf.TraceSeries(t, 1 / t, np.zeros_like(t)))
    t = np.linspace(0.01, 0.02, 6)
    with pytest.raises(ValueError, match="half a decade"):
        ex.fit_coefficients(sf.TraceSeries(t, 1 / t, np.zeros_like(t)))


def test_corner_slope():
    t = np.array([0.01, 0.02, 0.04])
    slope, se = ex.corner_slope(t, 0.3 * t, np.full(3, 1e-6))
    assert slope == pytest.approx(0.3, rel=1e-12) and se < 1e-4


def test_square_run_fits_area(tmp_path):
    cfg = ex.RunConfig.from_dict(
        dict(SQUARE, spacings=[1 / 32, 1 / 64], t=list(np.geomspace(2e-3, 5e-2, 8)), out=str(tmp_path / "sq"))
    )
    manifest = ex.run(cfg, steps=["domains", "traces", "fit"])
    fit = json.loads((tmp_path / "sq" / "fit.json").read_text())["1"]
    assert fit["a"] == pytest.approx(1.0, abs=1e-2)
    assert fit["b"] == pytest.approx(-2 * math.sqrt(math.pi), rel=5e-2)
    assert manifest["summary"]["lower_bound"]["fail"] == 0
    with open(tmp_path / "sq" / "traces.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    for r in rows:
        exact = ek.trace_box([1.0, 1.0], float(r["t"]))
        assert abs(float(r["trace"]) - exact) <= 3 * float(r["disc_error"]) + 1e-9 * exact


def test_run_is_deterministic_and_hashes_config(tmp_path):
    cfg = small_cfg(tmp_path, N=8, lam=[30.0, 60.0, 1e6])
    a = ex.run(cfg, tmp_path / "a", steps=["domains", "spectra", "traces"])
    b = ex.run(cfg, tmp_path / "b", steps=["domains", "spectra", "traces"])
    assert a["outputs"] == b["outputs"]
    for name in a["outputs"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert {"spectra.csv", "riesz.csv", "traces.csv", "corner_slopes.csv", "domains/M2.json"} <= set(a["outputs"])
    other = small_cfg(tmp_path, N=8, lam=[30.0, 60.0, 1e6], t=list(np.geomspace(0.01, 0.1, 6)))
    assert other.digest() != cfg.digest()
    doc = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert doc["configHash"] == cfg.digest()
    riesz = (tmp_path / "a" / "riesz.csv").read_text()
    assert "beyond-range" in riesz


def test_cli_subcommands(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(dict(SQUARE, spacings=[1 / 16, 1 / 32], t=[0.01, 0.02, 0.05, 0.1], N=4, lam=[30.0, 80.0])))
    out = tmp_path / "o"
    assert cli.main(["domain", "build", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "domains" / "M1_vertices.csv").exists()
    assert cli.main(["spectrum", "solve", "--config", str(cfg), "--out", str(out), "--cache-dir", str(tmp_path / "c")]) == 0
    assert cli.main(["riesz", "eval", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["trace", "eval", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "traces.csv").exists()
    assert cli.main(["verify", "laplace", "--out", str(out)]) == 0
    assert "pass" in capsys.readouterr().out


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"t": []}))
    assert cli.main(["trace", "eval", "--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err
    good = tmp_path / "good.json"
    good.write_text(json.dumps(dict(SQUARE, spacings=[1 / 16])))
    assert cli.main(["spectrum", "solve", "--config", str(good), "--out", str(tmp_path / "x")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["trace"])


@pytest.mark.slow
def test_cli_counterexample_and_limits(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(dict(SQUARE, spacings=[1 / 16], t=[0.01, 0.1], pipeline={"A": 0.5, "K": 50, "tau": [1e-2, 1e-4, 1e-6], "t": [1e-4, 1e-8, 1e-12]})))
    out = tmp_path / "ce"
    assert cli.main(["counterexample", "run", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "counterexample_bound.csv") as fh:
        ratios = [float(r["ratio_lower_bound"]) for r in csv.DictReader(fh)]
    # rows are sorted by increasing t, so the certified ratio grows as t -> 0
    assert ratios[0] > ratios[1] > ratios[2]
    assert cli.main(["verify", "limits", "--config", str(cfg), "--out", str(out)]) == 0
