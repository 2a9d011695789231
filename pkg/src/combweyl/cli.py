"""Command-line entry point.  Every subcommand reads one JSON config."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .experiment import ConfigError, RunConfig, csv_text

STEPS = {
    ("domain", "build"): ["domains"],
    ("spectrum", "solve"): ["spectra"],
    ("trace", "eval"): ["traces"],
    ("riesz", "eval"): ["spectra"],
    ("counterexample", "run"): ["counterexample", "limits"],
    ("fit", None): ["fit"],
    ("run", None): None,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--cache-dir", dest="cache", help="spectrum cache directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--seed", type=int, help="random seed for iterative solvers")


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="combweyl", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for group, action in STEPS:
        if action is None:
            _common(sub.add_parser(group))
        else:
            g = sub.add_parser(group)
            gs = g.add_subparsers(dest="action", required=True)
            _common(gs.add_parser(action))
    v = sub.add_parser("verify")
    vs = v.add_subparsers(dest="action", required=True)
    for name in ("kernels", "bounds", "laplace", "limits"):
        _common(vs.add_parser(name))
    return ap


def load_config(args: argparse.Namespace) -> RunConfig:
    doc = json.loads(args.config.read_text()) if args.config else {}
    for key in ("cache", "out", "jobs", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    return RunConfig.from_dict(doc)


def _verify(action: str, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if action == "kernels":
        res = ex.verify_kernels()
        (out / "verify_kernels.csv").write_text(
            csv_text(["L", "x", "t", "images", "spectral", "abs_diff"], res["rows"])
        )
        ok = res["max_abs_diff"] <= 1e-10
        print(f"kernels: max |images - spectral| = {res['max_abs_diff']:.3e} ({'pass' if ok else 'FAIL'})")
    elif action == "bounds":
        res = ex.verify_bounds()
        ok = not any(res["violations"].values())
        for k, n in res["checked"].items():
            print(f"bounds/{k}: {res['violations'][k]} violations of {n}")
        (out / "verify_bounds.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    elif action == "laplace":
        rows = ex.verify_laplace()
        worst = max(r["gap"] for r in rows)
        ok = worst <= 1e-8
        keys = ["spectrum", "gamma", "t", "lhs", "rhs", "gap"]
        (out / "verify_laplace.csv").write_text(csv_text(keys, [[r[k] for k in keys] for r in rows]))
        print(f"laplace: max gap {worst:.3e} ({'pass' if ok else 'FAIL'})")
    else:
        cfg = dataclasses.replace(cfg, pipeline=cfg.pipeline or {"A": 0.5, "K": 200})
        ex.run(cfg, steps=["limits"])
        import csv as _csv

        rows = list(_csv.DictReader(open(out / "limits.csv")))
        r1 = [float(r["ratio1"]) for r in rows]
        r2 = [float(r["ratio2"]) for r in rows]
        # rows are sorted by decreasing tau
        ok = all(b > a for a, b in zip(r1, r1[1:])) and all(b < a for a, b in zip(r2, r2[1:]))
        print(f"limits: ratio1 increasing and ratio2 decreasing toward tau -> 0: {'pass' if ok else 'FAIL'}")
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "verify":
        return _verify(args.action, cfg)
    steps = STEPS[(args.command, getattr(args, "action", None))]
    if args.command == "spectrum" and cfg.N < 1:
        print("config error: spectrum solve needs N >= 1", file=sys.stderr)
        return 2
    if args.command == "riesz" and (cfg.N < 1 or not cfg.lam):
        print("config error: riesz eval needs N >= 1 and a lambda grid", file=sys.stderr)
        return 2
    if args.command == "counterexample" and cfg.pipeline is None:
        cfg = dataclasses.replace(cfg, pipeline={"A": 0.5, "K": 200})
    manifest = ex.run(cfg, steps=steps)
    for name in manifest["outputs"]:
        print(Path(cfg.out) / name)
    if manifest["failures"]:
        print(f"{len(manifest['failures'])} solve(s) failed; see failures.json", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
