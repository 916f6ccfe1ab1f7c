"""Command-line front end.

Every subcommand writes its results to files. Exit status is 0 on success,
2 on invalid input and 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataio import (
    SWEEP_SPEC_SCHEMA_ID,
    AnalysisPlan,
    SchemaError,
    analyze,
    atomic_write,
    canonical_dumps,
    dataset_to_json,
    ingest,
    report_to_json,
    run_block,
    validate,
    write_json,
)
from .experiments import SweepSpec, gateset_audit, heatmap_sweep, regime_noise, sequence_lengths, spam_perturbation_audit, write_rows
from .fitting import fit_comp_dominant, fit_double_exponential, fit_exponential, fit_linear
from .noise import NoiseModel
from .simulate import PROTOCOLS, DecayCurve, RBProtocolConfig, estimate_decays, run_protocol
from .fitting import REGIMES

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
MODELS = (
    "linear",
    "exponential-plus-floor",
    "double-exponential",
    "comp-dominant-product",
    "retention-linear",
    "retention-exponential",
)

log = logging.getLogger("leakrb")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leakrb", description="Leakage-aware randomized benchmarking tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate an RB experiment and write a dataset")
    s.add_argument("--protocol", choices=PROTOCOLS, required=True)
    s.add_argument("--regime", choices=REGIMES, default="comp-dominant")
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--tau", type=float, required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--lengths", type=_ints)
    g.add_argument("--auto-lengths", action="store_true")
    s.add_argument("--sequences", type=int, default=30)
    s.add_argument("--shots", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--readout-flip", type=float, default=None)
    s.add_argument("--gadget", action="store_true", help="record gadget bits for non-lps protocols")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default="dataset.json")

    f = sub.add_parser("fit", help="fit one decay model to a dataset curve or a curve CSV")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--model", choices=MODELS, required=True)
    f.add_argument("--estimator", default=None)
    f.add_argument("--out", default="fit.json")

    w = sub.add_parser("sweep", help="run a heat-map sweep from a spec file")
    w.add_argument("--spec", required=True)
    w.add_argument("--out-csv", default="sweep.csv")
    w.add_argument("--out-json", default="sweep.json")
    w.add_argument("--workers", type=int, default=1)

    a = sub.add_parser("analyze", help="analyse a dataset with a plan")
    a.add_argument("--data", required=True)
    a.add_argument("--plan", required=True)
    a.add_argument("--out", default="report.json")

    u = sub.add_parser("audit", help="SPAM perturbation audit on exact decays")
    u.add_argument("--lambda", dest="lam", type=float, default=0.0)
    u.add_argument("--tau", type=float, default=0.0)
    u.add_argument("--no-seepage", action="store_true")
    u.add_argument("--delta-rho", type=_floats, default=[0.0])
    u.add_argument("--delta-pi", type=_floats, default=[1e-3, 5e-4])
    u.add_argument("--lengths", type=_ints, default=[1, 2, 4, 8, 16, 32])
    u.add_argument("--out", default="audit.json")

    h = sub.add_parser("gateset-audit", help="leaked-action histogram for a gateset")
    h.add_argument("--gateset", default="trapped-ion")
    h.add_argument("--out", default="gateset_audit.json")
    return p


def _read_curve_csv(path: Path, estimator: str | None) -> DecayCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    names = {r["estimator"] for r in rows}
    est = estimator or (names.pop() if len(names) == 1 else None)
    if est is None:
        raise ValueError(f"{path} holds several estimators; choose one with --estimator")
    rows = [r for r in rows if r["estimator"] == est]
    d_C = int(rows[0].get("d_C") or 4)
    return DecayCurve(est, [int(r["length"]) for r in rows], [float(r["survival"]) for r in rows], [float(r["stderr"]) for r in rows], d_C)


def _pick_curve(path: str, estimator: str | None) -> DecayCurve:
    if path.endswith(".csv"):
        return _read_curve_csv(Path(path), estimator)
    ds = ingest(path).to_rb_dataset()
    curves = {c.estimator: c for c in estimate_decays(ds)}
    est = estimator or next(iter(curves))
    if est not in curves:
        raise ValueError(f"dataset has no {est!r} curve; available: {sorted(curves)}")
    return curves[est]


def _fit(curve: DecayCurve, model: str):
    d = curve.d_C
    if model in ("linear", "retention-linear"):
        return fit_linear(curve)
    if model == "exponential-plus-floor":
        return fit_exponential(curve, 1.0 / d if curve.estimator in ("p_avg", "p_post") else "free")
    if model == "retention-exponential":
        return fit_exponential(curve, 0.0)
    if model == "double-exponential":
        return fit_double_exponential(curve)
    return fit_comp_dominant(curve)


def cmd_simulate(args) -> dict:
    lengths = sequence_lengths(args.regime, args.protocol, args.lam, args.tau) if args.auto_lengths else args.lengths
    nm = regime_noise(args.regime, args.lam, args.tau, readout_flip=args.readout_flip)
    cfg = RBProtocolConfig(
        args.protocol, lengths, n_sequences=args.sequences, n_shots=args.shots, rng_seed=args.seed,
        noise=nm, gadget=True if args.gadget else None,
    )
    ds = run_protocol(cfg, workers=args.workers)
    meta = {"regime": args.regime}
    write_json(args.out, dataset_to_json(ds, meta, run_block(args.seed, cfg.to_json())))
    return {"out": args.out, "records": len(ds.records)}


def cmd_fit(args) -> dict:
    curve = _pick_curve(args.inp, args.estimator)
    res = _fit(curve, args.model)
    out = {"curve": curve.to_rows(), "fit": res.to_json(), "run": run_block(None, {"in": args.inp, "model": args.model, "estimator": curve.estimator})}
    write_json(args.out, out)
    return {"out": args.out, "params": res.params}


def cmd_sweep(args) -> dict:
    data = json.loads(Path(args.spec).read_text())
    validate(data, SWEEP_SPEC_SCHEMA_ID)
    spec = SweepSpec.from_json(data)
    result = heatmap_sweep(spec, workers=args.workers)
    buf = io.StringIO()
    write_rows(buf, result.rows())
    atomic_write(args.out_csv, buf.getvalue())
    payload = {
        "spec": spec.to_json(),
        "summary": result.summary(),
        "cells": [c.to_json() for c in result.cells],
        "run": run_block(spec.seed, spec.to_json()),
    }
    write_json(args.out_json, payload)
    return {"out_csv": args.out_csv, "out_json": args.out_json, "rows": len(result.rows())}


def cmd_analyze(args) -> dict:
    ds = ingest(args.data)
    plan = AnalysisPlan.from_json(args.plan)
    rep = analyze(ds, plan)
    run = run_block(plan.seed, {"plan": plan.to_json(), "data": canonical_dumps(dataset_to_json(ds))})
    write_json(args.out, report_to_json(rep, run))
    return {"out": args.out, "estimates": rep.quantities()}


def cmd_audit(args) -> dict:
    nm = NoiseModel(args.lam, args.tau, seepage_enabled=not args.no_seepage)
    audit = spam_perturbation_audit(nm, args.delta_rho, args.delta_pi, args.lengths)
    out = audit.to_json()
    cfg = {"noise": nm.to_json(), "delta_rho": args.delta_rho, "delta_pi": args.delta_pi, "lengths": args.lengths}
    keys = sorted(audit.max_deviation)
    if len(args.delta_pi) >= 2:
        # first-order check: deviation ratio when delta_pi shrinks
        ratios = []
        for dr in args.delta_rho:
            devs = [audit.max_deviation[(dr, dp)] for dp in args.delta_pi]
            for (p0, d0), (p1, d1) in zip(zip(args.delta_pi, devs), zip(args.delta_pi[1:], devs[1:])):
                if d0 > 0:
                    ratios.append({"delta_rho": dr, "from": p0, "to": p1, "ratio": d1 / d0})
        out["scaling"] = ratios
    out["run"] = run_block(None, cfg)
    write_json(args.out, out)
    return {"out": args.out, "constant": audit.constant, "configs": len(keys)}


def cmd_gateset_audit(args) -> dict:
    res = gateset_audit(args.gateset)
    res["run"] = run_block(None, {"gateset": args.gateset})
    write_json(args.out, res)
    return {"out": args.out, "tvd_uniform": res["tvd_uniform"], "tvd_between": res["tvd_between"]}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "audit": cmd_audit,
    "gateset-audit": cmd_gateset_audit,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except (SchemaError, ValueError, KeyError, LookupError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"leakrb {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"leakrb {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(summary, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
