"""Command-line entry point: ``hypex validate | region | simulate | compare | export``.

Exit codes: 0 success, 2 validation failure, 3 budget or infeasibility,
4 parse error.  Every file written with ``--out`` carries a provenance block
(tool version, seed, solver settings).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys

import numpy as np
import yaml

from . import __version__
from .errors import ConfigInvalid, HypexError, TheoremNotApplicable
from .exponents import (
    SearchConfig,
    check_independent_sides,
    proposition1_corner,
    proposition2_region,
    theorem1_inner_exponents,
    theorem2_boundary,
    theorem3_region,
)
from .modelfile import dump_model, load_aux, load_model
from .probkit import marginalize, testing_against_independence
from .protocols import (
    ExponentFit,
    SchemeConfig,
    run_positive_rate_scheme,
    run_zero_rate_concurrent,
    run_zero_rate_cooperative,
)

REGION_SCHEMA = "hypex-region/1"
SIM_SCHEMA = "hypex-simulation/1"
CSV_COLUMNS = ("schema_version", "theorem", "point_index", "theta1_nats", "theta2_nats", "tool_version", "seed", "solver")
THEOREMS = ("1", "2", "3", "prop1", "prop2")
SCHEMES = ("zero-coop", "concurrent", "positive-rate")


# -- helpers ----------------------------------------------------------------

def _file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def provenance(args, solver: dict, seed=None) -> dict:
    return {
        "tool": "hypex",
        "tool_version": __version__,
        "command": args.command,
        "model": os.path.basename(args.model),
        "model_sha256": _file_digest(args.model),
        "seed": seed,
        "solver": solver,
    }


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, tuples to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _int_list(text: str, name: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigInvalid(f"--{name} expects comma-separated integers, got {text!r}") from None


def _float_list(text: str, name: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigInvalid(f"--{name} expects comma-separated numbers, got {text!r}") from None


def _unit(args):
    return (math.log(2), "bits") if getattr(args, "bits", False) else (1.0, "nats")


# -- applicability ----------------------------------------------------------

def applicability(model) -> dict:
    """Which results apply to the model, each with a short reason."""
    flags = {}
    if model.M == 2 and model.cooperative:
        P, Pbar = model.null_and_alternative()
        positive = bool(Pbar.mass.min() > 0)
        why = "" if positive else "alternative law has zero entries"
        for key in ("3", "prop1", "1"):
            flags[key] = (positive, why)
        gap = check_independent_sides(P)
        product_alt = Pbar.allclose(testing_against_independence(P), atol=1e-9)
        if gap > 1e-9:
            flags["2"] = (False, "Y1⊥Y2 fails")
        elif not product_alt:
            flags["2"] = (False, "alternative is not the product of the null marginals")
        else:
            flags["2"] = (True, "")
        flags["prop2"] = (False, "needs i1 != i2")
    else:
        why = "needs M = 2 and i1 = i2"
        for key in ("1", "2", "3", "prop1"):
            flags[key] = (False, why)
        flags["prop2"] = _prop2_flag(model)
    return flags


def _prop2_flag(model):
    if model.i1 == model.i2:
        return False, "needs i1 != i2"
    if marginalize(model.pmf(model.i1), ("X", "Y1")).mass.min() <= 0:
        return False, f"hypothesis {model.i1} has zero (X, Y1) entries"
    if model.pmf(model.i2).mass.min() <= 0:
        return False, f"hypothesis {model.i2} has zero entries"
    px = [marginalize(model.pmf(m), "X").mass for m in range(1, model.M + 1)]
    for a in range(model.M):
        for b in range(a + 1, model.M):
            if np.allclose(px[a], px[b], atol=1e-12):
                return False, f"hypotheses {a + 1} and {b + 1} share their X-marginal"
    return True, ""


def _label(key):
    return {"prop1": "Proposition 1", "prop2": "Proposition 2"}.get(key, f"Theorem {key}")


def _require(model, key):
    ok, why = applicability(model)[key]
    if not ok:
        raise TheoremNotApplicable(f"{_label(key)} does not apply: {why}")


# -- commands ---------------------------------------------------------------

def cmd_validate(args) -> int:
    model = load_model(args.model)
    flags = applicability(model)
    parts = ["ok"]
    for key in ("3", "2", "1", "prop1", "prop2"):
        ok, why = flags[key]
        parts.append(f"{_label(key)} applicable" if ok else f"{_label(key)} not applicable ({why})")
    print("; ".join(parts))
    print(f"M = {model.M}, i1 = {model.i1}, i2 = {model.i2}, alphabet sizes (X, Y1, Y2) = {model.shape}")
    for m, p in enumerate(model.pmfs, start=1):
        name = model.names[m - 1] if model.names else f"H{m}"
        print(f"  hypothesis {m} ({name}): min entry {p.mass.min():.6g}, strictly positive: {bool(p.mass.min() > 0)}")
    return 0


def _region_rows(args, model):
    """Compute the requested region; returns (rows of (theta1, theta2), solver dict)."""
    key = args.theorem
    _require(model, key)
    if key == "prop2":
        pair = proposition2_region(model)
        return [pair.as_tuple()], {"method": "iterative scaling", "result": "rectangle corner"}
    P, Pbar = model.null_and_alternative()
    if key == "3":
        return [theorem3_region(P, Pbar).as_tuple()], {"method": "iterative scaling"}
    if key == "prop1":
        return [proposition1_corner(P, Pbar).as_tuple()], {"method": "closed form"}
    if key == "1":
        if args.aux is None:
            raise ConfigInvalid("--theorem 1 needs --aux FILE")
        aux = load_aux(args.aux, model.shape).for_model(P)
        pair = theorem1_inner_exponents(P, Pbar, aux, args.R1, args.R2)
        return [pair.as_tuple()], {
            "method": "iterative scaling", "aux": os.path.basename(args.aux),
            "aux_rates": list(aux.rates_used), "R1": args.R1, "R2": args.R2,
        }
    if args.R1 is None:
        raise ConfigInvalid("--theorem 2 needs --R1")
    search = SearchConfig(points=args.points, grid_resolution=args.grid, starts=args.starts, seed=args.seed)
    boundary = theorem2_boundary(P, args.R1, args.u_card, search, workers=args.workers)
    solver = {"method": "lattice grid + SLSQP polish", "R1": args.R1, "u_cardinality": boundary.provenance["u_cardinality"],
              "search": search.as_dict()}
    return [p.as_tuple() for p in boundary.points], solver


def cmd_region(args) -> int:
    model = load_model(args.model)
    rows, solver = _region_rows(args, model)
    scale, unit = _unit(args)
    print(f"{_label(args.theorem)} ({unit})")
    if len(rows) == 1:
        print(f"theta1* = {rows[0][0] / scale:.10g}")
        print(f"theta2* = {rows[0][1] / scale:.10g}")
    else:
        print(f"{'point':>5}  {'theta1':>14}  {'theta2':>14}")
        for i, (t1, t2) in enumerate(rows):
            print(f"{i:>5}  {t1 / scale:>14.8g}  {t2 / scale:>14.8g}")
    if args.out:
        prov = provenance(args, solver, seed=args.seed)
        if args.out.endswith(".csv"):
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            solver_text = json.dumps(_clean(solver), sort_keys=True, separators=(",", ":"))
            for i, (t1, t2) in enumerate(rows):
                w.writerow((REGION_SCHEMA, args.theorem, i, repr(float(t1)), repr(float(t2)), __version__, args.seed, solver_text))
            _write(args.out, buf.getvalue())
        else:
            doc = {
                "schema_version": REGION_SCHEMA,
                "theorem": args.theorem,
                "points": [{"theta1_nats": t1, "theta2_nats": t2} for t1, t2 in rows],
                "provenance": prov,
            }
            _write(args.out, dumps(doc))
    return 0


def _scheme_config(args) -> SchemeConfig:
    return SchemeConfig(
        n=_int_list(args.n, "n"),
        trials=args.trials,
        seed=args.seed,
        delta=args.delta,
        mu=_float_list(args.mu, "mu") if args.mu else None,
        R1=args.R1,
        R2=args.R2,
        xi=args.xi,
        fixed_codebook=args.fixed_codebook,
        budget=args.budget,
        estimator=args.estimator,
        workers=args.workers,
    )


def _run_scheme(args, model):
    cfg = _scheme_config(args)
    if args.scheme == "concurrent":
        _require(model, "prop2")
        return run_zero_rate_concurrent(model, cfg), None
    _require(model, "3")
    P, Pbar = model.null_and_alternative()
    if args.scheme == "zero-coop":
        return run_zero_rate_cooperative(P, Pbar, cfg), None
    if args.aux is None:
        raise ConfigInvalid("--scheme positive-rate needs --aux FILE")
    aux = load_aux(args.aux, model.shape).for_model(P)
    return run_positive_rate_scheme(P, Pbar, aux, cfg), aux


def _print_summary(report):
    for rec in report.records:
        n = rec["n"]
        print(f"n = {n}, trials = {rec['trials']}")
        print(f"  {'detector':>8}  {'hypothesis':>10}  {'kind':>5}  {'error':>12}  {'95% interval':>27}")
        for k in (1, 2):
            target = report.i1 if k == 1 else report.i2
            for m in range(1, report.M + 1):
                est = rec["rates"][k][m]
                kind = "beta" if m == target else "alpha"
                print(f"  {k:>8}  {m:>10}  {kind:>5}  {est.rate:>12.6g}  [{est.lo:>11.6g}, {est.hi:>11.6g}]")
    for k in (1, 2):
        fit = report.fits.get(k)
        if isinstance(fit, ExponentFit):
            cens = f", censored n = {[c['n'] for c in fit.censored]}" if fit.censored else ""
            print(f"detector {k}: fitted exponent {fit.slope:.6g} (stderr {fit.slope_stderr:.3g}, r2 {fit.r2:.4f}){cens}")
        elif fit is not None:
            print(f"detector {k}: no fit ({fit['error']})")


def _simulation_doc(args, report) -> dict:
    return {
        "schema_version": SIM_SCHEMA,
        "report": report.to_dict(),
        "provenance": provenance(args, {"scheme": args.scheme, "config": report.config}, seed=args.seed),
    }


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    report, _ = _run_scheme(args, model)
    _print_summary(report)
    text = dumps(_simulation_doc(args, report))
    if args.out:
        _write(args.out, text)
    if args.json:
        sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    model = load_model(args.model)
    report, aux = _run_scheme(args, model)
    if args.scheme == "concurrent":
        theory = proposition2_region(model)
    else:
        P, Pbar = model.null_and_alternative()
        theory = theorem3_region(P, Pbar) if aux is None else theorem1_inner_exponents(P, Pbar, aux)
    _print_summary(report)
    rows = []
    flagged = False
    print(f"{'detector':>8}  {'theory':>12}  {'empirical':>12}  {'gap':>12}  {'stderr':>10}  flag")
    for k, th in zip((1, 2), theory.as_tuple()):
        fit = report.fits.get(k)
        if not isinstance(fit, ExponentFit):
            print(f"{k:>8}  {th:>12.6g}  {'n/a':>12}  {'n/a':>12}  {'n/a':>10}  no fit")
            rows.append({"detector": k, "theory": th, "empirical": None, "gap": None, "stderr": None, "exceeds_theory": None})
            continue
        gap = fit.slope - th
        se = fit.slope_stderr
        exceeds = bool(math.isfinite(se) and gap > 3 * se)
        flagged |= exceeds
        flag = "EMPIRICAL EXCEEDS THEORY BY > 3 STDERR" if exceeds else "ok"
        print(f"{k:>8}  {th:>12.6g}  {fit.slope:>12.6g}  {gap:>+12.6g}  {se:>10.3g}  {flag}")
        rows.append({"detector": k, "theory": th, "empirical": fit.slope, "gap": gap, "stderr": se, "exceeds_theory": exceeds})
    if args.out:
        doc = _simulation_doc(args, report)
        doc["schema_version"] = "hypex-compare/1"
        doc["comparison"] = rows
        _write(args.out, dumps(doc))
    return 0


def cmd_export(args) -> int:
    model = load_model(args.model)
    if args.format == "json":
        doc = {
            "format": "hypex-model/1",
            "axis_order": ["X", "Y1", "Y2"],
            "M": model.M, "i1": model.i1, "i2": model.i2,
            "shape": list(model.shape),
            "hypotheses": [{"name": (model.names or [None] * model.M)[m], "pmf": p.mass} for m, p in enumerate(model.pmfs)],
            "provenance": provenance(args, {}),
        }
        text = dumps(doc)
    else:
        text = dump_model(model) + yaml.safe_dump({"provenance": _clean(provenance(args, {}))}, sort_keys=True)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# -- parser -----------------------------------------------------------------

def _default_workers() -> int:
    raw = os.environ.get("HYPEX_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hypex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file and report which results apply")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("region", help="compute an exponent region")
    p.add_argument("model")
    p.add_argument("--theorem", choices=THEOREMS, required=True)
    p.add_argument("--aux", help="auxiliary channel file (theorem 1)")
    p.add_argument("--R1", type=float)
    p.add_argument("--R2", type=float)
    p.add_argument("--u-card", type=int, dest="u_card")
    p.add_argument("--points", type=int, default=33)
    p.add_argument("--grid", type=int, default=8, help="lattice resolution of the channel search")
    p.add_argument("--starts", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bits", action="store_true", help="print exponents in bits (files stay in nats)")
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--out", help="write .csv or .json")
    p.set_defaults(func=cmd_region)

    for name, func, helptext in (
        ("simulate", cmd_simulate, "Monte Carlo error rates of a detection scheme"),
        ("compare", cmd_compare, "fitted empirical exponents against theory"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("model")
        p.add_argument("--scheme", choices=SCHEMES, required=True)
        p.add_argument("--n", default="50,100,200", help="comma-separated blocklengths")
        p.add_argument("--trials", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--delta", type=float, default=0.05)
        p.add_argument("--mu", help="mu,mu',mu'' for the concurrent scheme")
        p.add_argument("--aux", help="auxiliary channel file (positive-rate scheme)")
        p.add_argument("--R1", type=float)
        p.add_argument("--R2", type=float)
        p.add_argument("--xi", type=float, default=0.05, help="rate slack above the auxiliary informations")
        p.add_argument("--fixed-codebook", action="store_true", dest="fixed_codebook")
        p.add_argument("--budget", type=int, default=20_000_000)
        p.add_argument("--estimator", choices=("plain", "tilted"), default="plain")
        p.add_argument("--workers", type=int, default=_default_workers())
        p.add_argument("--out", help="write the JSON report here")
        if name == "simulate":
            p.add_argument("--json", action="store_true", help="also print the JSON report")
        p.set_defaults(func=func)

    p = sub.add_parser("export", help="re-emit a model in canonical form")
    p.add_argument("model")
    p.add_argument("--format", choices=("yaml", "json"), default="yaml")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HypexError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
