"""Command-line interface: ``prefwalk <subcommand> [options]``.

Items are 1-indexed on the command line and in every output file. Every JSON
output carries ``"schema": "prefwalk/v1"``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .debias import SCHEMA, VARIANCE_SCALINGS, Query, cross_fit, estimate
from .errors import ContractError, ParameterError, PrefwalkError
from .graph import (ComparisonGraph, connected_erdos_renyi, energy_identity_residual,
                    fisher_laplacian, laplacian_pseudoinverse, pseudoinverse_residuals)
from .multitest import HypothesisFamily, best_item_family, test_family
from .potentials import evaluate_rows, verify_potential_representation
from .scores import ModelSpec, OptimizerConfig, fit_mle
from .shift import density_ratio_from_spec, shift_estimate
from .simulate import (Dataset, domain_from_spec, monte_carlo_true_q, setting_sampler,
                       setting_scores, simulate_dataset)

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

SETTING_QUERIES = {
    "I": {"i0": 1, "j0": 4, "omega": {"kind": "interval", "lower": [0.3], "upper": [0.8]},
          "model": "linear"},
    "II": {"i0": 1, "j0": 4, "omega": {"kind": "halfspace", "beta": 1 / math.sqrt(50),
                                       "threshold": -0.5, "direction": ">"},
           "model": "mlp"},
}
DESK_GRID = [(20, 0.2)]
DESK_L = [500, 1000]
PAPER_GRID = [(20, 0.2), (50, 0.1), (80, 0.07)]
PAPER_L = [500, 1000, 1500, 2000]
STUDY_COLUMNS = ["n", "p", "L", "rep", "q_hat", "plugin", "v_hat", "v_tilde", "ci_lo", "ci_hi",
                 "covered", "ci_len"]


class VerificationFailure(Exception):
    """Raised by a subcommand whose checks did not all pass; carries the JSON payload."""

    def __init__(self, payload):
        super().__init__("verification failed")
        self.payload = payload


# ---------------------------------------------------------------- I/O helpers

def _clean(obj):
    """Make ``obj`` strict-JSON serializable: numpy scalars to Python, NaN/inf to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(text: str, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _read(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ParameterError(f"cannot read {path}: {exc.strerror}") from None


def graph_to_json(g: ComparisonGraph) -> str:
    obj = json.loads(g.to_json())
    return json.dumps({"schema": SCHEMA, **obj}) + "\n"


def load_graph(path) -> ComparisonGraph:
    try:
        return ComparisonGraph.from_json(_read(path))
    except json.JSONDecodeError as exc:
        raise ParameterError(f"graph file {path} is not valid JSON: {exc}") from None


def load_dataset(path, graph) -> Dataset:
    return Dataset.from_csv(_read(path), graph)


def _json_arg(text, what):
    """Parse an inline JSON value, or ``@path`` to read it from a file."""
    if isinstance(text, (dict, list)):
        return text
    if text.startswith("@"):
        text = _read(text[1:])
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{what} is not valid JSON: {exc}") from None


def _item(value, n, name):
    v = int(value)
    if not 1 <= v <= n:
        raise ParameterError(f"{name}={v} outside 1..{n}")
    return v - 1


def _model(args) -> tuple[ModelSpec, OptimizerConfig]:
    hidden = tuple(int(h) for h in str(args.hidden).split(",") if h.strip())
    spec = ModelSpec(kind=args.model, feature_map=args.feature_map, degree=args.degree,
                     hidden=hidden, activation=args.activation, ridge=args.ridge)
    opt = OptimizerConfig(method=args.optimizer, tol=args.tol, max_iter=args.max_iter,
                          batch_size=args.batch_size, epochs=args.epochs,
                          learning_rate=args.learning_rate, seed=args.seed)
    return spec, opt


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args):
    setting = args.setting
    if args.graph:
        g = load_graph(args.graph)
        attempt = None
    else:
        g, attempt = connected_erdos_renyi(args.n, args.p, args.seed)
    ds = simulate_dataset(g, setting_scores(setting, g.n), args.L, setting_sampler(setting), args.seed)
    out = args.out or "."
    try:
        os.makedirs(out, exist_ok=True)
        _emit(graph_to_json(g), os.path.join(out, "graph.json"))
        _emit(ds.to_csv(), os.path.join(out, "data.csv"))
    except OSError as exc:
        raise ParameterError(f"cannot write to {out}: {exc.strerror}") from None
    summary = {"schema": SCHEMA, "setting": setting, "n": g.n, "edge_count": g.edge_count,
               "records": ds.size, "L": ds.L, "d": ds.d, "seed": args.seed,
               "graph_attempt": attempt, "connected": g.connected,
               "files": {"graph": os.path.join(out, "graph.json"), "data": os.path.join(out, "data.csv")}}
    sys.stdout.write(dumps(summary))


def _data(args):
    if not args.data or not args.graph:
        raise ParameterError("--data and --graph are required")
    g = load_graph(args.graph)
    return g, load_dataset(args.data, g)


def cmd_fit(args):
    g, ds = _data(args)
    spec, opt = _model(args)
    fitted = fit_mle(ds, spec, opt)
    obj = {"schema": SCHEMA, **fitted.to_dict()}
    obj.pop("trained_on", None)
    _emit(dumps(obj), args.out)


def _query(args, g):
    omega = domain_from_spec(_json_arg(args.omega, "--omega"))
    return Query(_item(args.i0, g.n, "--i0"), _item(args.j0, g.n, "--j0"), omega, args.alpha,
                 args.folds)


def cmd_infer(args):
    g, ds = _data(args)
    spec, opt = _model(args)
    report = estimate(ds, _query(args, g), spec, opt, args.seed, args.threads, args.p,
                      args.variance_scaling)
    _emit(dumps(report.to_dict()), args.out)


def cmd_shift(args):
    if not args.kappa:
        raise ParameterError("--kappa is required")
    g, ds = _data(args)
    spec, opt = _model(args)
    kappa = density_ratio_from_spec(_json_arg(args.kappa, "--kappa"))
    report = shift_estimate(ds, _query(args, g), kappa, spec, opt, args.seed, args.threads, args.p,
                            args.kappa_power, args.variance_scaling)
    _emit(dumps(report.to_dict()), args.out)


def cmd_multitest(args):
    g, ds = _data(args)
    spec, opt = _model(args)
    if (args.family is None) == (args.best_item is None):
        raise ParameterError("give exactly one of --family or --best-item")
    if args.family is not None:
        raw = _json_arg(args.family, "--family")
        if not isinstance(raw, list):
            raise ParameterError("--family must be a JSON list of {i, j, omega}")
        try:
            entries = tuple((_item(e["i"], g.n, "i"), _item(e["j"], g.n, "j"),
                             domain_from_spec(e.get("omega", {"kind": "all"}))) for e in raw)
        except (KeyError, TypeError):
            raise ParameterError("--family entries need integer 'i' and 'j'") from None
        family = HypothesisFamily(entries, args.alpha)
    else:
        family = best_item_family(_item(args.best_item, g.n, "--best-item"),
                                  domain_from_spec(_json_arg(args.omega, "--omega")), g.n, args.alpha)
    cf = cross_fit(ds, spec, opt, args.folds, args.seed, args.threads)
    res = test_family(ds, family, cf, args.p, args.draws, args.seed)
    _emit(dumps(res.to_dict()), args.out)


def _verify_case(g, theta, i0, j0, walks, seed, z_max):
    rep = verify_potential_representation(g, theta, i0, j0, walks, seed, z_max=z_max)
    w = fisher_laplacian(g, theta)
    pinv = laplacian_pseudoinverse(w)
    energy = max(energy_identity_residual(w, a, b, pinv)
                 for a in range(g.n) for b in range(g.n) if a != b)
    pres = pseudoinverse_residuals(w, pinv=pinv)
    pinv_max = max(pres["projection"], pres["null"], pres["svd"], *pres["shift"].values())
    rep["energy_residual"] = energy
    rep["pinv_residuals"] = pres
    rep["passes"] = bool(rep["passes"] and energy <= 1e-8 and pinv_max <= 1e-8)
    return rep


def cmd_verify(args):
    rng = np.random.default_rng(args.seed)
    cases = []
    for c in range(args.cases):
        if args.k2_only:
            g = ComparisonGraph(2, ((0, 1),))
            theta = np.zeros(2)
            i0, j0 = 0, 1
        else:
            n = int(rng.integers(3, args.max_n + 1))
            g, _ = connected_erdos_renyi(n, float(rng.uniform(0.3, 0.9)), int(rng.integers(2**31)))
            theta = rng.uniform(-1.0, 1.0, size=n)
            theta -= theta.mean()
            i0, j0 = (int(v) for v in rng.choice(n, size=2, replace=False))
        rep = _verify_case(g, theta, i0, j0, args.walks, args.seed + c, args.z_max)
        if args.inject_failure and c == 0:
            rep["edges"][0]["closed_form"] *= 1.0 + 1e-3
            rep["edges"][0]["closed_form"] += 1e-3
            rerun = evaluate_rows(rep["edges"], args.z_max)
            rep.update(max_z=rerun["max_z"], max_exact_error=rerun["max_exact_error"])
            rep["passes"] = bool(rep["passes"] and rerun["passes"])
            rep["injected_failure"] = True
        for row in rep["edges"]:
            row["i"] += 1
            row["j"] += 1
        cases.append({"case": c, "n": g.n, "edges": g.edge_count, "i0": i0 + 1, "j0": j0 + 1,
                      **rep})
    summary = {"schema": SCHEMA, "cases": cases, "n_cases": len(cases),
               "failures": [c["case"] for c in cases if not c["passes"]],
               "passes": all(c["passes"] for c in cases)}
    text = dumps(summary)
    _emit(text, args.out)
    if not summary["passes"]:
        raise VerificationFailure(summary)


def _rep_seed(master, n, p, L, rep):
    ss = np.random.SeedSequence([int(master), int(n), int(round(p * 1e6)), int(L), int(rep)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def run_study_rep(setting, n, p, L, rep, master_seed, truth, spec, opt, folds, alpha=0.05):
    """One seeded repetition of the simulation study; returns a study-table row."""
    q = SETTING_QUERIES[setting]
    seed = _rep_seed(master_seed, n, p, L, rep)
    g, _ = connected_erdos_renyi(n, p, seed)
    ds = simulate_dataset(g, setting_scores(setting, n), L, setting_sampler(setting), seed)
    query = Query(q["i0"] - 1, q["j0"] - 1, domain_from_spec(q["omega"]), alpha, folds)
    r = estimate(ds, query, spec, replace(opt, seed=seed % 2**31), seed, 1, p)
    return {"n": n, "p": p, "L": L, "rep": rep, "q_hat": r.q_hat, "plugin": r.plugin,
            "v_hat": r.v_hat, "v_tilde": r.v_tilde_hat, "ci_lo": r.ci_lo, "ci_hi": r.ci_hi,
            "covered": int(r.ci_lo <= truth <= r.ci_hi), "ci_len": r.ci_hi - r.ci_lo,
            "covered_tilde": int(r.ci_tilde_lo <= truth <= r.ci_tilde_hi)}


def study_summary(rows, truth):
    cells = {}
    for r in rows:
        cells.setdefault((r["n"], r["p"], r["L"]), []).append(r)
    out = []
    for (n, p, L), rs in sorted(cells.items()):
        q = np.array([r["q_hat"] for r in rs])
        pl = np.array([r["plugin"] for r in rs])
        out.append({"n": n, "p": p, "L": L, "reps": len(rs),
                    "ecr": float(np.mean([r["covered"] for r in rs])),
                    "ecr_tilde": float(np.mean([r["covered_tilde"] for r in rs])),
                    "mean_ci_len": float(np.mean([r["ci_len"] for r in rs])),
                    "mean_q_hat": float(q.mean()),
                    "se_q_hat": float(q.std(ddof=1) / math.sqrt(len(q))) if len(q) > 1 else None,
                    "rmse": float(np.sqrt(np.mean((q - truth) ** 2))),
                    "rmse_plugin": float(np.sqrt(np.mean((pl - truth) ** 2)))})
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def study_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STUDY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in STUDY_COLUMNS])
    return buf.getvalue()


def cmd_reproduce(args):
    setting = args.setting
    if args.reps < 1:
        raise ParameterError("--reps must be >= 1")
    if args.full:
        grid, Ls = PAPER_GRID, PAPER_L
    else:
        grid = [tuple(float(v) for v in cell.split(":")) for cell in args.grid] if args.grid else DESK_GRID
        grid = [(int(n), p) for n, p in grid]
        Ls = args.L or DESK_L
    q = SETTING_QUERIES[setting]
    kind = args.model or q["model"]
    args.model = kind
    spec, opt = _model(args)
    n_max = max(n for n, _ in grid)
    if args.truth is not None:
        truth, truth_se = float(args.truth), 0.0
    else:
        truth, truth_se = monte_carlo_true_q(setting_scores(setting, n_max),
                                             domain_from_spec(q["omega"]), q["i0"] - 1, q["j0"] - 1,
                                             setting_sampler(setting), args.truth_samples, args.seed)
    jobs = [(n, p, L, rep) for n, p in grid for L in Ls for rep in range(args.reps)]

    def run(job):
        n, p, L, rep = job
        return run_study_rep(setting, n, p, L, rep, args.seed, truth, spec, opt, args.folds)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    rows.sort(key=lambda r: (r["n"], r["p"], r["L"], r["rep"]))
    summary = {"schema": SCHEMA, "setting": setting, "truth": truth, "truth_se": truth_se,
               "model": spec.to_dict(), "folds": args.folds, "seed": args.seed,
               "cells": study_summary(rows, truth)}
    if args.out in (None, "-"):
        sys.stdout.write(study_csv(rows))
        sys.stdout.write(dumps(summary))
        return
    try:
        os.makedirs(args.out, exist_ok=True)
        _emit(study_csv(rows), os.path.join(args.out, "study.csv"))
        _emit(dumps(summary), os.path.join(args.out, "summary.json"))
    except OSError as exc:
        raise ParameterError(f"cannot write to {args.out}: {exc.strerror}") from None
    sys.stdout.write(dumps({"schema": SCHEMA, "cells": summary["cells"], "truth": truth}))


# ---------------------------------------------------------------- parser

def _common(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON file of option defaults")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0)
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1)
    p.add_argument("--out", default=d, help="output path (directory for simulate/reproduce)")


def _model_flags(p):
    p.add_argument("--model", default="linear", choices=["constant", "linear", "mlp"])
    p.add_argument("--feature-map", default="identity", choices=["identity", "affine", "poly"])
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--hidden", default="32,32", help="comma-separated hidden widths (mlp)")
    p.add_argument("--activation", default="relu", choices=["relu", "tanh"])
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--optimizer", default="auto", choices=["auto", "lbfgs", "adam"])
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--learning-rate", type=float, default=1e-3)


def _data_flags(p):
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--graph", help="graph JSON")


def _query_flags(p):
    p.add_argument("--i0", type=int, required=False, default=1)
    p.add_argument("--j0", type=int, required=False, default=2)
    p.add_argument("--omega", default='{"kind": "all"}', help="domain JSON (or @file)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--p", type=float, default=None,
                   help="Erdos-Renyi edge probability (default: edge density of the graph)")
    p.add_argument("--variance-scaling", default="literal", choices=list(VARIANCE_SCALINGS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefwalk", description=__doc__.split("\n")[0])
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a graph and a dataset")
    _common(p, True)
    p.add_argument("--setting", default="I", choices=["I", "II"])
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--p", type=float, default=0.2)
    p.add_argument("--L", type=int, default=500)
    p.add_argument("--graph", help="use this graph JSON instead of generating one")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the score model on all records")
    _common(p, True)
    _data_flags(p)
    _model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="debiased estimate, CI and p-value")
    _common(p, True)
    _data_flags(p)
    _query_flags(p)
    _model_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("shift", help="inference under a known density ratio")
    _common(p, True)
    _data_flags(p)
    _query_flags(p)
    _model_flags(p)
    p.add_argument("--kappa", help="density-ratio JSON (or @file)")
    p.add_argument("--kappa-power", type=int, default=2, choices=[1, 2])
    p.set_defaults(func=cmd_shift)

    p = sub.add_parser("multitest", help="max-statistic bootstrap test of a hypothesis family")
    _common(p, True)
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--family", default=None, help="JSON list of {i, j, omega} (or @file)")
    p.add_argument("--best-item", type=int, default=None)
    p.add_argument("--omega", default='{"kind": "all"}')
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--p", type=float, default=None)
    p.set_defaults(func=cmd_multitest)

    p = sub.add_parser("verify", help="check the potential representation and Laplacian identities")
    _common(p, True)
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--max-n", type=int, default=8)
    p.add_argument("--walks", type=int, default=100_000)
    p.add_argument("--z-max", type=float, default=4.0)
    p.add_argument("--k2-only", action="store_true")
    p.add_argument("--inject-failure", action="store_true",
                   help="perturb one closed-form weight after computing it (self-test)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("reproduce", help="simulation study over an (n, p) x L grid")
    _common(p, True)
    _model_flags(p)
    p.set_defaults(model=None)
    p.add_argument("--setting", default="I", choices=["I", "II"])
    p.add_argument("--grid", action="append", help="cell n:p (repeatable)")
    p.add_argument("--L", type=int, action="append")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--full", action="store_true", help="the paper's full (n, p) x L grid")
    p.add_argument("--truth", type=float, default=None)
    p.add_argument("--truth-samples", type=int, default=1_000_000)
    p.set_defaults(func=cmd_reproduce)
    return parser


def _apply_config(parser, argv):
    """Load ``--config`` JSON and install its keys as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = _json_arg("@" + known.config, "--config")
    if not isinstance(cfg, dict):
        raise ParameterError("config must be a JSON object")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in sub.choices), None)
    if command is None:
        return
    target = sub.choices[command]
    dests = {a.dest for a in target._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise ParameterError(f"unknown config key {key!r} for {command}")
        if isinstance(value, (dict, list)) and dest in ("omega", "kappa", "family"):
            value = json.dumps(value)
        defaults[dest] = value
    top = {k: defaults.pop(k) for k in ("seed", "threads", "out") if k in defaults}
    target.set_defaults(**defaults)
    parser.set_defaults(**top)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return EXIT_OK if exc.code == 0 else EXIT_CONFIG
        if args.threads < 1:
            raise ParameterError("--threads must be >= 1")
        args.func(args)
    except VerificationFailure:
        return EXIT_VERIFY
    except ContractError as exc:
        sys.stderr.write(dumps({"schema": SCHEMA, "error": "contract", "message": str(exc)}))
        return EXIT_VERIFY
    except ValueError as exc:
        sys.stderr.write(dumps({"schema": SCHEMA, "error": "config", "message": str(exc)}))
        return EXIT_CONFIG
    except (PrefwalkError, ArithmeticError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(dumps({"schema": SCHEMA, "error": "numerical", "message": str(exc)}))
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
