"""Command-line front end: ``signreg {fit,conditions,bound,simulate,report}``.

Exit codes: 0 ok, 1 input error, 2 non-convergence, 3 guard refusal,
4 results-schema mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import BoundError, lambda_rate, oracle_bounds
from .conditions import GuardError, NotPSDError, condition_report
from .estimators import fit_lasso, fit_lasso_cv, fit_sign_constrained
from .losses import LossError, LossSpec, MarginInputs, MarginUnavailable, margin_constant
from .model import DataError, DimensionError, GramMatrix, SupportSet, load_csv, max_abs_entry
from .optimize import SolveOptions
from .simulate import ConfigError, ExperimentConfig, SchemaError, run_experiment, toeplitz_sigma

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_GUARD, EXIT_SCHEMA = 0, 1, 2, 3, 4

log = logging.getLogger("signreg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _versions() -> dict:
    import numba
    import scipy

    return {
        "signreg": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _args_dict(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(_clean(d), sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(out: Path, args_dict: dict, seed, runtime_s: float, extra=None) -> Path:
    """Manifest beside ``out``: versions, seed, config hash and the only timestamp."""
    path = out.with_name(out.name + ".manifest.json")
    m = {
        "command": args_dict.get("command"),
        "config": _clean({k: (str(v) if isinstance(v, Path) else v) for k, v in args_dict.items()}),
        "config_hash": _config_hash(args_dict),
        "seed": seed,
        "versions": _versions(),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "runtime_s": round(runtime_s, 3),
    }
    if extra:
        m.update(extra)
    path.write_text(_dump(m))
    return path


def _emit(payload: dict, args, seed=None, t0=None, extra=None) -> None:
    text = _dump(_clean(payload))
    if args.out is None:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    write_manifest(out, _args_dict(args), seed, time.perf_counter() - (t0 or time.perf_counter()), extra)


def _parse_loss(text: str) -> LossSpec:
    try:
        return LossSpec.parse(text)
    except LossError as exc:
        raise UsageError(str(exc)) from None


def _opts(args) -> SolveOptions:
    try:
        return SolveOptions(tol=args.tol, max_iter=args.max_iter)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --- fit -----------------------------------------------------------------

def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    spec = _parse_loss(args.loss)
    data = load_csv(args.data, response=args.response)
    spec.check_response(data.response)
    opts = _opts(args)
    lasso = args.lasso or args.constraint == "l1"
    if lasso:
        if args.lam is None:
            res = fit_lasso_cv(data, spec, folds=args.folds, seed=args.seed,
                               standardize=args.standardize, opts=opts)
        else:
            res = fit_lasso(data, spec, args.lam, opts, standardize=args.standardize)
    else:
        if args.lam is not None:
            raise UsageError("--lambda applies to the Lasso only (use --lasso)")
        res = fit_sign_constrained(data, spec, opts, standardize=args.standardize)
    payload = res.to_dict()
    if data.feature_names:
        payload["feature_names"] = list(data.feature_names)
    _emit(payload, args, seed=args.seed, t0=t0)
    d = res.diagnostics
    print(f"support size {payload['support_size']}, l1 norm {payload['l1_norm']:.6g}, "
          f"KKT residual {d.kkt_residual:.3g} (tol {d.tol:.1g}), "
          f"{'converged' if d.converged else 'NOT converged'}", file=sys.stderr)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


# --- conditions ----------------------------------------------------------

def _load_matrix(path) -> np.ndarray:
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return M


def cmd_conditions(args) -> int:
    t0 = time.perf_counter()
    notes = []
    K_X = None
    if args.toeplitz is not None:
        p = int(args.toeplitz[0])
        try:
            G = toeplitz_sigma(p, float(args.toeplitz[1]))
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    elif args.gram is not None:
        G = GramMatrix(_load_matrix(args.gram))
    elif args.data is not None:
        data = load_csv(args.data, response=args.response) if args.has_response else \
            load_csv_design(args.data)
        G = data.gram()
        K_X = max_abs_entry(data.design)
    else:
        raise UsageError("give a data file, --gram or --toeplitz")

    support = SupportSet.parse(args.support, G.p) if args.support else None
    L = args.L
    if L != "auto":
        try:
            L = float(L)
        except ValueError:
            raise UsageError(f"--L must be a number or 'auto', got {args.L!r}") from None
    mode = "exact" if args.mode == "exact" else "auto"
    rep = condition_report(G, support, L=L, N=args.N, mode=mode, seed=args.seed)

    margin_c = None
    if args.loss is not None:
        spec = _parse_loss(args.loss)
        kx = args.K_X if args.K_X is not None else K_X
        if kx is None or args.K0 is None:
            notes.append("margin constant needs K_X (from data or --K-X) and --K0")
        else:
            try:
                margin_c = margin_constant(spec, MarginInputs(kx, args.K0, args.density_lower))
            except MarginUnavailable as exc:
                notes.append(str(exc))
        rep.K_X, rep.K_0 = kx, args.K0
    rep.margin_c = margin_c
    rep.notes.extend(notes)
    payload = rep.to_dict()
    payload["invariant_violations"] = rep.check_invariants()
    _emit(payload, args, seed=args.seed, t0=t0)
    line = f"tau^2 = {rep.tau_sq:.6g}, C = {rep.C:.6g}"
    if rep.phi_sq_compat is not None:
        line += (f", phi^2 = {rep.phi_sq_compat:.6g} (L = {rep.compat_L:.4g}, "
                 f"{'certified' if rep.compat_certified else 'estimate'}), "
                 f"RE in [{rep.re_lower:.4g}, {rep.re_upper:.4g}]")
    print(line, file=sys.stderr)
    return EXIT_OK


def load_csv_design(path):
    """A design-only CSV: every column is a feature (a zero response is attached)."""
    from .model import Dataset

    M = _load_matrix(path)
    return Dataset(M, np.zeros(M.shape[0]))


# --- bound ---------------------------------------------------------------

def _parse_q(text):
    if not text:
        return []
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--q must be a comma-separated list of numbers, got {text!r}") from None


def cmd_bound(args) -> int:
    t0 = time.perf_counter()
    t = args.t
    if args.lam is not None:
        lam = args.lam
        rate = None
    else:
        if args.n is None or args.p is None:
            raise UsageError("give --lambda, or --n and --p to use the rate formula")
        t = args.t if args.t is not None else math.log(args.n)
        c_L = args.c_L
        lam = lambda_rate(args.n, args.p, args.C, c_L, t)
        rate = {"n": args.n, "p": args.p, "t": t, "c_L": c_L, "confidence": 1.0 - math.exp(-t)}
    b = oracle_bounds(args.c, args.phi_sq, args.tau_sq, args.C, args.s_star, lam,
                      excess=args.excess, q=_parse_q(args.q), t=t)
    payload = b.to_dict()
    payload["lambda_rate"] = rate
    _emit(payload, args, t0=t0)
    print(f"eps = {b.eps:.6g}, M = {b.M:.6g}, prediction bound = {b.prediction:.6g}"
          + ("" if b.hypotheses["M_le_1"] else "  (warning: M > 1, where the bound gives no control)"),
          file=sys.stderr)
    return EXIT_OK


# --- simulate / report ---------------------------------------------------

def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg = ExperimentConfig.load(args.config)
    if args.reps is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "reps": args.reps})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"

    def progress(key, cell):
        ok = [r.log_ratio for r in cell if r.status == "ok"]
        log.info("cell rho=%g p=%d s=%d: %d/%d ok, mean log ratio %.4f",
                 key[0], key[1], key[2], len(ok), len(cell), float(np.mean(ok)) if ok else float("nan"))

    res = run_experiment(cfg, csv_path, workers=args.workers, progress=progress)
    summary = [_clean(s.__dict__) for s in res.summary]
    (out_dir / "summary.json").write_text(_dump({"config": cfg.to_dict(), "cells": summary}))
    runtimes = {f"{r.rho:g},{r.p},{r.s},{r.rep}": round(r.runtime_ms, 1)
                for r in res.records if r.runtime_ms}
    write_manifest(csv_path, {**_args_dict(args), "experiment": cfg.to_dict()}, cfg.seed,
                   time.perf_counter() - t0,
                   {"experiment_hash": cfg.config_hash(), "runtime_ms": runtimes,
                    "resumed_cells": res.resumed_cells})
    for s in res.summary:
        print(f"rho={s.rho:g} p={s.p} s={s.s}: mean log ratio {s.mean_log_ratio:.4f} "
              f"(se {s.se:.4f}, {s.count} reps)", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import build_report

    t0 = time.perf_counter()
    out = build_report(args.results, args.out)
    write_manifest(Path(out["svg"]), _args_dict(args), None, time.perf_counter() - t0)
    sys.stdout.write(Path(out["table"]).read_text())
    return EXIT_OK


# --- parser --------------------------------------------------------------

def _add_solver_flags(p):
    p.add_argument("--tol", type=float, default=1e-8, help="KKT residual tolerance")
    p.add_argument("--max-iter", type=int, default=50_000)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="signreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"signreg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit the sign-constrained estimator or the Lasso")
    f.add_argument("data", help="CSV file; the last column is the response unless --response")
    f.add_argument("--loss", required=True, help="squared, logistic, lad or check:<gamma>")
    f.add_argument("--constraint", choices=("nonneg", "l1"), default="nonneg")
    f.add_argument("--lasso", action="store_true", help="same as --constraint l1")
    f.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="Lasso penalty; omitted means 10-fold cross-validation")
    f.add_argument("--folds", type=int, default=10)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--response", default=None, help="response column name or index")
    f.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=False)
    f.add_argument("--out", default=None, help="JSON output path (stdout if omitted)")
    _add_solver_flags(f)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("conditions", help="positive-eigenvalue, compatibility and RE constants")
    src = c.add_mutually_exclusive_group()
    src.add_argument("--toeplitz", nargs=2, metavar=("P", "RHO"),
                     help="use Sigma_{kk'} = rho^(|k-k'|/p)")
    src.add_argument("--gram", default=None, help="CSV file holding Sigma")
    c.add_argument("data", nargs="?", default=None, help="design CSV (all columns are features)")
    c.add_argument("--has-response", action="store_true",
                   help="the data CSV carries a response column to drop")
    c.add_argument("--response", default=None)
    c.add_argument("--support", default=None, help="comma-separated 0-based indices of S")
    c.add_argument("--L", default="auto", help="cone constant; 'auto' means 3C/tau^2")
    c.add_argument("--N", type=int, default=None, help="RE set size (default min(2|S|, p))")
    c.add_argument("--mode", choices=("exact", "estimate"), default="exact",
                   help="exact refuses |S| above the enumeration guard")
    c.add_argument("--loss", default=None, help="loss for the margin constant")
    c.add_argument("--K-X", dest="K_X", type=float, default=None)
    c.add_argument("--K0", type=float, default=None, help="max_i |f0(x_i)| (user supplied)")
    c.add_argument("--density-lower", type=float, default=None,
                   help="lower bound on the response density (check loss)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_conditions)

    b = sub.add_parser("bound", help="oracle bounds from design constants")
    b.add_argument("--c", type=float, required=True, help="margin constant")
    b.add_argument("--phi-sq", type=float, required=True)
    b.add_argument("--tau-sq", type=float, required=True)
    b.add_argument("--C", type=float, required=True, help="max column second moment")
    b.add_argument("--s-star", type=int, required=True)
    b.add_argument("--lambda", dest="lam", type=float, default=None)
    b.add_argument("--n", type=int, default=None)
    b.add_argument("--p", type=int, default=None)
    b.add_argument("--t", type=float, default=None, help="tail parameter (default log n)")
    b.add_argument("--c-L", dest="c_L", type=float, default=1.0, help="loss Lipschitz constant")
    b.add_argument("--excess", type=float, default=0.0, help="approximation error of the target")
    b.add_argument("--q", default=None, help="comma-separated q values for l_q bounds")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bound)

    s = sub.add_parser("simulate", help="run a Toeplitz Monte Carlo sweep")
    s.add_argument("config", help="JSON or TOML experiment config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--reps", type=int, default=None, help="override the config's reps")
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default from SIGNREG_WORKERS, else 1)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="table and SVG from a results CSV")
    r.add_argument("results", help="results.csv written by simulate")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except GuardError as exc:
        print(f"signreg: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except SchemaError as exc:
        print(f"signreg: schema mismatch: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (UsageError, DataError, DimensionError, LossError, BoundError, ConfigError,
            NotPSDError, FileNotFoundError, IndexError, ValueError) as exc:
        print(f"signreg: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
