"""Command-line entry point: ``capreg fit|predict|gen|bench|price``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .core import CONCAVE, CONVEX, RANDOM_PROJECTION, CapConfig, Dataset, InvalidInputError, PartitionModel, n_min
from .engine import fit as cap_fit
from .lse import LseConvergenceError
from .pricing import (
    REGRESSORS,
    OptionSpec,
    RegressionFailure,
    backward_induct,
    european_value,
    evaluate_policy,
    simulate_paths,
)
from .synth import PROBLEMS, holdout_set, loglog_slope, write_csv

log = logging.getLogger("capreg")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

ABLATIONS = {
    "none": ("global", True),
    "global-norefit": ("global", False),
    "local-norefit": ("local", False),
    "local-refit": ("local", True),
}


class CsvFormatError(InvalidInputError):
    pass


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def read_csv(path, expect_cols=None):
    """Parse a headered numeric CSV; returns ``(header, matrix)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file, expected a header row")
    header, body = rows[0], rows[1:]
    width = len(header)
    if expect_cols is not None and width not in expect_cols:
        raise CsvFormatError(f"{path}: header has {width} columns, expected {' or '.join(map(str, expect_cols))}")
    out = np.empty((len(body), width))
    for lineno, row in enumerate(body, start=2):
        if len(row) != width:
            raise CsvFormatError(f"{path}:{lineno}: expected {width} fields, found {len(row)}")
        try:
            out[lineno - 2] = [float(v) for v in row]
        except ValueError as exc:
            raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(out), axis=1))[0]) + 2
        raise CsvFormatError(f"{path}:{bad}: non-finite value")
    return header, out


def write_manifest(out_path, command, config, seed, t0, outputs):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": version_string(),
        "wall_clock_seconds": time.perf_counter() - t0,
        "outputs": [str(p) for p in outputs],
    }
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _cap_config(args, p) -> CapConfig:
    return CapConfig(
        D=args.d_factor,
        L=args.knots,
        strategy=RANDOM_PROJECTION if args.fast else "cardinal",
        directions=args.directions if args.fast else None,
        orientation=CONCAVE if getattr(args, "concave", False) else CONVEX,
        seed=args.seed,
        min_obs_override=args.min_obs,
    )


def _standardize_back(model: PartitionModel, mu, sd) -> PartitionModel:
    # fit was on (x - mu) / sd; express the planes in raw covariates
    slopes = model.slopes / sd
    intercepts = model.intercepts - slopes @ mu
    return PartitionModel(intercepts, slopes, model.subsets, model.orientation, dict(model.meta))


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    header, mat = read_csv(args.csv_in)
    if mat.shape[1] < 2:
        raise CsvFormatError(f"{args.csv_in}: need at least one covariate column plus the response")
    x, y = mat[:, :-1], mat[:, -1]
    n, p = x.shape
    cfg = _cap_config(args, p)
    nm = n_min(max(n, 1), p, cfg.D, cfg.min_obs_override)
    if n < p + 1:
        raise InvalidInputError(
            f"n={n} observations cannot determine a hyperplane in p={p} dimensions "
            f"(need at least p+1={p + 1}; a split needs 2*n_min={2 * nm})"
        )
    if n < 2 * nm:
        log.warning("n=%d is below 2*n_min=%d: no split is possible, fitting a single hyperplane", n, 2 * nm)
    mu, sd = np.zeros(p), np.ones(p)
    if args.standardize:
        mu, sd = x.mean(axis=0), x.std(axis=0)
        sd[sd == 0] = 1.0
    seq = cap_fit(Dataset((x - mu) / sd, y), cfg, fast=args.fast)
    model = seq.best
    if args.standardize:
        model = _standardize_back(model, mu, sd)
    meta = {"D": cfg.D, "L": cfg.L, "seed": cfg.seed, "n": n}
    model = replace(model, meta=meta)
    Path(args.out).write_text(model.to_json())
    log.info("selected K=%d of %d (gcv=%.6g)", model.k, len(seq), seq.gcv[seq.selected])
    config = {**asdict(cfg), "standardize": args.standardize, "fast": args.fast,
              "input": str(args.csv_in), "columns": header, "gcv": [float(g) for g in seq.gcv]}
    write_manifest(args.out, "fit", config, cfg.seed, t0, [args.out])
    return EXIT_OK


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    model = PartitionModel.from_json(Path(args.model).read_text())
    p = model.p
    try:
        _, mat = read_csv(args.csv_in, expect_cols=(p, p + 1) if args.has_response else (p,))
    except CsvFormatError as exc:
        raise CsvFormatError(f"{exc} (model expects p={p} covariates)") from None
    x = mat[:, :p]
    pred = model.predict(x) if len(x) else np.empty(0)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["prediction"])
        for v in pred:
            w.writerow([repr(float(v))])
    write_manifest(args.out, "predict", {"model": args.model, "input": str(args.csv_in)}, None, t0, [args.out])
    return EXIT_OK


def cmd_gen(args) -> int:
    t0 = time.perf_counter()
    gen = PROBLEMS[args.problem][0]
    data, mean = gen(args.n, args.seed) if args.noise is None else gen(args.n, args.seed, args.noise)
    write_csv(args.out, data, mean if args.true_mean else None)
    write_manifest(args.out, "gen", {"problem": args.problem, "n": args.n, "noise": args.noise},
                   args.seed, t0, [args.out])
    return EXIT_OK


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    gen = PROBLEMS[args.problem][0]
    xt, ft = holdout_set(args.problem)
    objective, refit = ABLATIONS[args.ablation]
    method = ("fastcap" if args.fast else "cap") + ("" if args.ablation == "none" else f"/{args.ablation}")
    seeds = list(range(args.seed, args.seed + args.seeds))
    rows, avg = [], {}
    for n in args.n_grid:
        errs = []
        for seed in seeds:
            data, _ = gen(n, seed)
            cfg = CapConfig(D=args.d_factor, L=args.knots, seed=seed, split_objective=objective,
                            refit_enabled=refit, strategy=RANDOM_PROJECTION if args.fast else "cardinal",
                            directions=args.directions if args.fast else None)
            c0 = time.perf_counter()
            seq = cap_fit(data, cfg, fast=args.fast)
            secs = time.perf_counter() - c0
            mse = float(np.mean((seq.best.predict(xt) - ft) ** 2))
            errs.append(mse)
            rows.append([args.problem, method, n, seed, repr(mse), repr(secs), seq.selected_k, len(seq)])
            log.info("problem %s n=%d seed=%d mse=%.5g K=%d (%.2fs)", args.problem, n, seed, mse, seq.selected_k, secs)
        avg[n] = float(np.mean(errs))
    slope = loglog_slope(avg.keys(), avg.values()) if len(avg) >= 3 else float("nan")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["problem", "method", "n", "seed", "test_mse", "runtime_seconds", "selected_k", "path_length"])
        w.writerows(rows)
    slope_path = Path(str(args.out) + ".slopes.csv")
    with open(slope_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["problem", "method", "slope_log_rmse_vs_log_n"] + [f"mean_mse_n{n}" for n in avg])
        w.writerow([args.problem, method, repr(slope)] + [repr(v) for v in avg.values()])
    config = {k: v for k, v in vars(args).items() if k != "func"}
    write_manifest(args.out, "bench", config, args.seed, t0, [args.out, slope_path])
    return EXIT_OK


def cmd_price(args) -> int:
    t0 = time.perf_counter()
    spec = OptionSpec(n_assets=args.assets, s0=args.s0, strike=args.strike, maturity=args.maturity,
                      drift=args.drift, vol=args.vol, rho=args.rho, rate=args.rate, steps=args.steps)
    train = simulate_paths(spec, args.train_paths, args.seed)
    test = simulate_paths(spec, args.test_paths, args.seed + 1)
    rows = []
    for kind in args.regressor:
        c0 = time.perf_counter()
        cfg = None
        if kind in ("cap", "fastcap"):
            cfg = CapConfig(D=args.d_factor, L=args.knots, seed=args.seed,
                            strategy=RANDOM_PROJECTION if kind == "fastcap" else "cardinal",
                            directions=min(spec.n_assets, 10) if kind == "fastcap" else None)
        policy = backward_induct(train, spec, kind, cfg, itm_only=args.itm_only)
        value, se = evaluate_policy(policy, test, spec)
        rows.append([kind, spec.n_assets, args.train_paths, repr(value), repr(se), repr(time.perf_counter() - c0)])
        log.info("%s: policy value %.6g (se %.3g)", kind, value, se)
    if args.european:
        value, se = european_value(test, spec)
        rows.append(["european", spec.n_assets, args.train_paths, repr(value), repr(se), "0.0"])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["regressor", "N", "M", "policy_value", "std_err", "wall_clock_seconds"])
        w.writerows(rows)
    config = {**asdict(spec), "train_paths": args.train_paths, "test_paths": args.test_paths,
              "regressors": args.regressor, "itm_only": args.itm_only, "D": args.d_factor, "L": args.knots}
    write_manifest(args.out, "price", config, args.seed, t0, [args.out])
    return EXIT_OK


def _add_cap_flags(p, fast=True):
    p.add_argument("--d-factor", type=float, default=3.0, help="log factor D in n_min (default 3)")
    p.add_argument("--knots", type=int, default=10, help="knots L per split direction (default 10)")
    p.add_argument("--seed", type=int, default=0)
    if fast:
        p.add_argument("--fast", action="store_true", help="Fast CAP: random directions + GCV early stop")
        p.add_argument("--directions", type=int, default=None, help="random directions per split (default p)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="capreg", description="Convex adaptive partitioning regression")
    ap.add_argument("--threads", type=int, default=None, help="cap BLAS/LAPACK threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    # -v is also accepted after the subcommand
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("fit", parents=[verbose], help="fit a convex (or concave) model to a CSV; last column is the response")
    p.add_argument("csv_in")
    p.add_argument("-o", "--out", required=True, help="model JSON path")
    _add_cap_flags(p)
    p.add_argument("--concave", action="store_true")
    p.add_argument("--min-obs", type=int, default=None, help="override n_min")
    p.add_argument("--standardize", action="store_true", help="fit on standardized covariates")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[verbose], help="evaluate a saved model on a covariate CSV")
    p.add_argument("model")
    p.add_argument("csv_in")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--has-response", action="store_true", help="allow and ignore a trailing response column")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gen", parents=[verbose], help="write a synthetic benchmark dataset as CSV")
    p.add_argument("problem", choices=sorted(PROBLEMS))
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--true-mean", action="store_true", help="append the noiseless mean column")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", parents=[verbose], help="test MSE / runtime / K over a grid of n and seeds")
    p.add_argument("problem", choices=sorted(PROBLEMS))
    p.add_argument("--n-grid", type=int, nargs="+", default=[200, 500, 1000, 2000, 5000])
    p.add_argument("--seeds", type=int, default=3, help="number of training sets")
    p.add_argument("--ablation", choices=sorted(ABLATIONS), default="none")
    _add_cap_flags(p)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("price", parents=[verbose], help="American basket call lower bound via regression ADP")
    p.add_argument("--assets", type=int, default=1)
    p.add_argument("--s0", type=float, default=100.0)
    p.add_argument("--strike", type=float, default=110.0)
    p.add_argument("--maturity", type=float, default=0.25, help="years")
    p.add_argument("--drift", type=float, default=0.05)
    p.add_argument("--vol", type=float, default=0.10)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--rate", type=float, default=None, help="discount rate (default: drift)")
    p.add_argument("--steps", type=int, default=50, help="exercise dates")
    p.add_argument("--train-paths", type=int, default=10_000)
    p.add_argument("--test-paths", type=int, default=50_000)
    p.add_argument("--regressor", choices=REGRESSORS, nargs="+", default=["cap"])
    p.add_argument("--itm-only", action="store_true", help="regress on in-the-money paths only")
    p.add_argument("--european", action="store_true", help="append the European comparator row")
    _add_cap_flags(p, fast=False)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_price)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (InvalidInputError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"capreg: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (LseConvergenceError, RegressionFailure, np.linalg.LinAlgError) as exc:
        print(f"capreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
