"""Command-line front end: ``fdrsafe run | simulate | grid``.

Exit codes: 0 success, 2 input or configuration error, 3 pipeline error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import ConfigError, FdrSafeError, InputError, NullSpec, PipelineError
from .estimators.grid import GridConfig, build_grid, load_grid_config
from .metrics import global_calibration, local_calibration
from .pipeline import ABLATIONS, SafeConfig, run_ablation, run_fdrsafe
from .simulation import METHODS, METRICS, SCENARIOS, ScenarioSpec, load_scenario, run_study

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_PIPELINE = 0, 2, 3

log = logging.getLogger("fdrsafe")


class CliError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def read_statistics(path):
    """Read the ``statistic`` column; returns ``(u, extra_rows, header, digest)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path}: {exc.strerror}") from None
    digest = hashlib.sha256(raw).hexdigest()
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError:
        raise CliError(EXIT_INPUT, f"{path}: not UTF-8 text") from None
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if not header:
        raise CliError(EXIT_INPUT, f"{path}:1: empty file, expected a 'statistic' header")
    header = [h.strip() for h in header]
    if "statistic" not in header:
        raise CliError(EXIT_INPUT, f"{path}:1: header has no 'statistic' column")
    col = header.index("statistic")
    values, extra = [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CliError(EXIT_INPUT, f"{path}:{line}: expected {len(header)} fields, "
                                       f"got {len(row)}")
        try:
            v = float(row[col])
        except ValueError:
            raise CliError(EXIT_INPUT, f"{path}:{line}: not a number: {row[col]!r}") from None
        if not math.isfinite(v):
            raise CliError(EXIT_INPUT, f"{path}:{line}: non-finite statistic")
        values.append(v)
        extra.append({h: c for i, (h, c) in enumerate(zip(header, row)) if i != col})
    if not values:
        raise CliError(EXIT_INPUT, f"{path}: no statistics")
    return np.array(values), extra, header, digest


def _resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get("FDRSAFE_SEED")
    if env is None:
        return 0
    try:
        value = int(env)
    except ValueError:
        raise CliError(EXIT_INPUT, f"FDRSAFE_SEED is not an integer: {env!r}") from None
    if value < 0:
        raise CliError(EXIT_INPUT, "FDRSAFE_SEED must be nonnegative")
    return value


def _grid_config(path):
    return GridConfig() if path is None else load_grid_config(path)


def _safe_config(args, null_spec=NullSpec()):
    return SafeConfig(n_synthetic=args.n_synthetic, ensemble_size=args.ensemble_size,
                      synthetic_size=args.synthetic_size, seed=_resolve_seed(args.seed),
                      grid=_grid_config(args.grid), null_spec=null_spec, workers=args.workers)


def _write_json(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _num(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else float(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_run(args):
    u, extra, header, digest = read_statistics(args.input)
    null_spec = NullSpec.from_df(args.df)
    cfg = _safe_config(args, null_spec)
    t0 = time.perf_counter()
    if args.method == "fdrSAFE":
        res = run_fdrsafe(u, cfg)
    else:
        res = run_ablation(u, cfg, args.method)
    elapsed = time.perf_counter() - t0
    objectives = {o.model_id: o for o in res.objectives}
    manifest = {
        "tool": "fdrsafe",
        "version": __version__,
        "command": "run",
        "method": args.method,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "input": {"path": os.path.basename(args.input), "sha256": digest, "n": int(u.size),
                  "columns": header},
    }
    # worker count does not change the result, keep it out of the reproducible part
    manifest["config"].pop("workers")
    result = {
        "schema_version": SCHEMA_VERSION,
        "method": res.method,
        "pi0_hat": float(res.pi0),
        "selected": [{"model_id": mid, "weight": w,
                      "L_hat": _num(objectives[mid].L_hat) if mid in objectives else None}
                     for mid, w in res.selected],
        "dropped": [{"model_id": k, "reason": v} for k, v in sorted(res.dropped.items())],
        "excluded": [{"model_id": k, "reason": v} for k, v in sorted(res.excluded.items())],
        "generator": (None if res.generator is None else
                      {"params": res.generator.params.to_dict(),
                       "loglik": res.generator.loglik,
                       "converged": res.generator.converged,
                       "n_iter": res.generator.n_iter}),
        "hypotheses": [{"index": i, "u": float(u[i]), "fdr_hat": float(res.fdr[i]),
                        "Fdr_hat": float(res.Fdr[i]), **({"columns": extra[i]} if extra[i] else {})}
                       for i in range(u.size)],
        "manifest": manifest,
    }
    _write_json(result, args.out)
    if args.out not in (None, "-"):
        side = dict(manifest, workers=cfg.workers,
                    timings={**{k: round(v, 6) for k, v in res.timings.items()},
                             "total": round(elapsed, 6)})
        _write_json(side, str(args.out) + ".manifest.json")
    log.info("pi0_hat=%.4f, %d models in the ensemble, %.2f s", res.pi0, len(res.selected),
             elapsed)
    return EXIT_OK


def _scenario(args):
    if args.scenario in SCENARIOS:
        data = {"kind": args.scenario}
    elif args.scenario.endswith(".json"):
        data = load_scenario(args.scenario).to_dict()
    else:
        raise CliError(EXIT_INPUT, f"unknown scenario {args.scenario!r}; "
                                   f"choose from {', '.join(SCENARIOS)} or a .json file")
    if args.I is not None:
        data["I"] = args.I
    if args.pi0 is not None:
        data["pi0"] = args.pi0
    return ScenarioSpec.from_dict(data)


def cmd_simulate(args):
    spec = _scenario(args)
    methods = METHODS if args.methods is None else tuple(m.strip() for m in args.methods.split(","))
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise CliError(EXIT_INPUT, f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    cfg = _safe_config(args)
    seed = cfg.seed
    t0 = time.perf_counter()
    study = run_study(spec, args.reps, methods, cfg, seed=seed, workers=args.workers)
    elapsed = time.perf_counter() - t0
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", ["method", "rep", "metric", "value"], study.rows)
    summary = study.summary()
    _write_csv(out / "summary.csv", ["method", *METRICS],
               [[m, *[summary[m][k] for k in METRICS]] for m in study.methods])
    _write_csv(out / "shares.csv", ["rep", "family", "n_models", "weight"], study.shares)
    _write_csv(out / "failures.csv", ["method", "rep", "reason"], study.failures)
    _write_csv(out / "oracle_losses.csv", ["rep", "oracle_single_loss", "min_grid_loss"],
               [[r, study.oracle_loss[r], min(g.values()) if g else float("nan")]
                for r, g in enumerate(study.grid_losses)])
    cal_cols = ["x", "y", "n", "ci_lo", "ci_hi"]
    for m, (f, l) in study.calibration.items():
        for kind, fn in (("local", local_calibration), ("global", global_calibration)):
            curve = fn(f, l)
            _write_csv(out / f"calibration_{kind}_{m}.csv", cal_cols,
                       [[p[c] for c in cal_cols] for p in curve.rows()])
    manifest = {
        "tool": "fdrsafe", "version": __version__, "command": "simulate",
        "scenario": spec.to_dict(), "reps": args.reps, "methods": list(study.methods),
        "seed": seed, "config": {k: v for k, v in cfg.to_dict().items() if k != "workers"},
        "workers": args.workers, "elapsed_seconds": round(elapsed, 3),
    }
    _write_json(manifest, str(out / "manifest.json"))
    log.info("wrote %s (%.1f s)", out, elapsed)
    return EXIT_OK


def cmd_grid(args):
    specs = build_grid(_grid_config(args.grid))
    if args.format == "json":
        _write_json({"schema_version": SCHEMA_VERSION, "count": len(specs),
                     "models": [s.as_dict() for s in specs]}, None)
    else:
        for s in specs:
            params = ", ".join(f"{k}={v}" for k, v in s.params)
            print(f"{s.model_id}\t{s.family_name}\t{params}")
        print(f"total: {len(specs)} models")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _pos_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _add_pipeline_opts(p):
    p.add_argument("--n-synthetic", type=_pos_int, default=10,
                   help="synthetic datasets used to score models (default 10)")
    p.add_argument("--ensemble-size", type=_pos_int, default=10,
                   help="models kept in the ensemble (default 10)")
    p.add_argument("--synthetic-size", type=_pos_int, default=None,
                   help="statistics per synthetic dataset (default: as observed)")
    p.add_argument("--seed", type=_nonneg_int, default=None,
                   help="master seed (default: $FDRSAFE_SEED, else 0)")
    p.add_argument("--workers", type=_pos_int, default=1, help="worker processes")
    p.add_argument("--grid", default=None, help="JSON grid configuration")


def build_parser():
    parser = argparse.ArgumentParser(prog="fdrsafe",
                                     description="Selective ensemble estimation of local fdr.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="estimate fdr for a CSV of test statistics")
    run.add_argument("input", help="CSV file with a 'statistic' column")
    run.add_argument("--df", type=float, default=None,
                     help="t null with this many degrees of freedom (default: standard Normal)")
    run.add_argument("--method", default="fdrSAFE", choices=("fdrSAFE", *ABLATIONS))
    run.add_argument("--out", default="-", help="result JSON path (default: stdout)")
    _add_pipeline_opts(run)
    run.set_defaults(func=cmd_run)

    sim = sub.add_parser("simulate", help="run a simulation study")
    sim.add_argument("--scenario", required=True,
                     help=f"one of {', '.join(SCENARIOS)} or a JSON scenario file")
    sim.add_argument("--reps", type=_pos_int, default=50)
    sim.add_argument("--methods", default=None, help="comma-separated subset of methods")
    sim.add_argument("--I", type=_pos_int, default=None, help="hypotheses per repetition")
    sim.add_argument("--pi0", type=float, default=None)
    sim.add_argument("--out-dir", default="fdrsafe_study")
    _add_pipeline_opts(sim)
    sim.set_defaults(func=cmd_simulate)

    grid = sub.add_parser("grid", help="list the candidate model grid")
    grid.add_argument("--grid", default=None, help="JSON grid configuration")
    grid.add_argument("--format", choices=("text", "json"), default="text")
    grid.set_defaults(func=cmd_grid)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except PipelineError as exc:
        print(f"error: pipeline stage '{exc.stage}' failed: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FdrSafeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
