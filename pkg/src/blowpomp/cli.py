"""Command-line front end for simulation, filtering, fitting, and comparison.

Every command requires an explicit --seed and is deterministic given
it.  Results land in the output directory as one JSON file per command
(schema_version, the resolved configuration, a git-describe string,
and the wall-clock runtime wrap the payload) plus plot-ready CSVs
where a command produces trajectories.  Parameter files are JSON
objects with natural-scale fields named exactly as the corresponding
parameter class.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import pathlib
import subprocess
import sys
import time

import numpy as np

from blowpomp.arma import arma_fit
from blowpomp.blowfly import BlowflyModel, XTParams, iterate_skeleton, simulate
from blowpomp.core import ESTIMATED_PARAMS, BlowflyParams, DelayState
from blowpomp.criteria import (
    ApeConfig,
    ComparisonRow,
    aic_table,
    ape_fit,
    chisq_compare,
    derived_quantities,
    table_to_markdown,
)
from blowpomp.data import initial_state, load_series
from blowpomp.errors import BlowpompError
from blowpomp.mif import MifConfig, mif_restarts
from blowpomp.rng import derive_seed
from blowpomp.smc import RESTART_STREAM, replicate_loglik

__all__ = ["main"]

SCHEMA_VERSION = 1
POMP_N_ESTIMATED = len(ESTIMATED_PARAMS)


def _git_describe():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=pathlib.Path(__file__).parent,
            capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _out_dir(args):
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(args):
    if args.data is None:
        raise BlowpompError(f"command {args.command!r} requires --data")
    return load_series(args.data)


def _blowfly_params(args):
    fields = dict(_load_json(args.params)) if args.params else {}
    for name in (*ESTIMATED_PARAMS, "delta", "tau"):
        override = getattr(args, name, None)
        if override is not None:
            fields[name] = override
    return BlowflyParams.from_dict(fields)


def _day_format(value):
    return f"{value:g}"


def _write_result(args, out, payload, started):
    envelope = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "config": _resolved_config(args),
        "git": _git_describe(),
        "runtime_seconds": round(time.monotonic() - started, 3),
        "result": payload,
    }
    path = out / f"{args.command}.json"
    with open(path, "w") as fh:
        json.dump(envelope, fh, indent=2, default=_jsonable)
        fh.write("\n")
    # exit 0 only for a file that parses back with the expected schema
    if _load_json(path).get("schema_version") != SCHEMA_VERSION:
        raise BlowpompError(f"result file {path} failed schema self-check")
    return path


def _resolved_config(args):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    for key, value in config.items():
        if isinstance(value, pathlib.Path):
            config[key] = str(value)
    return config


def _add_blowfly_param_flags(parser):
    parser.add_argument("--params", help="JSON file of natural-scale parameters")
    for name in ESTIMATED_PARAMS:
        parser.add_argument(f"--{name.replace('_', '-')}", type=float, default=None,
                            help=f"override {name}")
    parser.add_argument("--delta", type=float, default=None, help="Euler step (days)")
    parser.add_argument("--tau", type=float, default=None, help="maturation delay (days)")


def cmd_simulate(args, out):
    params = _blowfly_params(args)
    if args.data is not None:
        init = initial_state(_load_data(args).init_window(), params.delta, params.tau)
    else:
        buf = np.full(params.lag_steps + 1, args.init_n, dtype=np.int64)
        init = DelayState(buf, 0.0)
    traj = simulate(params, init, args.steps, args.seed)
    csv_path = out / "simulate.csv"
    with open(csv_path, "w") as fh:
        fh.write("day,N,y\n")
        for day, n, y in zip(traj.times[1:], traj.states[1:], traj.observations[1:]):
            cell = "" if np.isnan(y) else f"{int(y)}"
            fh.write(f"{_day_format(day)},{int(n)},{cell}\n")
    return {"params": params.to_dict(), "steps": args.steps, "csv": str(csv_path)}


def cmd_skeleton(args, out):
    params = _blowfly_params(args)
    series = _load_data(args)
    init = initial_state(series.init_window(), params.delta, params.tau)
    traj = iterate_skeleton(params, init, args.steps)
    skel_path = out / "skeleton.csv"
    with open(skel_path, "w") as fh:
        fh.write("day,N_skeleton\n")
        for day, n in zip(traj.times, traj.states):
            fh.write(f"{_day_format(day)},{float(n)!r}\n")
    obs_path = out / "observations.csv"
    with open(obs_path, "w") as fh:
        fh.write("day,count\n")
        for day, y in zip(series.times, series.counts):
            fh.write(f"{_day_format(day)},{int(y)}\n")
    return {"params": params.to_dict(), "steps": args.steps,
            "csv": str(skel_path), "observations_csv": str(obs_path)}


def _pomp_model_and_window(args, params):
    series = _load_data(args)
    init = initial_state(series.init_window(), params.delta, params.tau)
    model = BlowflyModel(params.delta, params.tau, init)
    window = series.window(args.window_start, args.window_end)
    return model, window


def _pomp_row(params, loglik, notes):
    return {
        "model": f"pomp-{params.delta:g}day",
        "k": POMP_N_ESTIMATED,
        "loglik": loglik,
        "notes": notes,
    }


def cmd_pfilter(args, out):
    params = _blowfly_params(args)
    model, window = _pomp_model_and_window(args, params)
    loglik, se = replicate_loglik(
        model, params, window, args.particles, args.reps, args.seed,
        threads=args.threads,
    )
    return {
        "params": params.to_dict(),
        "loglik": loglik,
        "loglik_se": se,
        "particles": args.particles,
        "replicates": args.reps,
        "comparison_row": _pomp_row(
            params, loglik, f"particle filter, J={args.particles}, {args.reps} reps"),
    }


def cmd_mif(args, out):
    start = BlowflyParams.from_dict(_load_json(args.start))
    for name in ("delta", "tau"):
        if getattr(args, name) is not None:
            start = start.replace(**{name: getattr(args, name)})
    model, window = _pomp_model_and_window(args, start)
    config = MifConfig(j=args.particles, m=args.iterations, rw_sd=args.rw_sd,
                       cooling_factor=args.cooling_factor, seed=args.seed)
    best, traces = mif_restarts(
        model, window, start, config, n_restarts=args.restarts,
        jitter_sd=args.jitter_sd, final_reps=args.reps, threads=args.threads,
    )
    trace_path = out / "mif_trace.csv"
    with open(trace_path, "w") as fh:
        fh.write(best.to_csv())
    best_restart = max(range(len(traces)),
                       key=lambda r: (traces[r].final_loglik, -r))
    return {
        "start": start.to_dict(),
        "best": best.to_dict(),
        "best_restart": best_restart,
        "restarts": [
            {"restart": r, "final_loglik": t.final_loglik,
             "final_loglik_se": t.final_loglik_se}
            for r, t in enumerate(traces)
        ],
        "trace_csv": str(trace_path),
        "comparison_row": _pomp_row(
            best.final_params, best.final_loglik,
            f"iterated filtering, J={config.j}, M={config.m}, "
            f"{args.restarts} restarts"),
    }


def cmd_arma(args, out):
    series = _load_data(args)
    counts = series.window(args.window_start, args.window_end).counts
    fit = arma_fit(counts, args.p, args.q,
                   log_scale_adjust=(args.loglik_scale == "count"),
                   restarts=args.restarts, seed=args.seed)
    payload = fit.to_dict()
    payload["comparison_row"] = {
        "model": f"log-arma-{args.p}-{args.q}",
        "k": args.p + args.q + 2,
        "loglik": fit.loglik,
        "notes": f"exact Gaussian likelihood on the {fit.loglik_scale} scale",
    }
    return payload


def cmd_nlar(args, out):
    series = _load_data(args)
    counts = series.counts if args.window_end is None else series.counts[: args.window_end]
    start = XTParams.from_dict(_load_json(args.start))
    starts = [start]
    base = np.array([np.log(start.c), np.log(start.alpha), np.log(start.N0_xt),
                     np.log(start.nu / (1.0 - start.nu))])
    for r in range(1, args.restarts):
        rng = np.random.default_rng(derive_seed(args.seed, r, stream=RESTART_STREAM))
        x = base + args.jitter_sd * rng.standard_normal(4)
        starts.append(XTParams(c=np.exp(x[0]), alpha=np.exp(x[1]), N0_xt=np.exp(x[2]),
                               nu=1.0 / (1.0 + np.exp(-x[3])), tau=start.tau))
    weights = tuple(args.weights) if args.weights else None
    config = ApeConfig(horizon=args.horizon, weights=weights)
    fit = ape_fit(counts, config, starts, first_k=args.window_start)
    payload = fit.to_dict()
    payload["derived"] = derived_quantities(fit.params)
    name = "xt-one-step" if args.horizon == 1 else "xt-multi-horizon"
    payload["comparison_row"] = {
        "model": name,
        "k": 5,
        "loglik": fit.loglik,
        "notes": f"prediction-error fit over {args.horizon} horizon(s), "
                 "profiled Gaussian likelihood",
    }
    return payload


def cmd_compare(args, out):
    rows = []
    for path in args.results:
        envelope = _load_json(path)
        if envelope.get("schema_version") != SCHEMA_VERSION:
            raise BlowpompError(
                f"{path}: schema_version {envelope.get('schema_version')!r}, "
                f"expected {SCHEMA_VERSION}")
        row = envelope.get("result", {}).get("comparison_row")
        if row is None:
            raise BlowpompError(f"{path}: no comparison_row in result")
        rows.append(ComparisonRow(model=row["model"], k=int(row["k"]),
                                  loglik=float(row["loglik"]),
                                  notes=row.get("notes", "")))
    ordered = aic_table(rows)
    pairwise = []
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            a, b = ordered[i], ordered[j]
            df = max(a.k, b.k)
            report = chisq_compare(a.loglik, b.loglik, df)
            pairwise.append({"model_a": a.model, "model_b": b.model, "df": df, **report})
    md_path = out / "compare.md"
    with open(md_path, "w") as fh:
        fh.write(table_to_markdown(ordered))
    return {
        "table": [r.to_dict() for r in ordered],
        "chisq": pairwise,
        "markdown": str(md_path),
    }


def build_parser():
    parser = argparse.ArgumentParser(
        prog="blowpomp",
        description="Blowfly population dynamics: simulate, filter, fit, compare.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True,
                        help="RNG seed (required; no random default)")
    common.add_argument("--data", help="bi-daily count CSV (day,count)")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker cap")
    common.add_argument("--loglik-scale", choices=("count", "log"), default="count",
                        help="reporting convention for log-scale likelihoods")

    window = argparse.ArgumentParser(add_help=False)
    window.add_argument("--window-start", type=int, default=9,
                        help="first fitted observation (1-based)")
    window.add_argument("--window-end", type=int, default=None,
                        help="last fitted observation (default: end of series)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="stochastic sample path to day,N,y CSV")
    _add_blowfly_param_flags(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--init-n", type=int, default=400,
                   help="constant initial buffer when no --data is given")

    p = sub.add_parser("skeleton", parents=[common],
                       help="deterministic skeleton to day,N_skeleton CSV")
    _add_blowfly_param_flags(p)
    p.add_argument("--steps", type=int, required=True)

    p = sub.add_parser("pfilter", parents=[common, window],
                       help="replicated particle-filter log-likelihood")
    _add_blowfly_param_flags(p)
    p.add_argument("-J", "--particles", type=int, default=10000)
    p.add_argument("--reps", type=int, default=10, help="filter replicates")

    p = sub.add_parser("mif", parents=[common, window],
                       help="iterated-filtering search with jittered restarts")
    p.add_argument("--start", required=True, help="JSON starting parameters")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("-J", "--particles", type=int, default=5000)
    p.add_argument("-M", "--iterations", type=int, default=60)
    p.add_argument("--rw-sd", type=float, default=0.02)
    p.add_argument("--cooling-factor", type=float, default=0.95)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--jitter-sd", type=float, default=0.25)
    p.add_argument("--reps", type=int, default=5, help="final likelihood replicates")

    p = sub.add_parser("arma", parents=[common, window],
                       help="exact-likelihood ARMA benchmark on log counts")
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--restarts", type=int, default=20)

    p = sub.add_parser("nlar", parents=[common, window],
                       help="nonlinear autoregression fit by prediction error")
    p.add_argument("--start", required=True, help="JSON starting parameters")
    p.add_argument("--horizon", type=int, default=1,
                   help="prediction horizons averaged by the objective")
    p.add_argument("--weights", type=float, nargs="+", default=None,
                   help="per-horizon weights (default uniform)")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--jitter-sd", type=float, default=0.25)

    p = sub.add_parser("compare", parents=[common],
                       help="AIC table and likelihood-gap tests from result JSONs")
    p.add_argument("results", nargs="+", help="result JSON files to compare")

    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "skeleton": cmd_skeleton,
    "pfilter": cmd_pfilter,
    "mif": cmd_mif,
    "arma": cmd_arma,
    "nlar": cmd_nlar,
    "compare": cmd_compare,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.monotonic()
    try:
        out = _out_dir(args)
        payload = COMMANDS[args.command](args, out)
        path = _write_result(args, out, payload, started)
    except (BlowpompError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"blowpomp {args.command}: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
