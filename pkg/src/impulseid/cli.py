"""Command-line front end.

Subcommands::

    impulseid simulate    rates + impulse CSV -> sampled output CSV (+ truth JSON)
    impulseid estimate    output CSV -> rates and impulses JSON (+ N_g grid CSV)
    impulseid region-map  output CSV -> sign label and residual per grid node
    impulseid boundary    triplet boundary curves, or gammaP/gammaN traced from data
    impulseid montecarlo  config JSON -> per-realization CSV and summary JSON

Exit status is 0 on success, 2 for bad input and 3 when estimation fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import (BoundaryNotFoundError, ContractError, DomainError, EstimationError,
                     SolverError)
from .estimator import (EstimateResult, GridSpec, estimate_noise_free, extract_impulses,
                        n_g_surface, select_gamma_p_hat, select_low_noise)
from .model import (ImpulseTrain, SampledSignal, SystemParams, add_noise, read_impulses,
                    read_signal, simulate_output, write_signal)
from .montecarlo import ExperimentConfig, run_experiment
from .regions import (CurveKind, equidistant_curve, grid_axis, sweep_region_map,
                      trace_boundary, vertical_lines)

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION = 0, 2, 3


class InputError(Exception):
    """Bad command-line input that argparse itself cannot catch."""


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _load_params(path) -> tuple[SystemParams, float]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict) or "b1" not in data or "b2" not in data:
        raise ContractError(f"{path}: expected a JSON object with b1 and b2")
    return SystemParams(float(data["b1"]), float(data["b2"])), float(data.get("x2_init", 0.0))


def _grid(args, y: SampledSignal) -> GridSpec:
    for name in ("b1_min", "b1_max", "b2_min", "b2_max"):
        if getattr(args, name) is None:
            raise InputError(f"--{name.replace('_', '-')} is required")
    pi = args.pi if args.pi is not None else max(1, len(y) // 2)
    return GridSpec.from_ranges((args.b1_min, args.b1_max), (args.b2_min, args.b2_max),
                                args.delta_b, pi=pi, d_min_frac=args.d_min_frac)


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    params, x2_init = _load_params(args.params)
    impulses = read_impulses(args.impulses)
    t_end = args.t_end
    if t_end is None:
        t_end = (impulses.tau.max() if len(impulses) else 0.0) + args.tau_end
    if not args.dt > 0 or t_end < args.t_start:
        raise InputError("need --dt > 0 and --t-end >= --t-start")
    times = args.t_start + args.dt * np.arange(math.floor((t_end - args.t_start) / args.dt
                                                          + 1e-9) + 1)
    y = simulate_output(params, impulses, x2_init, times)
    if args.sigma > 0:
        y = add_noise(y, args.sigma, args.seed)
    out = Path(args.out)
    write_signal(out, y)
    truth = {"b1": params.b1, "b2": params.b2, "x2_init": x2_init,
             "impulses": [{"tau": t, "d": d} for t, d in impulses],
             "sigma": args.sigma, "seed": args.seed, "dt": args.dt}
    _sidecar(out, ".truth.json").write_text(json.dumps(truth, indent=2) + "\n",
                                            encoding="utf-8")
    return EXIT_OK


def cmd_estimate(args) -> int:
    y = read_signal(args.data)
    out = Path(args.out)
    merge = not args.no_merge
    if args.mode == "noise-free":
        box = {}
        if args.b1_min is not None and args.b1_max is not None:
            box["b1_bounds"] = (args.b1_min, args.b1_max)
        if args.b2_min is not None and args.b2_max is not None:
            box["b2_bounds"] = (args.b2_min, args.b2_max)
        b1_hat, b2_hat = estimate_noise_free(y, pi=args.pi, **box)
        result = extract_impulses(y, b1_hat, b2_hat, merge=merge, d_min_frac=args.d_min_frac)
    else:
        grid = _grid(args, y)
        surface = n_g_surface(y, grid)
        surface.to_csv(_sidecar(out, ".diagnostics.csv"))
        if args.mode == "low-noise":
            b1_hat, b2_hat = select_low_noise(surface)
            result = extract_impulses(y, b1_hat, b2_hat, merge=merge,
                                      d_min_frac=args.d_min_frac)
        else:
            curve = select_gamma_p_hat(surface)
            if len(curve) == 0:
                raise EstimationError("no eligible node in any b2 row")
            result = EstimateResult(None, None, ImpulseTrain([], []), math.nan, math.nan,
                                    gamma_p_hat=curve)
    result.to_json(out, include_diagnostics=False)
    return EXIT_OK


def cmd_region_map(args) -> int:
    y = read_signal(args.data)
    grid = _grid(args, y)
    rmap = sweep_region_map(y, grid.b1_values, grid.b2_values, pi=grid.pi,
                            delta_b=grid.delta_b)
    rmap.to_csv(args.out)
    return EXIT_OK


def cmd_boundary(args) -> int:
    out = Path(args.out)
    if args.data is None:
        # triplet curves for samples at tau, tau + c, tau + 2c after one impulse
        b1v = grid_axis(args.b1_min if args.b1_min is not None else 0.05,
                        args.b1_max if args.b1_max is not None else 1.0, args.delta_b)
        with out.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["c", "b1", "b2"])
            for c in args.c:
                curve = equidistant_curve(b1v, args.b1_true, args.b2_true, args.tau, c)
                for b1, b2 in curve.points:
                    w.writerow([repr(float(c)), repr(float(b1)), repr(float(b2))])
        return EXIT_OK
    y = read_signal(args.data)
    grid = _grid(args, y)
    lines = vertical_lines(grid.b1_values, args.b2_min, args.b2_max)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curve = trace_boundary(y, CurveKind(args.kind), lines, args.tol_bisect, pi=grid.pi)
    curve.to_csv(out)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        config = ExperimentConfig.from_dict({**config.to_dict(), "seed": args.seed})
    report = run_experiment(config, workers=args.workers)
    report.write(args.out)
    print(report.table())
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _add_grid_flags(p, required=False):
    g = p.add_argument_group("grid")
    for name in ("b1-min", "b1-max", "b2-min", "b2-max"):
        g.add_argument(f"--{name}", type=float, required=required)
    g.add_argument("--delta-b", type=float, default=0.02, help="grid spacing (default 0.02)")
    g.add_argument("--pi", type=int, help="maximum impulse count (default K // 2)")
    g.add_argument("--d-min-frac", type=float, default=0.05,
                   help="impulse threshold as a fraction of the mean weight (default 0.05)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impulseid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample the output for a known impulse train")
    p.add_argument("--params", required=True, help="JSON with b1, b2 and optional x2_init")
    p.add_argument("--impulses", required=True, help="CSV with header tau,d")
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--t-start", type=float, default=0.0)
    p.add_argument("--t-end", type=float, help="default: last impulse + --tau-end")
    p.add_argument("--tau-end", type=float, default=5.0)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate rates and impulses from sampled output")
    p.add_argument("data", help="CSV with header t,y")
    _add_grid_flags(p)
    p.add_argument("--mode", choices=("low-noise", "high-noise", "noise-free"),
                   default="low-noise")
    p.add_argument("--no-merge", action="store_true", help="keep adjacent impulses apart")
    p.add_argument("--out", required=True, help="result JSON; grid diagnostics go next to it")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("region-map", help="sign label and residual on a rate grid")
    p.add_argument("data")
    _add_grid_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_region_map)

    p = sub.add_parser("boundary", help="triplet boundary curves or traced gammaP/gammaN")
    p.add_argument("--data", help="trace from this output CSV instead of the closed form")
    _add_grid_flags(p)
    p.add_argument("--kind", choices=("gammaP", "gammaN"), default="gammaP")
    p.add_argument("--tol-bisect", type=float, default=1e-4)
    p.add_argument("--b1-true", type=float, default=0.5)
    p.add_argument("--b2-true", type=float, default=1.5)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--c", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("montecarlo", help="run a randomized experiment")
    p.add_argument("config", help="experiment JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, DomainError, InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EstimationError, SolverError, BoundaryNotFoundError) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
