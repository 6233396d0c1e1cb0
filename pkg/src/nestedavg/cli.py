"""Command-line harness: ``nestedavg {run,sweep,check,describe}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 check
failure.
"""

import argparse
import json
import os
import sys

from .checks import SCOPES, run_checks
from .config import ConfigErrors, ExperimentConfig, load_config, serialize_config
from .errors import ConfigurationError, NumericError
from .params import VARIANTS, eta_grad_lipschitz, params_for, profile_of
from .sweep import build_problem, resolve_cadence, run_replication, run_sweep, write_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4


def _int_list(text):
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _variants(text):
    out = tuple(t.strip() for t in text.split(","))
    bad = [v for v in out if v not in VARIANTS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown variant {bad[0]!r}; choose from {', '.join(VARIANTS)}")
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="nestedavg", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--seed", type=int, help="root seed for replications")
    common.add_argument("--out", help="output directory")
    common.add_argument("--reps", type=int, help="replications per grid point")
    common.add_argument("--alg", type=_variants, help="comma-separated variants: alg1, alg2, sgd")
    common.add_argument("--grid", type=_int_list, help="comma-separated iteration budgets N")
    common.add_argument("--cadence", type=int, help="record every j-th iteration (0 = automatic)")
    common.add_argument("--workers", type=int, help="process pool size for replications")
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("run", parents=[common], help="single run: first variant, first N, replication 0")
    sub.add_parser("sweep", parents=[common], help="all variants over the N grid")
    check = sub.add_parser("check", parents=[common], help="invariant suites")
    check.add_argument("--scope", default="all", choices=SCOPES + ("all",))
    sub.add_parser("describe", parents=[common], help="print resolved config and derived parameters")
    return parser


def resolve_config(args):
    if args.config:
        config = load_config(args.config)
    else:
        config = ExperimentConfig(family="tanh_chain", variants=("alg1", "alg2"))
    return config.replace(
        seed=args.seed, out_dir=args.out, reps=args.reps, variants=args.alg,
        N_grid=args.grid, cadence=args.cadence, workers=args.workers,
    )


def describe(config, out=None):
    out = out or sys.stdout
    problem = build_problem(config)
    prof = profile_of(problem)
    out.write(serialize_config(config))
    out.write("\n[computed]\n")
    out.write(f"dims (d_0..d_T) = {', '.join(str(d) for d in problem.dims)}\n")
    out.write(f"feasible set = {problem.feasible_set.describe()}\n")
    out.write(f"L_f = {_floats(prof.lip_values)}\n")
    out.write(f"L_grad_f = {_floats(prof.lip_grads)}\n")
    out.write(f"L_grad_F = {prof.L_grad_F!r}\n")
    out.write(f"R = {_floats(prof.R[j] for j in sorted(prof.R))}\n")
    out.write(f"C = {_floats(prof.C[j] for j in sorted(prof.C))}\n")
    for variant in config.variants:
        p = params_for(variant, prof)
        out.write(f"{variant}: gamma = {_floats(p.gamma)}; lambda = {p.lam!r}; beta = {p.beta!r}; "
                  f"L_grad_eta = {eta_grad_lipschitz(p.beta)!r}\n")


def _floats(vals):
    vals = list(vals)
    return ", ".join(repr(float(v)) for v in vals) if vals else "none"


def _run_one(config, out=None):
    out = out or sys.stdout
    problem = build_problem(config)
    variant, N = config.variants[0], config.N_grid[0]
    rep = run_replication(problem, variant, N, 0, config.seed, config.cadence)
    if rep.failed:
        raise NumericError(rep.error)
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, f"{variant}_N{N}_rep0.csv")
    write_trace(path, problem.T, rep.rows)
    out.write(f"variant={variant} N={N} R={rep.R} cadence={resolve_cadence(N, config.cadence)}\n")
    out.write(json.dumps({"at_R": rep.at_R, "expected_over_R": rep.expected,
                          "calls_value": rep.calls_value, "calls_jac": rep.calls_jac},
                         indent=2, sort_keys=True) + "\n")
    out.write(f"trace: {path}\n")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "check":
            report = run_checks(args.scope, seed=args.seed or 0)
            sys.stdout.write(report.to_text())
            return EXIT_OK if report.ok else EXIT_CHECK
        config = resolve_config(args)
        if args.verb == "describe":
            describe(config)
            return EXIT_OK
        if args.verb == "run":
            _run_one(config)
            return EXIT_OK
        summary = run_sweep(config)
        sys.stdout.write(summary.to_text())
        return EXIT_NUMERIC if summary.failed else EXIT_OK
    except ConfigErrors as exc:
        for v in exc.violations:
            sys.stderr.write(f"config error: {v}\n")
        return EXIT_CONFIG
    except ConfigurationError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except OSError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
