"""Command-line front end: solve one instance, run sweeps, check ratings files.

Exit codes: 0 on success, 1 on usage errors (nothing is written), 2 on
solver or runtime errors (a partial trace, if any, is flushed with its
status recorded).  All randomness derives from --seed; list-valued flags
take comma lists ("2,4,6") or inclusive ranges ("100:1000:100").
"""

import argparse
import os
import sys

import numpy as np

from lowrank import harness
from lowrank.harness import SweepSpec, emit_results, ingest_ratings, \
    make_problem, oversample_to_m, run_sweep
from lowrank.solvers import ALGORITHMS, SolverConfig, solve

PROBLEMS = ("completion", "gaussian", "phase-retrieval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; the contract here is 1
    def error(self, message):
        raise UsageError(message)


def _int_list(text):
    """Parse "a,b,c" or inclusive "start:stop:step" into a tuple of ints."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range syntax is start:stop:step, got {text!r}")
        start, stop, step = (int(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"bad range {text!r}")
        return tuple(range(start, stop + 1, step))
    return tuple(int(p) for p in text.split(","))


def _float_list(text):
    return tuple(float(p) for p in text.split(","))


def _algorithms(text):
    algs = tuple(p.strip() for p in text.split(","))
    for a in algs:
        if a not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
    return algs


def _default_workers():
    return int(os.environ.get("LOWRANK_WORKERS", "1"))


def build_parser():
    parser = _Parser(prog="lowrank",
                     description="Low-rank matrix recovery toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", parents=[], help="solve one instance")
    ps.add_argument("--problem", choices=PROBLEMS, required=True)
    ps.add_argument("--n", type=int, help="square dimension shorthand")
    ps.add_argument("--n1", type=int)
    ps.add_argument("--n2", type=int)
    ps.add_argument("--rank", type=int, required=True)
    ps.add_argument("--oversampling", type=float,
                    help="measurements as a multiple of (n1+n2-r)r")
    ps.add_argument("--measurements", type=int, help="explicit m")
    ps.add_argument("--sigma", type=float, default=0.0,
                    help="relative noise level (default 0)")
    ps.add_argument("--distribution", choices=("uniform01", "gaussian"),
                    default="uniform01",
                    help="factor entries of the ground truth (default uniform01)")
    ps.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    ps.add_argument("--step-policy", choices=("constant", "theoretical",
                                              "linesearch"),
                    default="constant", help="step rule (default constant)")
    ps.add_argument("--step-size", type=float,
                    help="absolute constant step size")
    ps.add_argument("--step-scale", type=float,
                    help="constant step as scale/(operator gradient scale); "
                         "default 1")
    ps.add_argument("--epsilon-policy", choices=("vee-squared", "constant"),
                    default="vee-squared",
                    help="metric regularizer rule (default vee-squared)")
    ps.add_argument("--epsilon", type=float, default=1e-8,
                    help="epsilon for the constant policy (default 1e-8)")
    ps.add_argument("--max-iters", type=int, default=1000)
    ps.add_argument("--stop", choices=("relative-change", "residual",
                                       "truth-error"),
                    default="relative-change",
                    help="stopping rule (default relative-change)")
    ps.add_argument("--tol", type=float, default=1e-5,
                    help="tolerance of the stopping rule (default 1e-5)")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--trace", help="write the per-iteration trace CSV here")
    ps.add_argument("-v", "--verbose", action="store_true")

    pw = sub.add_parser("sweep", help="run an experiment grid")
    pw.add_argument("--kind", required=True,
                    choices=("size", "oversampling", "noise", "success-grid",
                             "phase-retrieval", "fit-ratings"))
    pw.add_argument("--n", type=int, help="square dimension")
    pw.add_argument("--n1", type=int)
    pw.add_argument("--n2", type=int)
    pw.add_argument("--rank", type=int, help="fixed rank for 1-D sweeps")
    pw.add_argument("--sizes", type=_int_list, help="sizes for --kind size")
    pw.add_argument("--ranks", type=_int_list,
                    help="rank list for grids and ratings fits")
    pw.add_argument("--oversamplings", type=_float_list,
                    help="oversampling list (single value for noise sweeps)")
    pw.add_argument("--measurements", type=_int_list,
                    help="m list, e.g. 100:1000:100")
    pw.add_argument("--sigmas", type=_float_list, help="noise levels")
    pw.add_argument("--distribution", choices=("uniform01", "gaussian"),
                    default="uniform01")
    pw.add_argument("--algorithms", type=_algorithms, required=True)
    pw.add_argument("--reps", type=int, default=0,
                    help="replications per cell (default: 5, success grids 10)")
    pw.add_argument("--max-iters", type=int, default=500)
    pw.add_argument("--stop", choices=("relative-change", "residual",
                                       "truth-error"),
                    help="override the sweep kind's stopping rule")
    pw.add_argument("--tol", type=float, default=0.0)
    pw.add_argument("--step-size", type=float,
                    help="absolute constant step for all solvers")
    pw.add_argument("--epsilon", type=float, default=1e-8)
    pw.add_argument("--ratings", help="ratings file for fit-ratings")
    pw.add_argument("--ratings-format", choices=("triples", "movielens-dat"),
                    default="triples")
    pw.add_argument("--seed", type=int, default=0, help="master seed")
    pw.add_argument("--workers", type=int, default=_default_workers(),
                    help="parallel sweep cells (default $LOWRANK_WORKERS or 1)")
    pw.add_argument("--out", required=True, help="results CSV path")
    pw.add_argument("-v", "--verbose", action="store_true")

    pi = sub.add_parser("ingest-check", help="validate a ratings file")
    pi.add_argument("--path", required=True)
    pi.add_argument("--format", choices=("triples", "movielens-dat"),
                    default="triples")

    return parser


def _require_writable(path):
    parent = os.path.dirname(os.path.abspath(path)) or "."
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise UsageError(f"cannot write to {path!r}")


def _dims(args):
    if args.n is not None:
        if args.n1 is not None or args.n2 is not None:
            raise UsageError("give either --n or --n1/--n2, not both")
        return args.n, args.n
    if args.n1 is None or args.n2 is None:
        raise UsageError("need --n or both --n1 and --n2")
    return args.n1, args.n2


def _cmd_solve(args):
    n1, n2 = _dims(args)
    if args.rank < 1 or args.rank > min(n1, n2):
        raise UsageError("rank must be in [1, min(n1, n2)]")
    if (args.oversampling is None) == (args.measurements is None):
        raise UsageError("give exactly one of --oversampling / --measurements")
    if args.step_size is not None and args.step_scale is not None:
        raise UsageError("give at most one of --step-size / --step-scale")
    if args.trace:
        _require_writable(args.trace)

    m = (args.measurements if args.measurements is not None
         else oversample_to_m(n1, n2, args.rank, args.oversampling))
    problem = make_problem(args.problem, n1=n1, n2=n2, r=args.rank, m=m,
                           sigma=args.sigma, seed=args.seed,
                           distribution=args.distribution)
    step_constant = args.step_size
    if step_constant is None and args.step_scale is not None:
        step_constant = args.step_scale / problem.operator.gradient_scale
    config = SolverConfig(
        algorithm=args.algorithm, rank=args.rank,
        step_policy=args.step_policy, step_constant=step_constant,
        epsilon_policy=args.epsilon_policy, epsilon_constant=args.epsilon,
        max_iters=args.max_iters, stop_rule=args.stop, stop_tol=args.tol,
        seed=args.seed)

    trace = solve(problem, config)
    if args.trace:
        trace.to_csv(args.trace)
    err = trace.final_truth_error
    print(f"{args.algorithm}: status={trace.status} "
          f"iterations={trace.iterations} "
          f"residual={trace.final_residual:.3e} "
          + (f"truth_error={err:.3e}" if not np.isnan(err) else ""))
    if trace.status in ("error", "diverged"):
        if trace.error_message:
            print(f"solver error: {trace.error_message}", file=sys.stderr)
        return 2
    return 0


def _sweep_spec(args):
    kind = args.kind
    n1 = n2 = 0
    if kind != "fit-ratings":
        if kind == "size":
            if not args.sizes:
                raise UsageError("size sweep needs --sizes")
        else:
            n1, n2 = _dims(args)
    need = {
        "size": ("rank", "oversamplings"),
        "oversampling": ("rank", "oversamplings"),
        "noise": ("rank", "oversamplings", "sigmas"),
        "success-grid": ("ranks", "measurements"),
        "phase-retrieval": (),
        "fit-ratings": ("ranks", "ratings"),
    }[kind]
    for name in need:
        if not getattr(args, name):
            raise UsageError(f"{kind} sweep needs --{name.replace('_', '-')}")
    return SweepSpec(
        n1=n1, n2=n2, r=args.rank or 0,
        sizes=tuple(args.sizes or ()),
        ranks=tuple(args.ranks or ()),
        oversamplings=tuple(args.oversamplings or ()),
        measurements=tuple(args.measurements or ()),
        sigmas=tuple(args.sigmas or ()),
        distribution=args.distribution,
        reps=args.reps,
        max_iters=args.max_iters,
        stop_rule=args.stop or "",
        stop_tol=args.tol,
        step_constant=args.step_size,
        epsilon_constant=args.epsilon,
        ratings_path=args.ratings or "",
        ratings_format=args.ratings_format,
        master_seed=args.seed,
    )


def _cmd_sweep(args):
    if args.stop and args.tol <= 0:
        raise UsageError("--stop override needs a positive --tol")
    _require_writable(args.out)
    spec = _sweep_spec(args)
    progress = None
    if args.verbose:
        def progress(done, total):
            print(f"cells {done}/{total}", file=sys.stderr)
    results = run_sweep(args.kind, spec, list(args.algorithms),
                        workers=max(1, args.workers), progress=progress)
    emit_results(results, args.out)
    print(f"wrote {len(results)} rows to {args.out}")
    return 0


def _cmd_ingest_check(args):
    op, y = ingest_ratings(args.path, args.format)
    print(f"rows={op.n1} cols={op.n2} observations={op.m} "
          f"value_min={y.min():g} value_max={y.max():g} value_mean={y.mean():g}")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"lowrank: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_ingest_check(args)
    except UsageError as exc:
        print(f"lowrank: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"lowrank: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
