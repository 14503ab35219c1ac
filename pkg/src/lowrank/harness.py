"""Experiment harness: problem generation, sweeps, and CSV emission.

A sweep is a grid of problem configurations; every cell is replicated with
seeds derived from one master seed through counter-based spawning, and all
algorithms within a replication see the identical instance (operator, data,
noise), so comparisons are paired.  Cells are independent and can run in a
bounded process pool; row order in the emitted CSV is grid-major with
algorithms alphabetical, independent of scheduling.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context

import numpy as np

from lowrank.kernels import CompactSVD, FactoredRank2r, truncate_tangent
from lowrank.operators import (CompletionOperator, make_completion,
                               make_gaussian, make_phase_retrieval,
                               read_triples, write_triples)
from lowrank.solvers import SolverConfig, solve

__all__ = [
    "ProblemInstance",
    "ExperimentResult",
    "SweepSpec",
    "gen_lowrank",
    "oversample_to_m",
    "add_noise",
    "make_problem",
    "fitting_error",
    "ingest_ratings",
    "export_ratings",
    "run_sweep",
    "emit_results",
    "format_float",
    "RESULT_COLUMNS",
]

RESULT_COLUMNS = ("experiment,algorithm,n1,n2,r,m,oversampling,sigma,"
                  "seed_count,iterations_mean,iterations_std,"
                  "cpu_seconds_mean,final_rel_error_mean,success_rate,status")

# an instance counts as recovered when the final relative error against the
# ground truth is at most this
SUCCESS_TOL = 1e-4


@dataclass(frozen=True)
class ProblemInstance:
    """Sensing operator, measurements, optional ground truth, and metadata."""

    operator: object
    y: np.ndarray
    truth: CompactSVD | None
    n1: int
    n2: int
    r: int
    m: int
    oversampling: float
    sigma: float
    seed: object


@dataclass
class ExperimentResult:
    """Aggregate of one (grid point, algorithm) over its replications."""

    experiment: str
    algorithm: str
    n1: int
    n2: int
    r: int
    m: int
    oversampling: float
    sigma: float
    seed_count: int
    iterations_mean: float
    iterations_std: float
    cpu_seconds_mean: float
    final_rel_error_mean: float
    success_rate: float
    status: str
    order: tuple = (0,)
    traces: list = field(default_factory=list)


def gen_lowrank(n1, n2, r, distribution, seed):
    """Random rank-r matrix from thin factors, returned in compact SVD form.

    distribution "uniform01" draws factor entries from [0, 1) (strongly
    coherent, ill-conditioned products); "gaussian" draws standard normals.
    """
    if r > min(n1, n2):
        raise ValueError("rank exceeds matrix dimensions")
    rng = np.random.default_rng(seed)
    if distribution == "uniform01":
        XL = rng.random((n1, r))
        XR = rng.random((n2, r))
    elif distribution == "gaussian":
        XL = rng.standard_normal((n1, r))
        XR = rng.standard_normal((n2, r))
    else:
        raise ValueError(f"unknown factor distribution {distribution!r}")
    return truncate_tangent(FactoredRank2r(XL, XR), r)


def oversample_to_m(n1, n2, r, oversampling):
    """Measurement count for a given multiple of the rank-r degrees of freedom.

    Here oversampling = m / ((n1 + n2 - r) r) >= is monotone in m: larger
    means easier.  (Some conventions quote the reciprocal; every interface
    in this package uses this one.)
    """
    if oversampling <= 0:
        raise ValueError("oversampling must be positive")
    m = int(round(oversampling * (n1 + n2 - r) * r))
    if m > n1 * n2 or m < 1:
        raise ValueError("oversampling infeasible")
    return m


def add_noise(y, sigma, seed):
    """Additive Gaussian noise rescaled to an exact relative level.

    The perturbation is sigma * ||y|| * w / ||w|| with standard normal w, so
    ||noise|| / ||y|| equals sigma exactly.
    """
    if sigma < 0:
        raise ValueError("noise level must be nonnegative")
    if sigma == 0:
        return y.copy()
    w = np.random.default_rng(seed).standard_normal(y.shape[0])
    return y + sigma * np.linalg.norm(y) * w / np.linalg.norm(w)


def make_problem(kind, *, n1, n2, r, m, sigma=0.0, seed=0,
                 distribution="uniform01"):
    """Build a synthetic instance: operator, clean or noisy data, ground truth.

    Operator, ground truth, and noise use independent streams spawned from
    the seed, so instances with the same seed are identical across runs.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    op_seed, x_seed, noise_seed = ss.spawn(3)
    if kind == "completion":
        op = make_completion(n1, n2, m, op_seed)
        X = gen_lowrank(n1, n2, r, distribution, x_seed)
    elif kind == "gaussian":
        op = make_gaussian(n1, n2, m, op_seed)
        X = gen_lowrank(n1, n2, r, "gaussian", x_seed)
    elif kind == "phase-retrieval":
        if n1 != n2:
            raise ValueError("phase retrieval needs a square target")
        op = make_phase_retrieval(n1, m, op_seed)
        x = np.random.default_rng(x_seed).standard_normal(n1)
        nrm = np.linalg.norm(x)
        X = CompactSVD((x / nrm)[:, None], np.array([nrm * nrm]),
                       (x / nrm)[:, None])
    else:
        raise ValueError(f"unknown problem kind {kind!r}")
    y = add_noise(op.apply(X), sigma, noise_seed)
    dof = (n1 + n2 - r) * r
    return ProblemInstance(op, y, X, n1, n2, r, m, m / dof, sigma, seed)


def fitting_error(op, X_t, y):
    """Relative residual on the observed entries (used without ground truth)."""
    ynorm = np.linalg.norm(y)
    if ynorm == 0:
        raise ValueError("zero measurement vector")
    return float(np.linalg.norm(op.apply(X_t) - y) / ynorm)


def _dense_index_map(ids):
    uniq = np.unique(ids)
    return uniq.searchsorted(ids), uniq.size


def ingest_ratings(path, format="triples"):
    """Observed-entry operator and rating vector from a ratings file.

    "triples" lines are 0-based "row col value"; "movielens-dat" lines are
    "UserID::MovieID::Rating::Timestamp" with arbitrary 1-based IDs that get
    mapped onto dense 0-based indices.  Duplicate (row, col) pairs and
    malformed lines are errors; so is an empty file.
    """
    if format == "triples":
        rows, cols, vals = read_triples(path)
        if rows.size == 0:
            raise ValueError("no observations")
        n1 = int(rows.max()) + 1
        n2 = int(cols.max()) + 1
    elif format == "movielens-dat":
        raw_rows, raw_cols, vals = [], [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split("::")
                if len(parts) != 4:
                    raise ValueError(
                        f"line {lineno}: expected 'UserID::MovieID::Rating::Timestamp'")
                try:
                    raw_rows.append(int(parts[0]))
                    raw_cols.append(int(parts[1]))
                    vals.append(float(parts[2]))
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: {exc}") from None
        if not raw_rows:
            raise ValueError("no observations")
        rows, n1 = _dense_index_map(np.asarray(raw_rows, dtype=np.int64))
        cols, n2 = _dense_index_map(np.asarray(raw_cols, dtype=np.int64))
        vals = np.asarray(vals)
    else:
        raise ValueError(f"unknown ratings format {format!r}")

    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    flat = rows.astype(np.int64) * n2 + cols
    if np.unique(flat).size != flat.size:
        raise ValueError("duplicate (row, col) pair")
    op = CompletionOperator(n1, n2, rows, cols)
    return op, vals


def export_ratings(path, op, y):
    """Inverse of triples ingestion; round-trips bit-exactly."""
    write_triples(path, op.rows, op.cols, y)


@dataclass(frozen=True)
class SweepSpec:
    """Grid description for :func:`run_sweep`; unused fields are ignored."""

    n1: int = 0
    n2: int = 0
    r: int = 0
    sizes: tuple = ()
    ranks: tuple = ()
    oversamplings: tuple = ()
    measurements: tuple = ()
    sigmas: tuple = ()
    distribution: str = "uniform01"
    reps: int = 0          # 0 means the sweep kind's default
    max_iters: int = 500
    stop_rule: str = ""    # empty means the sweep kind's default
    stop_tol: float = 0.0
    step_constant: float | None = None
    epsilon_constant: float = 1e-8
    ratings_path: str = ""
    ratings_format: str = "triples"
    master_seed: int = 0


# per-kind defaults: replication count and stopping rule
_SWEEP_DEFAULTS = {
    "size": (5, "truth-error", 1e-4),
    "oversampling": (5, "truth-error", 1e-4),
    "noise": (5, "relative-change", 1e-5),
    "success-grid": (10, "truth-error", 1e-4),
    "phase-retrieval": (5, "residual", 1e-8),
    "fit-ratings": (1, "none", 1.0),
}


def _cells(kind, spec):
    """(cell key tuple, problem kwargs) for every grid point, in grid order."""
    if kind == "size":
        for n in spec.sizes:
            m = oversample_to_m(n, n, spec.r, spec.oversamplings[0])
            yield {"kind": "completion", "n1": n, "n2": n, "r": spec.r, "m": m,
                   "sigma": 0.0, "distribution": spec.distribution}
    elif kind == "oversampling":
        for os_ in spec.oversamplings:
            m = oversample_to_m(spec.n1, spec.n2, spec.r, os_)
            yield {"kind": "completion", "n1": spec.n1, "n2": spec.n2,
                   "r": spec.r, "m": m, "sigma": 0.0,
                   "distribution": spec.distribution}
    elif kind == "noise":
        m = oversample_to_m(spec.n1, spec.n2, spec.r, spec.oversamplings[0])
        for sigma in spec.sigmas:
            yield {"kind": "completion", "n1": spec.n1, "n2": spec.n2,
                   "r": spec.r, "m": m, "sigma": float(sigma),
                   "distribution": spec.distribution}
    elif kind == "success-grid":
        for r in spec.ranks:
            for m in spec.measurements:
                yield {"kind": "gaussian", "n1": spec.n1, "n2": spec.n2,
                       "r": r, "m": m, "sigma": 0.0,
                       "distribution": "gaussian"}
    elif kind == "phase-retrieval":
        for m in (spec.measurements or (6 * spec.n1,)):
            yield {"kind": "phase-retrieval", "n1": spec.n1, "n2": spec.n1,
                   "r": 1, "m": m, "sigma": 0.0, "distribution": "gaussian"}
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")


def _cell_seed(master_seed, cell_index, rep):
    # counter-based split: replications are independent and reproducible
    return np.random.SeedSequence(master_seed, spawn_key=(cell_index, rep))


def _solver_config(algorithm, spec, stop_rule, stop_tol):
    return SolverConfig(
        algorithm=algorithm,
        rank=1,  # placeholder, replaced per cell
        step_constant=spec.step_constant,
        epsilon_constant=spec.epsilon_constant,
        max_iters=spec.max_iters,
        stop_rule=stop_rule,
        stop_tol=stop_tol,
    )


def _run_cell(args):
    (kind, cell_index, cell, algorithms, reps, spec,
     stop_rule, stop_tol, keep_traces) = args
    per_alg = {a: [] for a in algorithms}
    for rep in range(reps):
        seed = _cell_seed(spec.master_seed, cell_index, rep)
        problem = make_problem(
            cell["kind"], n1=cell["n1"], n2=cell["n2"], r=cell["r"],
            m=cell["m"], sigma=cell["sigma"], seed=seed,
            distribution=cell["distribution"])
        for alg in algorithms:
            cfg = replace(_solver_config(alg, spec, stop_rule, stop_tol),
                          rank=cell["r"])
            try:
                trace = solve(problem, cfg)
            except Exception as exc:  # keep the sweep alive, mark the row
                per_alg[alg].append(("error", np.nan, np.nan, np.nan, str(exc), None))
                continue
            per_alg[alg].append((
                trace.status, trace.iterations,
                float(trace.elapsed_seconds[-1]),
                trace.final_truth_error if problem.truth is not None
                else trace.final_residual,
                "", trace if keep_traces else None))
    rows = []
    for alg in sorted(algorithms):
        outcomes = per_alg[alg]
        statuses = [o[0] for o in outcomes]
        iters = np.array([o[1] for o in outcomes], dtype=float)
        secs = np.array([o[2] for o in outcomes], dtype=float)
        errs = np.array([o[3] for o in outcomes], dtype=float)
        ok = ~np.isnan(errs)
        success = float(np.sum(errs[ok] <= SUCCESS_TOL)) / reps if reps else 0.0
        if "error" in statuses:
            status = "error"
        elif "diverged" in statuses:
            status = "diverged"
        elif "max-iters" in statuses:
            status = "max-iters"
        else:
            status = "converged"
        rows.append(ExperimentResult(
            experiment=kind, algorithm=alg,
            n1=cell["n1"], n2=cell["n2"], r=cell["r"], m=cell["m"],
            oversampling=cell["m"] / ((cell["n1"] + cell["n2"] - cell["r"]) * cell["r"]),
            sigma=cell["sigma"], seed_count=reps,
            iterations_mean=float(np.nanmean(iters)) if reps else np.nan,
            iterations_std=float(np.nanstd(iters)) if reps else np.nan,
            cpu_seconds_mean=float(np.nanmean(secs)) if reps else np.nan,
            final_rel_error_mean=float(np.nanmean(errs)) if reps else np.nan,
            success_rate=success,
            status=status,
            order=(cell_index,),
            traces=[o[5] for o in outcomes] if keep_traces else [],
        ))
    return cell_index, rows


_BLAS_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _run_ratings_sweep(spec, algorithms, keep_traces):
    op, y = ingest_ratings(spec.ratings_path, spec.ratings_format)
    rows = []
    for ci, r in enumerate(spec.ranks):
        problem = ProblemInstance(op, y, None, op.n1, op.n2, r, op.m,
                                  op.m / ((op.n1 + op.n2 - r) * r), 0.0,
                                  spec.master_seed)
        for alg in sorted(algorithms):
            cfg = replace(_solver_config(alg, spec, "none", 1.0), rank=r)
            trace = solve(problem, cfg)
            rows.append(ExperimentResult(
                experiment="fit-ratings", algorithm=alg,
                n1=op.n1, n2=op.n2, r=r, m=op.m,
                oversampling=op.m / ((op.n1 + op.n2 - r) * r),
                sigma=0.0, seed_count=1,
                iterations_mean=float(trace.iterations), iterations_std=0.0,
                cpu_seconds_mean=float(trace.elapsed_seconds[-1]),
                final_rel_error_mean=trace.final_residual,
                success_rate=float(trace.final_residual <= SUCCESS_TOL),
                status=trace.status, order=(ci,),
                traces=[trace] if keep_traces else []))
    return rows


def run_sweep(kind, spec, algorithms, workers=1, keep_traces=False,
              progress=None):
    """Run every (grid point, algorithm, replication) and aggregate rows.

    Per-cell solver errors are recorded in their row; the sweep continues.
    With workers > 1 the cells run in a spawned process pool pinned to one
    BLAS thread each; results are re-ordered deterministically afterwards.
    """
    if kind not in _SWEEP_DEFAULTS:
        raise ValueError(f"unknown sweep kind {kind!r}")
    reps, stop_rule, stop_tol = _SWEEP_DEFAULTS[kind]
    if spec.reps:
        reps = spec.reps
    if spec.stop_rule:
        stop_rule, stop_tol = spec.stop_rule, spec.stop_tol

    if kind == "fit-ratings":
        return _run_ratings_sweep(spec, algorithms, keep_traces)

    tasks = [(kind, ci, cell, tuple(algorithms), reps, spec,
              stop_rule, stop_tol, keep_traces)
             for ci, cell in enumerate(_cells(kind, spec))]
    results = {}
    if workers > 1 and len(tasks) > 1:
        saved = {k: os.environ.get(k) for k in _BLAS_ENV}
        os.environ.update({k: "1" for k in _BLAS_ENV})
        try:
            with ProcessPoolExecutor(max_workers=workers,
                                     mp_context=get_context("spawn")) as pool:
                for ci, rows in pool.map(_run_cell, tasks):
                    results[ci] = rows
                    if progress:
                        progress(len(results), len(tasks))
        finally:
            for k, v in saved.items():
                if v is None:
                    os.environ.pop(k, None)
                else:
                    os.environ[k] = v
    else:
        for task in tasks:
            ci, rows = _run_cell(task)
            results[ci] = rows
            if progress:
                progress(len(results), len(tasks))
    out = []
    for ci in sorted(results):
        out.extend(results[ci])
    return out


def format_float(x):
    """Stable CSV float formatting; NaN becomes an empty field."""
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, float) and np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def emit_results(results, path):
    """Write result rows as CSV, grid-major then algorithm-alphabetical."""
    rows = sorted(results, key=lambda r: (r.order, r.algorithm))
    with open(path, "w") as fh:
        fh.write(RESULT_COLUMNS + "\n")
        for r in rows:
            fh.write(",".join([
                r.experiment, r.algorithm, str(r.n1), str(r.n2), str(r.r),
                str(r.m), format_float(float(r.oversampling)),
                format_float(float(r.sigma)), str(r.seed_count),
                format_float(float(r.iterations_mean)),
                format_float(float(r.iterations_std)),
                format_float(float(r.cpu_seconds_mean)),
                format_float(float(r.final_rel_error_mean)),
                format_float(float(r.success_rate)), r.status,
            ]) + "\n")
