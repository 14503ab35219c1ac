"""Iteration loops for low-rank matrix recovery.

Four algorithms over the same skeleton (gradient, direction, step, rank-r
truncation): descent under the canonical metric, descent under the
data-driven diagonal metric, descent under the Kronecker-factored (Shampoo)
metric, and normalized iterative hard thresholding.  Steps on the first
three stay in factored width-2r form end to end; NIHT thresholds a full
n1 x n2 update and therefore pays one dense SVD per iteration.

A solver run is single-threaded and deterministic given its inputs; only
the wall-clock fields of the trace vary between identical runs.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from lowrank.kernels import (FactoredRank2r, compact_svd, hard_threshold_gram,
                             truncate_tangent)
from lowrank.metric import (TangentElement, WeightedBasis, _inv_sqrt_spd,
                            build_preconditioner, canonical_project,
                            choose_epsilon, precondition_direction,
                            shampoo_init, shampoo_quarter_roots,
                            shampoo_update, weighted_basis, weighted_project)

__all__ = [
    "SolverConfig",
    "SolveTrace",
    "spectral_init",
    "step_size",
    "rgd_step",
    "prgd_step",
    "shampoo_step",
    "niht_step",
    "solve",
]

BASE_ALGORITHMS = ("rgd", "prgd", "shampoo-rgd", "niht")
ALGORITHMS = BASE_ALGORITHMS + ("adaptive-rgd", "adaptive-prgd")
STEP_POLICIES = ("constant", "theoretical", "linesearch")
STOP_RULES = ("relative-change", "residual", "truth-error", "none")

DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class SolverConfig:
    """Solver selection plus step, metric, and stopping policies.

    ``algorithm`` accepts the adaptive-* aliases, which pin the line-search
    step policy onto the base algorithm.  ``step_constant`` is the literal
    step size; None asks for 1 / (operator gradient scale), the natural
    constant for each measurement family.
    """

    algorithm: str
    rank: int
    step_policy: str = "constant"
    step_constant: float | None = None
    epsilon_policy: str = "vee-squared"
    epsilon_constant: float = 1e-8
    max_iters: int = 500
    stop_rule: str = "relative-change"
    stop_tol: float = 1e-5
    init_normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.step_policy not in STEP_POLICIES:
            raise ValueError(f"unknown step policy {self.step_policy!r}")
        if self.epsilon_policy not in ("vee-squared", "constant"):
            raise ValueError(f"unknown epsilon policy {self.epsilon_policy!r}")
        if self.stop_rule not in STOP_RULES:
            raise ValueError(f"unknown stopping rule {self.stop_rule!r}")
        if self.stop_rule != "none" and self.stop_tol <= 0:
            raise ValueError("stopping tolerance must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        base, policy = self.resolved()
        if policy == "theoretical" and base not in ("prgd",):
            raise ValueError("theoretical step size is defined for prgd only")

    def resolved(self):
        """(base algorithm, effective step policy) with aliases expanded."""
        if self.algorithm.startswith("adaptive-"):
            return self.algorithm[len("adaptive-"):], "linesearch"
        return self.algorithm, self.step_policy


@dataclass
class SolveTrace:
    """Per-iteration records of one solver run.

    Row 0 describes the spectral initializer; wall time is cumulative and
    nondecreasing.  ``truth_error_rel`` is NaN when no ground truth exists,
    ``step_size``/``epsilon`` are NaN where not applicable.
    """

    algorithm: str
    status: str = "max-iters"
    error_message: str = ""
    iteration: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    residual_rel: np.ndarray = field(default_factory=lambda: np.empty(0))
    truth_error_rel: np.ndarray = field(default_factory=lambda: np.empty(0))
    step_size: np.ndarray = field(default_factory=lambda: np.empty(0))
    epsilon: np.ndarray = field(default_factory=lambda: np.empty(0))
    elapsed_seconds: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def iterations(self):
        """Number of descent iterations performed (initialization excluded)."""
        return int(self.iteration[-1]) if self.iteration.size else 0

    @property
    def final_residual(self):
        return float(self.residual_rel[-1]) if self.residual_rel.size else np.nan

    @property
    def final_truth_error(self):
        return float(self.truth_error_rel[-1]) if self.truth_error_rel.size else np.nan

    def to_csv(self, path):
        from lowrank.harness import format_float  # local import avoids a cycle
        with open(path, "w") as fh:
            fh.write("iteration,residual_rel,truth_error_rel,step_size,"
                     "epsilon,elapsed_seconds\n")
            for k in range(self.iteration.size):
                fh.write(",".join([
                    str(int(self.iteration[k])),
                    format_float(self.residual_rel[k]),
                    format_float(self.truth_error_rel[k]),
                    format_float(self.step_size[k]),
                    format_float(self.epsilon[k]),
                    format_float(self.elapsed_seconds[k]),
                ]) + "\n")
            fh.write(f"# status={self.status}\n")


def spectral_init(op, y, r, normalize=True):
    """One hard-thresholding step from zero: top-r factors of the adjoint image.

    With ``normalize`` the adjoint is divided by the operator's gradient
    scale, making it an unbiased estimate of the target (A*A ~ scale *
    identity) whose error shrinks with the measurement count.  Without it
    the raw adjoint is thresholded as-is, which reproduces the behavior of
    running on an unscaled measurement ensemble.
    """
    y = np.asarray(y, dtype=float)
    if normalize:
        y = y / op.gradient_scale
    M = op.adjoint(y).materialize()
    return compact_svd(M, min(r, min(M.shape)))


def step_size(policy, *, mu=None, nu=None, op=None, direction=None,
              residual=None, constant=None):
    """Step length under one of the three policies.

    theoretical: harmonic-mean step 2 / (1/mu + 1/nu) from the norm-
    equivalence constants of the weighted metric.  linesearch: exact
    minimizer of the measurement-space least squares along ``direction``
    (a flat direction, with zero image under the operator, is an error).
    constant: the configured value, unchanged.
    """
    if policy == "theoretical":
        return 2.0 / (1.0 / mu + 1.0 / nu)
    if policy == "linesearch":
        a_dir = op.apply(direction)
        den = float(a_dir @ a_dir)
        if den == 0.0:
            raise ValueError("flat direction")
        return float(a_dir @ residual) / den
    if policy == "constant":
        return float(constant)
    raise ValueError(f"unknown step policy {policy!r}")


def _step_factored(X, T, alpha):
    """X - alpha * T as a width-2r factored matrix.

    Folds the tangent element back onto the bases (U, V) of X, giving the
    [U | P'] [Q' | V]^T form whose truncation needs only a 2r x 2r SVD.
    """
    b = T.basis
    left = np.hstack([X.U, (-alpha) * (T.P @ b.Nr.T)])
    right = np.hstack([X.V * X.S - alpha * (T.Q @ b.Nl.T), X.V])
    return FactoredRank2r(left, right)


def _linesearch(op, T, r_vec):
    return step_size("linesearch", op=op, direction=T.factored(),
                     residual=r_vec)


def _rgd_core(X, G, op, r_vec, rank, step):
    T = canonical_project(X, G)
    tnorm = T.norm_fro()
    if tnorm == 0.0:
        return X, 0.0
    alpha = _linesearch(op, T, r_vec) if step == "linesearch" else float(step)
    return truncate_tangent(_step_factored(X, T, alpha), rank), alpha


def _prgd_core(X, G, op, r_vec, rank, step, epsilon, precond=None):
    if precond is None:
        precond = build_preconditioner(G, epsilon)
    basis = weighted_basis(X, precond)
    D = precondition_direction(precond, G)
    T = weighted_project(basis, D)
    tnorm = T.norm_fro()
    if tnorm == 0.0:
        return X, 0.0
    if step == "linesearch":
        alpha = _linesearch(op, T, r_vec)
    elif step == "theoretical":
        vee = G.vee()
        mu = np.sqrt(epsilon + vee * vee)
        nu = np.sqrt(epsilon)
        alpha = step_size("theoretical", mu=mu, nu=nu)
    else:
        # a constant step is calibrated against the canonical gradient, so
        # rescale the preconditioned direction to that magnitude first
        gnorm = canonical_project(X, G).norm_fro()
        alpha = float(step) * gnorm / tnorm
    return truncate_tangent(_step_factored(X, T, alpha), rank), alpha


def _orthonormalize_full(U, Wq):
    """Weighted orthonormalization under a full symmetric PSD quarter root."""
    N = _inv_sqrt_spd(U.T @ (Wq @ U))
    return U @ N, N


def _shampoo_core(X, G, op, r_vec, rank, step, state):
    state = shampoo_update(state, G)
    Lq, Lqi, Rq, Rqi = shampoo_quarter_roots(state)
    Gd = G.materialize()
    D = Lqi @ Gd @ Rqi
    Ut, Nl = _orthonormalize_full(X.U, Lq)
    Vt, Nr = _orthonormalize_full(X.V, Rq)
    basis = WeightedBasis(X.U, X.V, Ut, Vt, Nl, Nr, None)
    LqUt = Lq @ Ut
    RqVt = Rq @ Vt
    C1t = D.T @ LqUt
    C2 = D @ RqVt
    T = TangentElement(basis, Q=C1t, P=C2 - Ut @ (C1t.T @ RqVt))
    tnorm = T.norm_fro()
    if tnorm == 0.0:
        return X, 0.0, state
    if step == "linesearch":
        alpha = _linesearch(op, T, r_vec)
    else:
        gnorm = canonical_project(X, G).norm_fro()
        alpha = float(step) * gnorm / tnorm
    return truncate_tangent(_step_factored(X, T, alpha), rank), alpha, state


def _niht_core(X, G, op, r_vec, rank):
    # gradient step with the full gradient; the step length is exact for the
    # component inside the current column space
    UtG = G.rmatmul(X.U).T                      # (r, n2)
    num = float(np.einsum("ij,ij->", UtG, UtG))
    if num == 0.0:
        return X, 0.0
    a_dir = op.apply(FactoredRank2r(X.U, UtG.T))
    den = float(a_dir @ a_dir)
    if den == 0.0:
        raise ValueError("flat direction")
    alpha = num / den
    M = X.dense()
    if G.kind == "sparse":
        M[G.rows, G.cols] -= alpha * G.vals
    else:
        M -= alpha * G.materialize()
    return hard_threshold_gram(M, min(rank, min(M.shape))), alpha


def _descent_gradient(op, X, y):
    r_vec = op.apply(X) - y
    return op.adjoint(r_vec), r_vec


def rgd_step(X, op, y, rank, step):
    """One canonical-metric step; ``step`` is a number or "linesearch"."""
    G, r_vec = _descent_gradient(op, X, y)
    X_next, alpha = _rgd_core(X, G, op, r_vec, rank, step)
    return X_next, {"alpha": alpha}


def prgd_step(X, op, y, rank, step, epsilon="vee-squared", precond=None):
    """One weighted-metric step.

    ``epsilon`` is "vee-squared" or a number; ``precond`` overrides the
    gradient-derived weights (used to force unit weights in tests).
    """
    G, r_vec = _descent_gradient(op, X, y)
    eps = choose_epsilon(G) if epsilon == "vee-squared" else float(epsilon)
    X_next, alpha = _prgd_core(X, G, op, r_vec, rank, step, eps, precond)
    return X_next, {"alpha": alpha, "epsilon": eps}


def shampoo_step(X, op, y, rank, step, state):
    """One Kronecker-factored-metric step; returns the grown accumulator state."""
    G, r_vec = _descent_gradient(op, X, y)
    X_next, alpha, state = _shampoo_core(X, G, op, r_vec, rank, step, state)
    return X_next, state, {"alpha": alpha}


def niht_step(X, op, y, rank):
    """One normalized hard-thresholding step (dense SVD of the update)."""
    G, r_vec = _descent_gradient(op, X, y)
    X_next, alpha = _niht_core(X, G, op, r_vec, rank)
    return X_next, {"alpha": alpha}


def solve(problem, config):
    """Run the configured algorithm on a problem instance, tracing every iteration.

    Stops on the configured rule, the iteration budget, or the divergence
    guard (error growing a millionfold over its starting value).
    """
    op, y, truth = problem.operator, problem.y, problem.truth
    base, policy = config.resolved()
    if config.stop_rule == "truth-error" and truth is None:
        raise ValueError("truth-error stopping needs a ground truth")

    if policy == "constant":
        step = (config.step_constant if config.step_constant is not None
                else 1.0 / op.gradient_scale)
    else:
        step = policy

    ynorm = float(np.linalg.norm(y))
    truth_norm = truth.norm_fro() if truth is not None else np.nan
    state = shampoo_init(*op.shape, config.epsilon_constant) if base == "shampoo-rgd" else None

    rec_it, rec_res, rec_err, rec_alpha, rec_eps, rec_wall = [], [], [], [], [], []
    t0 = time.perf_counter()

    def record(t, resid, err, alpha, eps):
        rec_it.append(t)
        rec_res.append(resid)
        rec_err.append(err)
        rec_alpha.append(alpha)
        rec_eps.append(eps)
        rec_wall.append(time.perf_counter() - t0)

    def rel_residual(r_vec):
        nr = float(np.linalg.norm(r_vec))
        return nr / ynorm if ynorm > 0 else nr

    def rel_truth(Xc):
        if truth is None:
            return np.nan
        return Xc.dist_fro(truth) / truth_norm if truth_norm > 0 else Xc.norm_fro()

    X = spectral_init(op, y, config.rank, normalize=config.init_normalize)
    r_vec = op.apply(X) - y
    resid = rel_residual(r_vec)
    err = rel_truth(X)
    record(0, resid, err, np.nan, np.nan)

    guard0 = err if truth is not None else resid
    status = "max-iters"
    error_message = ""

    for t in range(1, config.max_iters + 1):
        try:
            G = op.adjoint(r_vec)
            eps = np.nan
            if base == "rgd":
                X_next, alpha = _rgd_core(X, G, op, r_vec, config.rank, step)
            elif base == "prgd":
                eps = (choose_epsilon(G) if config.epsilon_policy == "vee-squared"
                       else config.epsilon_constant)
                X_next, alpha = _prgd_core(X, G, op, r_vec, config.rank, step, eps)
            elif base == "shampoo-rgd":
                X_next, alpha, state = _shampoo_core(
                    X, G, op, r_vec, config.rank, step, state)
            else:
                X_next, alpha = _niht_core(X, G, op, r_vec, config.rank)
        except Exception as exc:
            # flush what we have; callers read the status off the trace
            status = "error"
            error_message = str(exc)
            break

        r_vec = op.apply(X_next) - y
        resid = rel_residual(r_vec)
        err = rel_truth(X_next)
        record(t, resid, err, alpha, eps)

        change = X_next.dist_fro(X)
        X = X_next

        if config.stop_rule == "relative-change":
            stop = change <= config.stop_tol * max(1.0, X.norm_fro())
        elif config.stop_rule == "residual":
            stop = resid <= config.stop_tol
        elif config.stop_rule == "truth-error":
            stop = err <= config.stop_tol
        else:
            stop = False
        if stop:
            status = "converged"
            break

        guard = err if truth is not None else resid
        if guard0 > 0 and guard > DIVERGENCE_FACTOR * guard0:
            status = "diverged"
            break

    return SolveTrace(
        algorithm=config.algorithm,
        status=status,
        error_message=error_message,
        iteration=np.asarray(rec_it, dtype=int),
        residual_rel=np.asarray(rec_res),
        truth_error_rel=np.asarray(rec_err),
        step_size=np.asarray(rec_alpha),
        epsilon=np.asarray(rec_eps),
        elapsed_seconds=np.asarray(rec_wall),
    )
