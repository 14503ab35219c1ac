"""Data-driven weighted metric on the fixed-rank manifold.

The metric reweights the (i, j) entry of a matrix by the 2-norms of row i
and column j of the current ambient gradient, raised to the 1/4 power on
each side: <Z, Y>_W = sum_ij l_i^{1/4} r_j^{1/4} Z_ij Y_ij with
l_i = eps + ||G(i,:)||^2 and r_j = eps + ||G(:,j)||^2.  This module builds
the diagonal weights, orthonormalizes tangent bases under them, projects
onto tangent spaces in the weighted geometry, and rescales gradients into
metric-gradient directions.  A full-matrix (Kronecker-factored) variant of
the same construction backs the Shampoo baseline.

All objects are immutable after construction; every function is reentrant.
"""

from dataclasses import dataclass

import numpy as np

from lowrank.kernels import CompactSVD, FactoredRank2r
from lowrank.operators import GradientRep

__all__ = [
    "Preconditioner",
    "WeightedBasis",
    "TangentElement",
    "ShampooState",
    "build_preconditioner",
    "unit_preconditioner",
    "choose_epsilon",
    "weighted_orthonormalize",
    "weighted_basis",
    "weighted_project",
    "canonical_project",
    "precondition_direction",
    "weighted_inner",
    "weighted_norm",
    "shampoo_init",
    "shampoo_update",
    "shampoo_direction",
    "shampoo_quarter_roots",
]

# epsilon fallback when the gradient vanishes (its vee-norm is then zero and
# the theory's choice is undefined); solvers stop on the residual before the
# metric at an exact solution ever matters
EPSILON_FLOOR = 1e-30

# relative eigenvalue floor below which weighted Gram matrices are treated
# as singular; a hard error beats a silent pseudo-inverse that could mask
# solver divergence
GRAM_EIG_FLOOR = 1e-14


class Preconditioner:
    """Diagonal metric weights: row vector l, column vector r, and epsilon.

    Quarter roots (and their inverses) are precomputed since every use site
    needs them.
    """

    def __init__(self, ldiag, rdiag, epsilon):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.ldiag = np.asarray(ldiag, dtype=float)
        self.rdiag = np.asarray(rdiag, dtype=float)
        self.epsilon = float(epsilon)
        self.lq = self.ldiag ** 0.25
        self.rq = self.rdiag ** 0.25
        self.lqi = 1.0 / self.lq
        self.rqi = 1.0 / self.rq

    @property
    def shape(self):
        return (self.ldiag.shape[0], self.rdiag.shape[0])


def build_preconditioner(G, epsilon):
    """Weights from the gradient's row/column squared 2-norms plus epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    lsq, rsq = G.row_col_sqnorms()
    return Preconditioner(epsilon + lsq, epsilon + rsq, epsilon)


def unit_preconditioner(n1, n2):
    """All-ones weights; every weighted operation degenerates to canonical."""
    return Preconditioner(np.ones(n1), np.ones(n2), 1.0)


def choose_epsilon(G):
    """Squared vee-norm of the gradient.

    This choice makes the weighted/Frobenius norm-equivalence ratio exactly
    sqrt(2); a tiny floor covers the zero-gradient boundary.
    """
    v = G.vee()
    if v == 0.0:
        return EPSILON_FLOOR
    return v * v


def _inv_sqrt_spd(Gram):
    """Inverse square root of a small SPD matrix via eigendecomposition."""
    Gram = 0.5 * (Gram + Gram.T)
    w, Q = np.linalg.eigh(Gram)
    if w[-1] <= 0 or w[0] < GRAM_EIG_FLOOR * w[-1]:
        raise ValueError("degenerate weighted Gram")
    return (Q / np.sqrt(w)) @ Q.T


def weighted_orthonormalize(U, quarter_diag=None):
    """Orthonormalize columns of U under <x, y> = <diag(quarter_diag) x, y>.

    Returns (Utilde, N) with Utilde = U @ N and N symmetric, so the column
    span is preserved.  quarter_diag is the relevant weight vector already
    raised to the 1/4 power; None means canonical weights.
    """
    W = U if quarter_diag is None else quarter_diag[:, None] * U
    N = _inv_sqrt_spd(U.T @ W)
    return U @ N, N


@dataclass(frozen=True)
class WeightedBasis:
    """Tangent-space bases at a point, orthonormal under the weighted metric."""

    U: np.ndarray        # left singular vectors of the base point
    V: np.ndarray
    Ut: np.ndarray       # weighted-orthonormal versions
    Vt: np.ndarray
    Nl: np.ndarray       # Ut = U @ Nl, Vt = V @ Nr
    Nr: np.ndarray
    precond: Preconditioner


def weighted_basis(X, P):
    """Weighted-orthonormal tangent bases at the point X under P's metric."""
    Ut, Nl = weighted_orthonormalize(X.U, P.lq)
    Vt, Nr = weighted_orthonormalize(X.V, P.rq)
    return WeightedBasis(X.U, X.V, Ut, Vt, Nl, Nr, P)


@dataclass(frozen=True)
class TangentElement:
    """Element Ut @ Q.T + P @ Vt.T of the tangent space at a basis' point."""

    basis: WeightedBasis
    Q: np.ndarray  # (n2, r)
    P: np.ndarray  # (n1, r)

    def factored(self):
        return FactoredRank2r(np.hstack([self.basis.Ut, self.P]),
                              np.hstack([self.Q, self.basis.Vt]))

    def dense(self):
        return self.basis.Ut @ self.Q.T + self.P @ self.basis.Vt.T

    def norm_fro(self):
        F = self.factored()
        return float(np.sqrt(max(np.einsum(
            "ij,ij->", F.Left.T @ F.Left, F.Right.T @ F.Right), 0.0)))


def _thin_products(Z, left_thin, right_thin):
    """(Z.T @ left_thin, Z @ right_thin) without densifying structured Z."""
    if isinstance(Z, GradientRep):
        return Z.rmatmul(left_thin), Z.matmul(right_thin)
    Z = np.asarray(Z, dtype=float)
    return Z.T @ left_thin, Z @ right_thin


def _project(basis, Z, lq=None, rq=None):
    # closed form: Ut Ut^T Lq Z + Z Rq Vt Vt^T - Ut Ut^T Lq Z Rq Vt Vt^T,
    # assembled as Ut @ C1 + (C2 - Ut B) @ Vt^T from two thin products with Z
    Lu = basis.Ut if lq is None else lq[:, None] * basis.Ut
    Rv = basis.Vt if rq is None else rq[:, None] * basis.Vt
    C1t, C2 = _thin_products(Z, Lu, Rv)        # C1t = (Ut^T Lq Z)^T, (n2, r)
    B = C1t.T @ Rv                             # (r, r)
    return TangentElement(basis, Q=C1t, P=C2 - basis.Ut @ B)


def weighted_project(basis, Z):
    """Orthogonal projection of Z onto the tangent space in the weighted metric.

    Z may be dense or a structured GradientRep; no n1 x n2 intermediate is
    formed for sparse or rank-one-combination inputs.
    """
    P = basis.precond
    return _project(basis, Z, P.lq, P.rq)


def canonical_project(X, Z):
    """Euclidean-metric tangent projection at a CompactSVD point."""
    basis = WeightedBasis(X.U, X.V, X.U, X.V,
                          np.eye(X.rank), np.eye(X.rank), None)
    return _project(basis, Z)


def precondition_direction(P, G):
    """Metric gradient L^{-1/4} G R^{-1/4} (entrywise rescaling of G)."""
    if isinstance(G, GradientRep):
        return G.scale_rows_cols(P.lqi, P.rqi)
    G = np.asarray(G, dtype=float)
    return P.lqi[:, None] * G * P.rqi[None, :]


def _dense_of(Z):
    if isinstance(Z, GradientRep):
        return Z.materialize()
    if isinstance(Z, (CompactSVD, FactoredRank2r)):
        return Z.dense()
    if isinstance(Z, TangentElement):
        return Z.dense()
    return np.asarray(Z, dtype=float)


def weighted_inner(P, Z, Y):
    """<Z, Y>_W = sum_ij l_i^{1/4} r_j^{1/4} Z_ij Y_ij."""
    Z = _dense_of(Z)
    Y = _dense_of(Y)
    return float(np.einsum("ij,ij,i,j->", Z, Y, P.lq, P.rq))


def weighted_norm(P, Z):
    Z = _dense_of(Z)
    return float(np.sqrt(np.einsum("ij,ij,i,j->", Z, Z, P.lq, P.rq)))


@dataclass(frozen=True)
class ShampooState:
    """Accumulated outer products of all past gradients, plus epsilon * I."""

    Laccum: np.ndarray
    Raccum: np.ndarray
    epsilon: float


def shampoo_init(n1, n2, epsilon):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return ShampooState(epsilon * np.eye(n1), epsilon * np.eye(n2), float(epsilon))


def shampoo_update(state, G):
    """Accumulate G G^T and G^T G into the row/column statistics."""
    Gd = G.materialize() if isinstance(G, GradientRep) else np.asarray(G, dtype=float)
    return ShampooState(state.Laccum + Gd @ Gd.T,
                        state.Raccum + Gd.T @ Gd,
                        state.epsilon)


def _quarter_roots_psd(M):
    """(M^{1/4}, M^{-1/4}) of a symmetric PSD matrix via eigendecomposition."""
    w, Q = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] < -1e-10 * max(w[-1], 1.0):
        raise ValueError("accumulator not positive semidefinite")
    w = np.maximum(w, 0.0)
    if w[-1] <= 0 or w[0] < GRAM_EIG_FLOOR * w[-1]:
        raise ValueError("degenerate accumulator spectrum")
    q = w ** 0.25
    return (Q * q) @ Q.T, (Q / q) @ Q.T


def shampoo_quarter_roots(state):
    """Quarter roots and inverse quarter roots of both accumulators."""
    Lq, Lqi = _quarter_roots_psd(state.Laccum)
    Rq, Rqi = _quarter_roots_psd(state.Raccum)
    return Lq, Lqi, Rq, Rqi


def shampoo_direction(state, G):
    """Laccum^{-1/4} @ G @ Raccum^{-1/4} as a dense matrix."""
    Gd = G.materialize() if isinstance(G, GradientRep) else np.asarray(G, dtype=float)
    _, Lqi, _, Rqi = shampoo_quarter_roots(state)
    return Lqi @ Gd @ Rqi
