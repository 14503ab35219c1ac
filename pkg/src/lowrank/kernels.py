"""Dense linear-algebra kernels for fixed-rank matrix iterations.

Everything here operates in float64 on immutable inputs and is safe to call
concurrently.  The two workhorse objects are ``CompactSVD`` (the manifold
point representation) and ``FactoredRank2r`` (a tangent-space element stored
as a thin outer product), together with the rank-r truncation that retracts
a tangent element back to the manifold without ever forming an n1 x n2 array.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CompactSVD",
    "FactoredRank2r",
    "compact_svd",
    "hard_threshold",
    "truncate_tangent",
    "tall_qr",
    "vee_norm",
]


def _fix_signs(U, V):
    """Flip factor pairs so each left singular vector's largest entry is positive.

    Pins the sign ambiguity of SVD output so repeated runs produce identical
    factors (golden-file determinism).
    """
    idx = np.abs(U).argmax(axis=0)
    flip = U[idx, np.arange(U.shape[1])] < 0
    if flip.any():
        U = U.copy()
        V = V.copy()
        U[:, flip] *= -1.0
        V[:, flip] *= -1.0
    return U, V


@dataclass(frozen=True)
class CompactSVD:
    """Rank-r matrix stored as U @ diag(S) @ V.T with orthonormal U, V.

    S is nonnegative and nonincreasing; the represented matrix is exactly
    the reconstruction, so Frobenius norms and inner products reduce to
    O((n1+n2) r^2) factor arithmetic.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self):
        return self.S.shape[0]

    def dense(self):
        return (self.U * self.S) @ self.V.T

    def norm_fro(self):
        # factors are orthonormal, so the Frobenius norm is carried by S
        return float(np.linalg.norm(self.S))

    def inner(self, other):
        """Frobenius inner product with another CompactSVD of the same shape."""
        M = (self.U * self.S).T @ other.U
        N = self.V.T @ (other.V * other.S)
        return float(np.einsum("ij,ij->", M, N))

    def dist_fro(self, other):
        """Frobenius distance computed in factored form (never dense)."""
        d2 = self.norm_fro() ** 2 + other.norm_fro() ** 2 - 2.0 * self.inner(other)
        return float(np.sqrt(max(d2, 0.0)))

    @staticmethod
    def zero(n1, n2, r=1):
        """Zero matrix with orthonormal placeholder bases."""
        return CompactSVD(np.eye(n1, r), np.zeros(r), np.eye(n2, r))


@dataclass(frozen=True)
class FactoredRank2r:
    """Thin outer product Left @ Right.T with at most 2r columns per factor."""

    Left: np.ndarray
    Right: np.ndarray

    def __post_init__(self):
        if self.Left.shape[1] != self.Right.shape[1]:
            raise ValueError("factor width mismatch")

    @property
    def width(self):
        return self.Left.shape[1]

    @property
    def shape(self):
        return (self.Left.shape[0], self.Right.shape[0])

    def dense(self):
        return self.Left @ self.Right.T


def compact_svd(M, r):
    """Top-r singular triplets of a dense matrix.

    Ties at the r-th singular value follow the backend's ordering (not
    deterministic across LAPACK builds); signs are normalized afterwards.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] == 0 or M.shape[1] == 0:
        raise ValueError("empty matrix")
    if not 1 <= r <= min(M.shape):
        raise ValueError(f"rank bound {r} outside [1, {min(M.shape)}]")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    U, V = _fix_signs(U[:, :r], Vt[:r].T)
    return CompactSVD(U, s[:r].copy(), V)


def hard_threshold(M, r):
    """Best rank-r approximation of a dense matrix in Frobenius norm."""
    if r < 1:
        raise ValueError("rank must be >= 1")
    return compact_svd(M, min(r, min(np.asarray(M).shape)))


def truncate_tangent(W, r):
    """Best rank-r approximation of a thin factored matrix.

    Equals ``hard_threshold(W.dense(), r)`` but runs through two tall QR
    factorizations and one width x width SVD, so the cost is
    O((n1+n2) k^2 + k^3) for factor width k.  If the numerical rank falls
    short of r the trailing singular values are zero while the bases stay
    orthonormal, keeping the output on the closure of the rank-r set.
    """
    if r < 1:
        raise ValueError("rank must be >= 1")
    Q1, R1 = tall_qr(W.Left)
    Q2, R2 = tall_qr(W.Right)
    core = R1 @ R2.T
    Uc, s, Vct = np.linalg.svd(core)
    k = min(r, core.shape[0])
    U, V = _fix_signs(Q1 @ Uc[:, :k], Q2 @ Vct[:k].T)
    return CompactSVD(U, s[:k].copy(), V)


def hard_threshold_gram(M, r):
    """Best rank-r approximation via an eigendecomposition of the smaller Gram.

    Several times faster than a full SVD for square dense matrices, at the
    cost of half the digits on singular values near sigma_1 * sqrt(eps).
    Falls back to :func:`hard_threshold` whenever that loss could matter.
    Intended for solvers that threshold a full n1 x n2 update every
    iteration.
    """
    M = np.asarray(M, dtype=float)
    n1, n2 = M.shape
    if min(n1, n2) < 2 * r or min(n1, n2) <= 64:
        return hard_threshold(M, r)
    if n2 <= n1:
        w, Q = np.linalg.eigh(M.T @ M)
        w = w[::-1][:r]
        V = Q[:, ::-1][:, :r]
        s = np.sqrt(np.maximum(w, 0.0))
        if s[0] == 0.0 or s[-1] <= 1e-7 * s[0]:
            return hard_threshold(M, r)
        U = (M @ V) / s
    else:
        w, Q = np.linalg.eigh(M @ M.T)
        w = w[::-1][:r]
        U = Q[:, ::-1][:, :r]
        s = np.sqrt(np.maximum(w, 0.0))
        if s[0] == 0.0 or s[-1] <= 1e-7 * s[0]:
            return hard_threshold(M, r)
        V = (M.T @ U) / s
    # the Gram route loses strict orthonormality at close singular values;
    # one QR pass restores it without changing the subspace
    U, Ru = np.linalg.qr(U)
    V, Rv = np.linalg.qr(V)
    core = Ru @ np.diag(s) @ Rv.T
    Uc, s2, Vct = np.linalg.svd(core)
    U, V = _fix_signs(U @ Uc, V @ Vct.T)
    return CompactSVD(U, s2, V)


def tall_qr(M):
    """Reduced QR of a tall matrix; rank deficiency gives zeros on R's diagonal."""
    return np.linalg.qr(np.asarray(M, dtype=float), mode="reduced")


def vee_norm(M):
    """Maximum 2-norm over all rows and all columns of a dense matrix."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    row = np.sqrt((M * M).sum(axis=1).max())
    col = np.sqrt((M * M).sum(axis=0).max())
    return float(max(row, col))
