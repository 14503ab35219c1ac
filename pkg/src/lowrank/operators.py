"""Linear measurement operators and their adjoints.

Three families: entrywise sampling (completion), dense random sensing, and
lifted rank-one sensing for phase retrieval.  Each family has a fast path
for factored inputs that never materializes an n1 x n2 array, and each
adjoint returns a ``GradientRep`` in the cheapest representation the family
admits (entrywise-sparse, dense, or a weighted combination of rank-one
terms).  Operators are immutable after construction and reentrant.
"""

import numpy as np
import scipy.sparse as sp

from lowrank import sampling
from lowrank.kernels import CompactSVD, FactoredRank2r

__all__ = [
    "GradientRep",
    "CompletionOperator",
    "GaussianOperator",
    "PhaseRetrievalOperator",
    "make_completion",
    "make_gaussian",
    "make_phase_retrieval",
    "read_triples",
    "write_triples",
]

# refuse to allocate dense sensing stacks beyond this many bytes
GAUSSIAN_STORAGE_CAP = 2 * 1024**3

# dense materializations of rank-one-combination gradients are cached up to
# this side length (the preconditioner needs entrywise row/column norms)
PHASE_CACHE_MAX_N = 512


def _as_factors(X):
    """Left/right thin factors of a CompactSVD, FactoredRank2r, or dense array."""
    if isinstance(X, CompactSVD):
        return X.U * X.S, X.V
    if isinstance(X, FactoredRank2r):
        return X.Left, X.Right
    return None


class GradientRep:
    """Ambient gradient A*(p) held in its operator-native representation.

    kind is one of "dense" (full array), "sparse" (values on sampled index
    pairs), or "lowrank" (coefficients over rank-one terms a_i a_i^T).  All
    kinds materialize to the same dense matrix; the structured kinds support
    the thin products and row/column statistics the solvers need without
    densifying.
    """

    def __init__(self, kind, *, dense=None, rows=None, cols=None, vals=None,
                 shape=None, A=None, coeffs=None, cache_dense=False):
        self.kind = kind
        self._sqnorms = None
        if kind == "dense":
            self._dense = np.asarray(dense, dtype=float)
            self.shape = self._dense.shape
        elif kind == "sparse":
            self.rows, self.cols, self.vals = rows, cols, vals
            self.shape = shape
            self._dense = None
            self._csr = None
        elif kind == "lowrank":
            self.A, self.coeffs = A, coeffs
            n = A.shape[1]
            self.shape = (n, n)
            self._dense = None
            if cache_dense:
                self._dense = self.materialize()
        else:
            raise ValueError(f"unknown gradient kind {kind!r}")

    def materialize(self):
        if self._dense is not None:
            return self._dense
        if self.kind == "sparse":
            G = np.zeros(self.shape)
            np.add.at(G, (self.rows, self.cols), self.vals)
            return G
        # lowrank: sum_i coeffs[i] * a_i a_i^T
        return (self.A * self.coeffs[:, None]).T @ self.A

    def _as_csr(self):
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.vals, (self.rows, self.cols)), shape=self.shape)
        return self._csr

    def matmul(self, B):
        """G @ B for a thin dense B."""
        if self.kind == "sparse":
            return self._as_csr() @ B
        if self.kind == "lowrank" and self._dense is None:
            return self.A.T @ (self.coeffs[:, None] * (self.A @ B))
        return self.materialize() @ B

    def rmatmul(self, B):
        """G.T @ B for a thin dense B."""
        if self.kind == "sparse":
            return self._as_csr().T @ B
        if self.kind == "lowrank" and self._dense is None:
            return self.A.T @ (self.coeffs[:, None] * (self.A @ B))
        return self.materialize().T @ B

    def row_col_sqnorms(self):
        """Squared 2-norms of every row and every column (memoized)."""
        if self._sqnorms is None:
            if self.kind == "sparse":
                self._sqnorms = sampling.index_sqnorms(
                    self.rows, self.cols, self.vals,
                    self.shape[0], self.shape[1])
            else:
                G = self.materialize()
                self._sqnorms = ((G * G).sum(axis=1), (G * G).sum(axis=0))
        return self._sqnorms

    def vee(self):
        """Maximum 2-norm over rows and columns."""
        lsq, rsq = self.row_col_sqnorms()
        if lsq.size == 0:
            return 0.0
        return float(np.sqrt(max(lsq.max(), rsq.max())))

    def scale_rows_cols(self, row_scale, col_scale):
        """Entrywise G_ij * row_scale[i] * col_scale[j], keeping the kind cheap."""
        if self.kind == "sparse":
            vals = sampling.scale_entries(
                self.rows, self.cols, self.vals, row_scale, col_scale)
            return GradientRep("sparse", rows=self.rows, cols=self.cols,
                               vals=vals, shape=self.shape)
        G = self.materialize() * row_scale[:, None]
        G *= col_scale[None, :]
        return GradientRep("dense", dense=G)

    def norm_fro(self):
        if self.kind == "sparse":
            return float(np.linalg.norm(self.vals))
        return float(np.linalg.norm(self.materialize()))


class CompletionOperator:
    """Measures the entries of a matrix on a fixed duplicate-free index set."""

    kind = "completion"

    def __init__(self, n1, n2, rows, cols):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape:
            raise ValueError("row/col index arrays differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= n1
                          or cols.min() < 0 or cols.max() >= n2):
            raise ValueError("sample index out of range")
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        flat = rows * n2 + cols
        if np.unique(flat).size != flat.size:
            raise ValueError("duplicate sample pairs")
        self.n1, self.n2 = n1, n2
        self.rows, self.cols = rows, cols
        self.m = rows.size

    @property
    def shape(self):
        return (self.n1, self.n2)

    @property
    def gradient_scale(self):
        """Scale s with A*A ~ s * identity on generic matrices (sampling ratio)."""
        return self.m / (self.n1 * self.n2)

    def apply(self, X):
        factors = _as_factors(X)
        if factors is not None:
            L, R = factors
            if L.shape[0] != self.n1 or R.shape[0] != self.n2:
                raise ValueError("operand shape mismatch")
            return sampling.factored_entries(
                np.ascontiguousarray(L), np.ascontiguousarray(R),
                self.rows, self.cols)
        Z = np.asarray(X, dtype=float)
        if Z.shape != self.shape:
            raise ValueError("operand shape mismatch")
        return Z[self.rows, self.cols].astype(float, copy=True)

    def adjoint(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.m,):
            raise ValueError("measurement length mismatch")
        return GradientRep("sparse", rows=self.rows, cols=self.cols,
                           vals=p.copy(), shape=self.shape)


class GaussianOperator:
    """Dense sensing: m inner products against stored random matrices."""

    kind = "gaussian"

    def __init__(self, A_stack, n1, n2):
        if A_stack.shape[1] != n1 * n2:
            raise ValueError("stack width must equal n1*n2")
        self.A_stack = A_stack
        self.n1, self.n2 = n1, n2
        self.m = A_stack.shape[0]

    @property
    def shape(self):
        return (self.n1, self.n2)

    @property
    def gradient_scale(self):
        """With unit-variance entries, E[A*A] = m * identity."""
        return float(self.m)

    def _dense_operand(self, X):
        factors = _as_factors(X)
        Z = factors[0] @ factors[1].T if factors is not None else np.asarray(X, dtype=float)
        if Z.shape != self.shape:
            raise ValueError("operand shape mismatch")
        return Z

    def apply(self, X):
        return self.A_stack @ self._dense_operand(X).ravel()

    def adjoint(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.m,):
            raise ValueError("measurement length mismatch")
        return GradientRep("dense",
                           dense=(self.A_stack.T @ p).reshape(self.shape))


class PhaseRetrievalOperator:
    """Lifted rank-one sensing: measurement i of Z is a_i^T Z a_i."""

    kind = "phase-retrieval"

    def __init__(self, A):
        self.A = A
        self.m, self.n = A.shape

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def gradient_scale(self):
        return float(self.m)

    def apply(self, X):
        factors = _as_factors(X)
        if factors is not None:
            L, R = factors
            if L.shape[0] != self.n or R.shape[0] != self.n:
                raise ValueError("operand shape mismatch")
            return np.einsum("ij,ij->i", self.A @ L, self.A @ R)
        Z = np.asarray(X, dtype=float)
        if Z.shape != self.shape:
            raise ValueError("operand shape mismatch")
        return np.einsum("ij,ij->i", self.A @ Z, self.A)

    def adjoint(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.m,):
            raise ValueError("measurement length mismatch")
        return GradientRep("lowrank", A=self.A, coeffs=p.copy(),
                           cache_dense=self.n <= PHASE_CACHE_MAX_N)


def make_completion(n1, n2, m, rng_seed):
    """Sample m distinct entry positions uniformly at random."""
    if m < 1:
        raise ValueError("need at least one measurement")
    if m > n1 * n2:
        raise ValueError("more samples than matrix entries")
    rng = np.random.default_rng(rng_seed)
    flat = rng.choice(n1 * n2, size=m, replace=False)
    return CompletionOperator(n1, n2, flat // n2, flat % n2)


def make_gaussian(n1, n2, m, rng_seed):
    """m sensing matrices with i.i.d. standard normal entries."""
    if m < 1:
        raise ValueError("need at least one measurement")
    nbytes = 8 * m * n1 * n2
    if nbytes > GAUSSIAN_STORAGE_CAP:
        raise ValueError(f"dense sensing stack would need {nbytes} bytes")
    rng = np.random.default_rng(rng_seed)
    return GaussianOperator(rng.standard_normal((m, n1 * n2)), n1, n2)


def make_phase_retrieval(n, m, rng_seed):
    """m real sensing vectors of length n with i.i.d. standard normal entries."""
    if m < 1:
        raise ValueError("need at least one measurement")
    rng = np.random.default_rng(rng_seed)
    return PhaseRetrievalOperator(rng.standard_normal((m, n)))


def write_triples(path, rows, cols, vals):
    """Write "row col value" triples, 0-based, one per line."""
    with open(path, "w") as fh:
        for i, j, v in zip(rows, cols, vals):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def read_triples(path):
    """Read "row col value" triples written by :func:`write_triples`.

    Returns (rows, cols, vals) as arrays; indices are 0-based and validated
    to be nonnegative integers.  Malformed lines report their line number.
    """
    rows, cols, vals = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'row col value'")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            if i < 0 or j < 0:
                raise ValueError(f"line {lineno}: negative index")
            rows.append(i)
            cols.append(j)
            vals.append(v)
    return (np.asarray(rows, dtype=np.int64),
            np.asarray(cols, dtype=np.int64),
            np.asarray(vals, dtype=float))
