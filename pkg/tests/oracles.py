"""Independent reference implementations used as test oracles.

These deliberately avoid the code paths they check: the SVD oracle is a
one-sided Jacobi rotation scheme, the line-search oracle is golden-section
search, and dense projector/step formulas are written out longhand.
"""

import numpy as np


def jacobi_svd_values(M, sweeps=60, tol=1e-14):
    """Singular values of M via one-sided Jacobi rotations (descending)."""
    A = np.array(M, dtype=float, copy=True)
    n = A.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = A[:, p] @ A[:, p]
                aqq = A[:, q] @ A[:, q]
                apq = A[:, p] @ A[:, q]
                off = max(off, abs(apq) / max(np.sqrt(app * aqq), 1e-300))
                if apq == 0.0:
                    continue
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                Ap = c * A[:, p] - s * A[:, q]
                A[:, q] = s * A[:, p] + c * A[:, q]
                A[:, p] = Ap
        if off < tol:
            break
    vals = np.sqrt((A * A).sum(axis=0))
    return np.sort(vals)[::-1]


def golden_section_min(f, lo, hi, tol=1e-12, iters=200):
    """Argmin of a unimodal scalar function on [lo, hi]."""
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if abs(b - a) < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def dense_canonical_project(U, V, Z):
    """Euclidean tangent projection written out longhand."""
    return U @ (U.T @ Z) + (Z @ V) @ V.T - U @ (U.T @ Z @ V) @ V.T


def dense_weighted_project(U, V, lq, rq, Z):
    """Weighted tangent projection evaluated fully dense from its definition."""
    def inv_sqrt(S):
        w, Q = np.linalg.eigh(S)
        return (Q / np.sqrt(w)) @ Q.T

    Ut = U @ inv_sqrt(U.T @ (lq[:, None] * U))
    Vt = V @ inv_sqrt(V.T @ (rq[:, None] * V))
    LZ = lq[:, None] * Z
    ZR = Z * rq[None, :]
    return (Ut @ (Ut.T @ LZ) + (ZR @ Vt) @ Vt.T
            - Ut @ (Ut.T @ (lq[:, None] * ZR) @ Vt) @ Vt.T)
