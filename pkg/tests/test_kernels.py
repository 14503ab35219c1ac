import numpy as np
import pytest

from lowrank.kernels import (CompactSVD, FactoredRank2r, compact_svd,
                             hard_threshold, tall_qr, truncate_tangent,
                             vee_norm)
from oracles import jacobi_svd_values


def test_compact_svd_diagonal():
    X = compact_svd(np.diag([3.0, 2.0, 1.0]), 3)
    np.testing.assert_allclose(X.S, [3, 2, 1])
    np.testing.assert_allclose(X.U, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(X.V, np.eye(3), atol=1e-14)


def test_compact_svd_zero_matrix():
    X = compact_svd(np.zeros((4, 4)), 2)
    np.testing.assert_allclose(X.S, [0, 0])
    # orthonormal bases even for the zero matrix
    np.testing.assert_allclose(X.U.T @ X.U, np.eye(2), atol=1e-14)


def test_compact_svd_empty_and_bad_rank():
    with pytest.raises(ValueError, match="empty matrix"):
        compact_svd(np.zeros((0, 3)), 1)
    with pytest.raises(ValueError):
        compact_svd(np.eye(3), 4)
    with pytest.raises(ValueError):
        compact_svd(np.eye(3), 0)


def test_compact_svd_full_rank_reconstruction_vs_jacobi_oracle():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((8, 6))
    X = compact_svd(M, 6)
    assert np.linalg.norm(M - X.dense()) <= 1e-10 * np.linalg.norm(M)
    # singular values agree with an independent one-sided Jacobi computation
    np.testing.assert_allclose(X.S, jacobi_svd_values(M), rtol=1e-10)


def test_compact_svd_orthonormal_factor_invariants():
    rng = np.random.default_rng(1)
    for n1, n2, r in [(10, 7, 3), (5, 12, 4), (20, 20, 8)]:
        X = compact_svd(rng.standard_normal((n1, n2)), r)
        assert np.linalg.norm(X.U.T @ X.U - np.eye(r), 2) <= 1e-10
        assert np.linalg.norm(X.V.T @ X.V - np.eye(r), 2) <= 1e-10
        assert (np.diff(X.S) <= 1e-12).all() and (X.S >= 0).all()


def test_compact_svd_sign_convention_determinism():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((9, 9))
    X1 = compact_svd(M, 4)
    X2 = compact_svd(M.copy(), 4)
    np.testing.assert_array_equal(X1.U, X2.U)
    # largest-magnitude entry of each left vector is positive
    idx = np.abs(X1.U).argmax(axis=0)
    assert (X1.U[idx, np.arange(4)] > 0).all()


def test_hard_threshold_drops_smallest():
    H = hard_threshold(np.diag([3.0, 2.0, 1.0]), 2)
    np.testing.assert_allclose(H.dense(), np.diag([3.0, 2.0, 0.0]), atol=1e-14)


def test_hard_threshold_rank_deficient():
    u = np.array([2.0, 0, 0, 1.0])
    v = np.array([0.0, 3.0, 4.0])
    H = hard_threshold(np.outer(u, v), 3)
    np.testing.assert_allclose(H.S[0], np.linalg.norm(u) * np.linalg.norm(v))
    assert np.abs(H.S[1:]).max() <= 1e-12 * H.S[0]


def test_hard_threshold_randomized_optimality_oracle():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((10, 10))
    best = np.linalg.norm(M - hard_threshold(M, 3).dense())
    for _ in range(1000):
        B = rng.standard_normal((10, 3)) @ rng.standard_normal((3, 10))
        assert best <= np.linalg.norm(M - B) + 1e-12


def test_hard_threshold_idempotent():
    rng = np.random.default_rng(4)
    M = rng.standard_normal((12, 8))
    H1 = hard_threshold(M, 3)
    H2 = hard_threshold(H1.dense(), 3)
    assert np.linalg.norm(H1.dense() - H2.dense()) <= 1e-12 * np.linalg.norm(H1.dense())


def test_truncate_tangent_rank_one():
    e1a = np.zeros((6, 1)); e1a[0] = 1.0
    e1b = np.zeros((5, 1)); e1b[0] = 1.0
    W = FactoredRank2r(e1a, e1b)
    T = truncate_tangent(W, 1)
    np.testing.assert_allclose(T.dense(), W.dense(), atol=1e-14)


def test_truncate_tangent_no_truncation_needed():
    rng = np.random.default_rng(5)
    W = FactoredRank2r(rng.standard_normal((20, 4)), rng.standard_normal((15, 4)))
    T = truncate_tangent(W, 6)
    np.testing.assert_allclose(T.dense(), W.dense(), atol=1e-10)
    assert T.rank == 4  # only as many directions as the factors carry


def test_truncate_tangent_matches_dense_oracle():
    rng = np.random.default_rng(6)
    W = FactoredRank2r(rng.standard_normal((50, 6)), rng.standard_normal((40, 6)))
    T = truncate_tangent(W, 3)
    H = hard_threshold(W.dense(), 3)
    assert np.linalg.norm(T.dense() - H.dense()) <= 1e-10 * np.linalg.norm(W.dense())


def test_truncate_tangent_property_sweep():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n1, n2 = rng.integers(5, 100, size=2)
        r = int(rng.integers(1, 5))
        k = int(rng.integers(1, 2 * r + 1))
        k = min(k, n1, n2)
        W = FactoredRank2r(rng.standard_normal((n1, k)),
                           rng.standard_normal((n2, k)))
        dn = W.dense()
        T = truncate_tangent(W, r)
        H = hard_threshold(dn, r)
        assert np.linalg.norm(T.dense() - H.dense()) <= 1e-9 * np.linalg.norm(dn)


def test_tall_qr_orthonormal_input():
    Q0 = np.linalg.qr(np.random.default_rng(8).standard_normal((30, 4)))[0]
    Q, R = tall_qr(Q0)
    np.testing.assert_allclose(np.abs(np.diag(R)), np.ones(4), atol=1e-12)
    np.testing.assert_allclose(Q * np.sign(np.diag(R)), Q0, atol=1e-12)


def test_tall_qr_rank_deficient():
    e1 = np.zeros((7, 1)); e1[0] = 1.0
    M = np.hstack([e1, e1])
    _, R = tall_qr(M)
    assert abs(R[1, 1]) <= 1e-14


def test_tall_qr_reconstruction():
    rng = np.random.default_rng(9)
    M = rng.standard_normal((100, 5))
    Q, R = tall_qr(M)
    assert np.linalg.norm(M - Q @ R) <= 1e-12 * np.linalg.norm(M)
    assert np.linalg.norm(Q.T @ Q - np.eye(5), 2) <= 1e-12


def test_vee_norm_examples():
    assert vee_norm(np.array([[3.0, 0.0], [4.0, 0.0]])) == pytest.approx(5.0)
    assert vee_norm(np.zeros((4, 6))) == 0.0
    assert vee_norm(np.eye(7)) == pytest.approx(1.0)


def test_vee_norm_bounds():
    rng = np.random.default_rng(10)
    for _ in range(50):
        M = rng.standard_normal((rng.integers(1, 20), rng.integers(1, 20)))
        v = vee_norm(M)
        assert v <= np.linalg.norm(M) + 1e-12
        assert v >= np.abs(M).max() - 1e-12


def test_compact_svd_dist_and_inner():
    rng = np.random.default_rng(11)
    A = compact_svd(rng.standard_normal((15, 12)), 4)
    B = compact_svd(rng.standard_normal((15, 12)), 4)
    assert A.dist_fro(B) == pytest.approx(
        np.linalg.norm(A.dense() - B.dense()), rel=1e-10)
    assert A.inner(B) == pytest.approx(np.sum(A.dense() * B.dense()), rel=1e-10)
    assert A.norm_fro() == pytest.approx(np.linalg.norm(A.dense()), rel=1e-12)
