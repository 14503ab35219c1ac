import numpy as np
import pytest

from lowrank.kernels import compact_svd, vee_norm
from lowrank.metric import (Preconditioner, build_preconditioner,
                            canonical_project, choose_epsilon,
                            precondition_direction, shampoo_direction,
                            shampoo_init, shampoo_quarter_roots,
                            shampoo_update, unit_preconditioner,
                            weighted_basis, weighted_inner, weighted_norm,
                            weighted_orthonormalize, weighted_project)
from lowrank.operators import GradientRep, make_completion
from oracles import dense_canonical_project, dense_weighted_project


def _dense_grad(M):
    return GradientRep("dense", dense=M)


def test_build_preconditioner_hand_arithmetic():
    G = _dense_grad(np.array([[1.0, 2.0], [0.0, 2.0]]))
    P = build_preconditioner(G, 1e-300)
    np.testing.assert_allclose(P.ldiag, [5.0, 4.0])
    np.testing.assert_allclose(P.rdiag, [1.0, 8.0])


def test_build_preconditioner_zero_gradient():
    P = build_preconditioner(_dense_grad(np.zeros((3, 4))), 1.0)
    np.testing.assert_allclose(P.ldiag, np.ones(3))
    np.testing.assert_allclose(P.rdiag, np.ones(4))
    with pytest.raises(ValueError):
        build_preconditioner(_dense_grad(np.zeros((3, 4))), 0.0)


def test_build_preconditioner_sparse_matches_dense():
    rng = np.random.default_rng(0)
    op = make_completion(12, 9, 40, 3)
    vals = rng.standard_normal(40)
    G = op.adjoint(vals)
    P = build_preconditioner(G, 0.5)
    Pd = build_preconditioner(_dense_grad(G.materialize()), 0.5)
    np.testing.assert_allclose(P.ldiag, Pd.ldiag, atol=1e-12)
    np.testing.assert_allclose(P.rdiag, Pd.rdiag, atol=1e-12)


def test_choose_epsilon():
    G = _dense_grad(np.array([[3.0, 0.0], [4.0, 0.0]]))  # vee = 5
    assert choose_epsilon(G) == pytest.approx(25.0)
    # with this choice the norm-equivalence ratio is sqrt(2)
    eps = choose_epsilon(G)
    mu = np.sqrt(eps + vee_norm(G.materialize()) ** 2)
    nu = np.sqrt(eps)
    assert mu / nu == pytest.approx(np.sqrt(2.0))
    assert choose_epsilon(_dense_grad(np.zeros((2, 2)))) == 1e-30


def test_weighted_orthonormalize_unit_and_scalar():
    rng = np.random.default_rng(1)
    U = np.linalg.qr(rng.standard_normal((10, 3)))[0]
    Ut, N = weighted_orthonormalize(U, np.ones(10))
    np.testing.assert_allclose(Ut, U, atol=1e-12)
    w = 2.7
    Ut1, _ = weighted_orthonormalize(np.ones((1, 1)), np.array([w ** 0.25]))
    assert Ut1[0, 0] == pytest.approx(w ** -0.125)


def test_weighted_orthonormalize_gram_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n, r = int(rng.integers(4, 30)), int(rng.integers(1, 4))
        U = np.linalg.qr(rng.standard_normal((n, r)))[0]
        q = 10.0 ** rng.uniform(-2, 2, n)
        Ut, N = weighted_orthonormalize(U, q)
        gram = Ut.T @ (q[:, None] * Ut)
        assert np.abs(gram - np.eye(r)).max() <= 1e-10
        # span preserved: Ut = U N with invertible N
        assert np.linalg.norm(U @ (U.T @ Ut) - Ut) <= 1e-10


def test_weighted_orthonormalize_degenerate():
    U = np.zeros((5, 2)); U[:, 0] = U[:, 1] = 1.0 / np.sqrt(5)
    with pytest.raises(ValueError, match="degenerate weighted Gram"):
        weighted_orthonormalize(U, np.ones(5))


def _random_setup(rng, n1=30, n2=24, r=3, spread=2.0):
    X = compact_svd(rng.standard_normal((n1, n2)), r)
    P = Preconditioner(10.0 ** rng.uniform(-spread, spread, n1),
                       10.0 ** rng.uniform(-spread, spread, n2), 1e-4)
    return X, P, weighted_basis(X, P)


def test_weighted_project_idempotent_and_tangent_fixed():
    rng = np.random.default_rng(3)
    X, P, basis = _random_setup(rng)
    Z = rng.standard_normal(X.shape)
    T = weighted_project(basis, Z)
    T2 = weighted_project(basis, T.dense())
    assert np.abs(T2.dense() - T.dense()).max() <= 1e-10 * max(1, np.abs(T.dense()).max())


def test_weighted_project_unit_weights_is_canonical():
    rng = np.random.default_rng(4)
    X = compact_svd(rng.standard_normal((15, 11)), 3)
    P = unit_preconditioner(15, 11)
    Z = rng.standard_normal((15, 11))
    W = weighted_project(weighted_basis(X, P), Z).dense()
    C = dense_canonical_project(X.U, X.V, Z)
    assert np.abs(W - C).max() <= 1e-12 * np.abs(C).max()
    C2 = canonical_project(X, Z).dense()
    assert np.abs(C2 - C).max() <= 1e-12 * np.abs(C).max()


def test_weighted_project_orthogonality_oracle():
    rng = np.random.default_rng(5)
    X, P, basis = _random_setup(rng, spread=1.5)
    Z = rng.standard_normal(X.shape)
    res = Z - weighted_project(basis, Z).dense()
    zn = weighted_norm(P, Z)
    for _ in range(200):
        Q = rng.standard_normal((X.shape[1], X.rank))
        Pm = rng.standard_normal((X.shape[0], X.rank))
        tang = X.U @ Q.T + Pm @ X.V.T
        ip = weighted_inner(P, res, tang)
        assert abs(ip) <= 1e-9 * zn * weighted_norm(P, tang)


def test_weighted_project_matches_dense_oracle():
    rng = np.random.default_rng(6)
    X, P, basis = _random_setup(rng)
    Z = rng.standard_normal(X.shape)
    mine = weighted_project(basis, Z).dense()
    ref = dense_weighted_project(X.U, X.V, P.lq, P.rq, Z)
    assert np.abs(mine - ref).max() <= 1e-9 * np.abs(ref).max()


def test_weighted_project_self_adjoint():
    rng = np.random.default_rng(7)
    X, P, basis = _random_setup(rng)
    for _ in range(20):
        Z = rng.standard_normal(X.shape)
        Y = rng.standard_normal(X.shape)
        lhs = weighted_inner(P, weighted_project(basis, Z).dense(), Y)
        rhs = weighted_inner(P, Z, weighted_project(basis, Y).dense())
        assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs), 1.0)


def test_weighted_project_structured_inputs_match_dense():
    rng = np.random.default_rng(8)
    op = make_completion(30, 24, 100, 9)
    G = op.adjoint(rng.standard_normal(100))
    X, P, basis = _random_setup(rng)
    a = weighted_project(basis, G).dense()
    b = weighted_project(basis, G.materialize()).dense()
    assert np.abs(a - b).max() <= 1e-11 * max(1.0, np.abs(b).max())


def test_precondition_direction():
    P = unit_preconditioner(3, 3)
    G = np.eye(3)
    np.testing.assert_allclose(precondition_direction(P, G), G)
    P2 = Preconditioner(np.array([16.0, 16.0]), np.array([16.0, 16.0]), 1.0)
    D = precondition_direction(P2, np.diag([2.0, 2.0]))
    np.testing.assert_allclose(D, np.eye(2) * 0.5)
    rng = np.random.default_rng(9)
    Pr = Preconditioner(10.0 ** rng.uniform(-2, 2, 7),
                        10.0 ** rng.uniform(-2, 2, 5), 1e-3)
    G = rng.standard_normal((7, 5))
    ref = G / (Pr.ldiag[:, None] ** 0.25 * Pr.rdiag[None, :] ** 0.25)
    np.testing.assert_allclose(precondition_direction(Pr, G), ref, atol=1e-12)


def test_precondition_direction_sparse_stays_sparse():
    rng = np.random.default_rng(10)
    op = make_completion(9, 8, 20, 11)
    G = op.adjoint(rng.standard_normal(20))
    P = build_preconditioner(G, 0.1)
    D = precondition_direction(P, G)
    assert D.kind == "sparse"
    ref = precondition_direction(P, G.materialize())
    np.testing.assert_allclose(D.materialize(), ref, atol=1e-12)


def test_weighted_norm_unit_weights_is_frobenius():
    rng = np.random.default_rng(11)
    Z = rng.standard_normal((6, 9))
    Y = rng.standard_normal((6, 9))
    P = unit_preconditioner(6, 9)
    assert weighted_norm(P, Z) == pytest.approx(np.linalg.norm(Z), rel=1e-12)
    assert weighted_inner(P, Z, Y) == pytest.approx(np.sum(Z * Y), rel=1e-12)


def test_weighted_norm_single_entry():
    P = Preconditioner(np.array([2.0, 5.0]), np.array([3.0, 7.0]), 1.0)
    Z = np.zeros((2, 2)); Z[1, 0] = 1.0
    assert weighted_norm(P, Z) ** 2 == pytest.approx((5.0 * 3.0) ** 0.25)


def test_norm_equivalence_sandwich():
    # nu ||Z||_F^2 <= ||Z||_W^2 <= mu ||Z||_F^2 over 1000 random triples
    rng = np.random.default_rng(12)
    for _ in range(1000):
        n1, n2 = int(rng.integers(2, 12)), int(rng.integers(2, 12))
        G = rng.standard_normal((n1, n2)) * 10.0 ** rng.uniform(-2, 2)
        eps = 10.0 ** rng.uniform(-6, 2)
        Z = rng.standard_normal((n1, n2))
        P = build_preconditioner(_dense_grad(G), eps)
        nu = np.sqrt(eps)
        mu = np.sqrt(eps + vee_norm(G) ** 2)
        w2 = weighted_norm(P, Z) ** 2
        f2 = np.linalg.norm(Z) ** 2
        assert nu * f2 - 1e-12 <= w2 <= mu * f2 + 1e-12


def test_metric_gradient_consistency():
    # <W^{-1}G, Y>_W equals <G, Y> for any Y
    rng = np.random.default_rng(13)
    G = rng.standard_normal((8, 6))
    P = build_preconditioner(_dense_grad(G), 0.3)
    D = precondition_direction(P, G)
    for _ in range(25):
        Y = rng.standard_normal((8, 6))
        assert weighted_inner(P, D, Y) == pytest.approx(np.sum(G * Y), rel=1e-9)


def test_shampoo_first_update_from_zero_state():
    G = np.array([[1.0, 2.0], [3.0, 4.0]])
    st = shampoo_update(shampoo_init(2, 2, 1.0), _dense_grad(G))
    np.testing.assert_allclose(st.Laccum, np.eye(2) + G @ G.T)
    np.testing.assert_allclose(st.Raccum, np.eye(2) + G.T @ G)


def test_shampoo_diagonal_case_matches_diagonal_preconditioner():
    # diagonal G: Kronecker-factored direction equals the diagonal one built
    # from the same accumulated norms
    G = np.diag([2.0, 0.5, 1.5])
    eps = 0.1
    st = shampoo_update(shampoo_init(3, 3, eps), _dense_grad(G))
    D = shampoo_direction(st, _dense_grad(G))
    P = Preconditioner(eps + np.diag(G) ** 2, eps + np.diag(G) ** 2, eps)
    ref = precondition_direction(P, G)
    np.testing.assert_allclose(D, ref, atol=1e-12)


def test_shampoo_inverse_quarter_root_oracle():
    rng = np.random.default_rng(14)
    G = rng.standard_normal((6, 5))
    st = shampoo_update(shampoo_init(6, 5, 1e-3), _dense_grad(G))
    Lq, Lqi, Rq, Rqi = shampoo_quarter_roots(st)
    I6 = np.linalg.matrix_power(Lqi, 4) @ st.Laccum
    I5 = np.linalg.matrix_power(Rqi, 4) @ st.Raccum
    assert np.abs(I6 - np.eye(6)).max() <= 1e-8
    assert np.abs(I5 - np.eye(5)).max() <= 1e-8
    assert np.abs(Lq @ Lqi - np.eye(6)).max() <= 1e-8


def test_shampoo_rejects_non_psd():
    st = shampoo_init(3, 3, 1.0)
    bad = st.__class__(np.diag([1.0, -1.0, 1.0]), np.eye(3), 1.0)
    with pytest.raises(ValueError, match="not positive semidefinite"):
        shampoo_quarter_roots(bad)
