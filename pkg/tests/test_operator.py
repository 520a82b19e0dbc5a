import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opscale.operator import (Operator, apply_phi, apply_phi_adjoint, balance_report, choi_matrix,
                              delta, delta_rate_decomposition, error_matrices, gradient_direction,
                              matrix_representation, partial_traces, phi_identity, size)
from opscale.reductions import matrix_to_operator
from opscale.spectral import certify_operator


def rand_op(rng, k=None, m=None, n=None):
    k = k or int(rng.integers(1, 6))
    m = m or int(rng.integers(1, 7))
    n = n or int(rng.integers(1, 7))
    return Operator(rng.standard_normal((k, m, n)))


ops = st.builds(lambda seed: rand_op(np.random.default_rng(seed)), st.integers(0, 2**32 - 1))


def balanced_op(d=3):
    # A_i = orthonormal basis of matrices: Phi(I) = I * d / d, doubly balanced
    A = np.zeros((d * d, d, d))
    for i in range(d):
        for j in range(d):
            A[i * d + j, i, j] = 1.0
    return Operator(A)


# --------------------------------------------------------------- basics

def test_operator_is_immutable_copy():
    a = np.ones((1, 2, 2))
    op = Operator(a)
    a[0, 0, 0] = 5
    assert op.matrices[0, 0, 0] == 1
    with pytest.raises(ValueError):
        op.matrices[0, 0, 0] = 2


@pytest.mark.parametrize("bad", [np.zeros((1, 2, 2)), np.full((1, 2, 2), np.nan), np.ones(3)])
def test_operator_rejects(bad):
    with pytest.raises(ValueError):
        Operator(bad)


def test_size_examples():
    assert size(Operator((np.eye(2) / np.sqrt(2))[None])) == pytest.approx(1.0)
    assert size(matrix_to_operator(np.ones((2, 2)))) == pytest.approx(4.0)
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 4, 5))
    naive = sum(A[i, a, b] ** 2 for i in range(3) for a in range(4) for b in range(5))
    assert size(Operator(A)) == pytest.approx(naive, rel=1e-14)


def test_phi_matches_triple_loop():
    rng = np.random.default_rng(2)
    op = rand_op(rng, 3, 4, 5)
    Y = rng.standard_normal((5, 5))
    naive = sum(op.matrices[i] @ Y @ op.matrices[i].T for i in range(3))
    np.testing.assert_allclose(apply_phi(op, Y), naive, rtol=1e-12, atol=1e-12)
    assert not np.any(apply_phi(op, np.zeros((5, 5))))
    assert not np.any(apply_phi_adjoint(op, np.zeros((4, 4))))


def test_phi_identity_is_row_and_column_sums():
    B = np.random.default_rng(3).random((3, 4))
    row, col = phi_identity(matrix_to_operator(B))
    np.testing.assert_allclose(row, np.diag(B.sum(1)), atol=1e-14)
    np.testing.assert_allclose(col, np.diag(B.sum(0)), atol=1e-14)


@given(ops, st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_adjointness(op, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((op.m, op.m)), rng.standard_normal((op.n, op.n))
    lhs = np.sum(X * apply_phi(op, Y))
    rhs = np.sum(apply_phi_adjoint(op, X) * Y)
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(X) * np.linalg.norm(Y) * max(1, size(op))


@given(ops)
@settings(max_examples=50, deadline=None)
def test_phi_positive(op):
    # completely positive => positive: PSD in, PSD out
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((op.n, op.n))
    w = np.linalg.eigvalsh(apply_phi(op, Z @ Z.T))
    assert w[0] >= -1e-10 * max(1.0, abs(w[-1]))


# ------------------------------------------------------------ errors

def test_error_matrices_hand_example():
    op = matrix_to_operator(np.array([[2.0, 0.0], [0.0, 0.0]]))
    ef = error_matrices(op)
    np.testing.assert_allclose(ef.E, np.diag([-2.0, 2.0]))
    np.testing.assert_allclose(ef.F, np.diag([-2.0, 2.0]))
    br = balance_report(op)
    assert (br.delta_E, br.delta_F, br.delta_total) == pytest.approx((4.0, 4.0, 8.0))


def test_balanced_zero_errors():
    op = balanced_op()
    ef = error_matrices(op)
    assert np.allclose(ef.E, 0) and np.allclose(ef.F, 0)
    br = balance_report(op)
    assert br.epsilon == pytest.approx(0, abs=1e-14) and br.delta_total == pytest.approx(0, abs=1e-24)
    assert np.allclose(gradient_direction(op), 0)
    assert np.allclose(delta_rate_decomposition(op), 0)


@given(ops)
@settings(max_examples=100, deadline=None)
def test_errors_traceless_and_delta_bound(op):
    ef = error_matrices(op)
    s = size(op)
    assert abs(np.trace(ef.E)) <= 1e-10 * s * op.m
    assert abs(np.trace(ef.F)) <= 1e-10 * s * op.n
    br = balance_report(op)
    assert br.delta_total <= 2 * br.epsilon ** 2 * s ** 2 * (1 + 1e-10) + 1e-12 * s * s


def test_delta_bound_on_perturbed_balanced():
    rng = np.random.default_rng(4)
    base = balanced_op(4).matrices
    for _ in range(20):
        op = Operator(base + 0.05 * rng.standard_normal(base.shape))
        br = balance_report(op)
        assert br.delta_total <= 2 * br.epsilon ** 2 * br.s ** 2


# ------------------------------------------------- representations

def test_matrix_representation_matches_phi():
    rng = np.random.default_rng(5)
    for _ in range(10):
        op = rand_op(rng)
        Y = rng.standard_normal((op.n, op.n))
        v = matrix_representation(op) @ Y.ravel()
        assert np.linalg.norm(v - apply_phi(op, Y).ravel()) <= 1e-10 * np.linalg.norm(Y) * max(1, size(op))


def test_matrix_representation_examples():
    n = 3
    op = Operator((np.eye(n) / np.sqrt(n))[None])
    np.testing.assert_allclose(matrix_representation(op), np.eye(n * n) / n)
    B = np.random.default_rng(6).random((2, 3))
    M = matrix_representation(matrix_to_operator(B))
    m = 2
    sub = M[np.ix_([i * m + i for i in range(m)], [j * n + j for j in range(n)])]
    np.testing.assert_allclose(sub, B)
    M2 = M.copy()
    M2[np.ix_([i * m + i for i in range(m)], [j * n + j for j in range(n)])] = 0
    assert not np.any(M2)


def test_choi_matrix():
    A = np.zeros((1, 2, 3))
    A[0, 0, 0] = 1
    Q = choi_matrix(Operator(A))
    assert Q.sum() == 1 and Q[0, 0] == 1
    rng = np.random.default_rng(7)
    for _ in range(10):
        op = rand_op(rng)
        X, Y = rng.standard_normal((op.m, op.m)), rng.standard_normal((op.n, op.n))
        lhs = np.sum(choi_matrix(op) * np.kron(X, Y))
        rhs = np.sum(X * apply_phi(op, Y))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_choi_partial_traces_balanced():
    op = balanced_op(3)
    s = size(op)
    tn, tm = partial_traces(choi_matrix(op), 3, 3)
    np.testing.assert_allclose(tn, s / 3 * np.eye(3), atol=1e-14)
    np.testing.assert_allclose(tm, s / 3 * np.eye(3), atol=1e-14)


# --------------------------------------------------- gradient flow

@given(ops, st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_directional_derivative(op, seed):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal(op.shape)
    P /= np.linalg.norm(P)
    h = 1e-6
    analytic = -4 * np.sum(gradient_direction(op) * P)
    fd = (delta(Operator(op.matrices + h * P)) - delta(Operator(op.matrices - h * P))) / (2 * h)
    scale = max(abs(analytic), abs(fd), 1e-9 * (1 + size(op)) ** 2)
    assert abs(fd - analytic) / scale <= 1e-5


@given(ops)
@settings(max_examples=100, deadline=None)
def test_rate_decomposition_identity(op):
    qe, qf, cr = delta_rate_decomposition(op)
    H = gradient_direction(op)
    tot = float(np.sum(H * H))
    assert qe + qf + cr == pytest.approx(tot, rel=1e-8, abs=1e-12 * (1 + size(op)) ** 3)
    assert qe >= -1e-9 * (1 + size(op)) ** 3 and qf >= -1e-9 * (1 + size(op)) ** 3


def test_matrix_entry_update():
    # d/dt B_ij = 2((s - m r_i) + (s - n c_j)) B_ij, via a_ij = sqrt(B_ij)
    rng = np.random.default_rng(8)
    B = rng.random((3, 4))
    op = matrix_to_operator(B)
    H = gradient_direction(op)
    m, n = B.shape
    s = B.sum()
    expect = 2 * ((s - m * B.sum(1))[:, None] + (s - n * B.sum(0))[None, :]) * B
    # dA/dt = H, so d(a^2)/dt = 2 a H
    got = np.zeros_like(B)
    for i in range(op.k):
        idx = np.nonzero(op.matrices[i])
        got[idx] = 2 * op.matrices[i][idx] * H[i][idx]
    np.testing.assert_allclose(got, expect, rtol=1e-12)


def test_cross_term_bound():
    rng = np.random.default_rng(9)
    checked = 0
    for _ in range(200):
        B = rng.uniform(0.5, 1.5, (5, 5))
        op = matrix_to_operator(B)
        rep = certify_operator(op)
        if rep.lam <= 0:
            continue
        qe, qf, cr = delta_rate_decomposition(op)
        br = balance_report(op)
        assert abs(cr) <= (1 + 3 * rep.delta - rep.lam) * br.s * br.delta_total * (1 + 1e-9)
        checked += 1
    assert checked > 50
