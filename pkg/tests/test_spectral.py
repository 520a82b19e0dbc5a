import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opscale.operator import Operator, matrix_representation
from opscale.reductions import Frame, frame_to_operator, matrix_to_operator
from opscale.spectral import (LinearMap, certify_frame, certify_matrix, certify_operator,
                              cheeger_consistency, conductance, gram_top_eigenvalues,
                              squared_gram, top_two_singular_values)
from opscale import moments as mo


def test_top_two_examples():
    s1, s2 = top_two_singular_values(LinearMap.from_matrix(np.eye(5)))
    assert (s1, s2) == pytest.approx((1, 1))
    s1, s2 = top_two_singular_values(LinearMap.from_matrix(np.ones((5, 5)) / 5))
    assert s1 == pytest.approx(1) and s2 == pytest.approx(0, abs=1e-12)


def test_top_two_against_dense_svd():
    rng = np.random.default_rng(0)
    for _ in range(20):
        M = rng.standard_normal((10, 7))
        sv = np.linalg.svd(M, compute_uv=False)
        got = top_two_singular_values(LinearMap.from_matrix(M), rng=rng, dense_limit=0)
        np.testing.assert_allclose(got, sv[:2], rtol=1e-8)


def test_matrix_free_certificate_matches_dense():
    rng = np.random.default_rng(1)
    for _ in range(5):
        op = Operator(rng.standard_normal((3, 4, 5)))
        a = certify_operator(op)
        b = certify_operator(op, rng=np.random.default_rng(2), dense_limit=0)
        assert b.sigma1 == pytest.approx(a.sigma1, rel=1e-8)
        assert b.sigma2 == pytest.approx(a.sigma2, rel=1e-8)


def test_certify_operator_examples():
    n = 4
    rep = certify_operator(matrix_to_operator(np.ones((n, n)) / n))
    assert rep.lam == pytest.approx(1) and rep.delta == pytest.approx(0, abs=1e-12)
    rep = certify_operator(matrix_to_operator(np.eye(n)))
    assert rep.sigma2 == pytest.approx(rep.s / n) and rep.lam == pytest.approx(0, abs=1e-12)
    assert not rep.gap_condition_holds


def test_certify_matrix_examples():
    rep = certify_matrix(np.ones((2, 2)))
    assert rep.sigma1 == pytest.approx(2) and rep.s == 4 and rep.lam == pytest.approx(1)
    assert rep.gap_condition_holds
    assert certify_matrix(np.eye(3)).lam == pytest.approx(0, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_first_singular_value_bound(seed):
    # sigma1 <= (1 + eps) s / sqrt(mn), i.e. delta <= eps
    rng = np.random.default_rng(seed)
    op = Operator(rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(1, 5)),
                                       int(rng.integers(1, 5)))))
    rep = certify_operator(op)
    assert rep.delta <= rep.epsilon + 1e-9


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_matrix_reduction_consistency(seed):
    rng = np.random.default_rng(seed)
    B = rng.random((int(rng.integers(1, 7)), int(rng.integers(1, 7))))
    a, b = certify_matrix(B), certify_operator(matrix_to_operator(B))
    assert b.sigma1 == pytest.approx(a.sigma1, rel=1e-9)
    assert b.sigma2 == pytest.approx(a.sigma2, rel=1e-9, abs=1e-12 * a.sigma1)
    assert b.epsilon == pytest.approx(a.epsilon, abs=1e-12)


def test_squared_gram_examples():
    np.testing.assert_allclose(squared_gram(Frame(np.eye(3))), np.eye(3))
    np.testing.assert_allclose(squared_gram(Frame(np.array([[1.0, 1.0], [0.0, 0.0]]))), np.ones((2, 2)))
    G = squared_gram(Frame(np.random.default_rng(3).standard_normal((4, 9))))
    assert np.linalg.eigvalsh(G)[0] >= -1e-9


def test_gram_eigenvalues_small_side():
    # n > d^2 uses the d^2 x d^2 route; compare against the n x n Gram
    U = Frame(np.random.default_rng(4).standard_normal((3, 30)))
    w = np.sort(np.linalg.eigvalsh(squared_gram(U)))[::-1]
    assert gram_top_eigenvalues(U) == pytest.approx(tuple(w[:2]), rel=1e-10)


def test_certify_frame_examples():
    rep = certify_frame(Frame(np.eye(4)))
    assert rep.sigma2 ** 2 == pytest.approx(1) and rep.lam == pytest.approx(0, abs=1e-12)
    rng = np.random.default_rng(5)
    for _ in range(10):
        U = Frame(rng.standard_normal((int(rng.integers(2, 5)), int(rng.integers(2, 12)))))
        a, b = certify_frame(U), certify_operator(frame_to_operator(U))
        assert abs(a.lam - b.lam) <= 1e-8
        assert a.epsilon == pytest.approx(b.epsilon, abs=1e-12)


def test_random_frame_gap_d8_n256():
    rep = certify_frame(mo.random_unit_frame(256, 8, 0))
    assert rep.lam > 0.3


def test_conductance_examples():
    assert conductance(np.ones((2, 2))) == pytest.approx(0.5)
    assert conductance(np.array([[1.0, 0], [0, 1.0]])) == pytest.approx(0)
    assert conductance(np.array([[1.0]])) == pytest.approx(1)
    with pytest.raises(ValueError):
        conductance(np.ones((13, 12)))


def _conductance_naive(B):
    m, n = B.shape
    W = np.zeros((m + n, m + n))
    W[:m, m:], W[m:, :m] = B, B.T
    deg = W.sum(1)
    best = math.inf
    for mask in range(1, 1 << (m + n)):
        S = np.array([(mask >> v) & 1 for v in range(m + n)], dtype=bool)
        vol = deg[S].sum()
        if 0 < vol <= deg.sum() / 2:
            best = min(best, W[np.ix_(S, ~S)].sum() / vol)
    return best


def test_conductance_against_naive():
    rng = np.random.default_rng(6)
    for _ in range(5):
        B = mo.random_bipartite_matrix(3, 4, p=0.6, seed=rng)
        assert conductance(B) == pytest.approx(_conductance_naive(B), rel=1e-12)


def test_cheeger_examples():
    phi, ok = cheeger_consistency(np.ones((2, 2)))
    assert phi == pytest.approx(0.5) and ok
    phi, ok = cheeger_consistency(np.eye(2))
    assert phi == pytest.approx(0) and ok
    with pytest.raises(ValueError):
        cheeger_consistency(np.array([[10.0, 1.0], [1.0, 0.1]]))


def test_cheeger_random():
    from opscale.experiments import nearly_balanced_bipartite
    rng = np.random.default_rng(7)
    for _ in range(10):
        B = nearly_balanced_bipartite(rng, max_vertices=10)
        assert cheeger_consistency(B)[1]


def _orth(rng, k):
    return np.linalg.qr(rng.standard_normal((k, k)))[0]


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_spectral_quadratic_bound(seed):
    # sigma1^2 <= 1 + d1, sigma2^2 <= 1 - d2, p^T A q = 1 with unit p, q.  For unit
    # x _|_ p, y _|_ q: |alpha1 beta1| <= t = d1 / (d1 + d2), hence
    #   |x^T A y| <= sigma1 t + sigma2 (1 - t) <= sqrt(1 + d1) t + sqrt(1 - d2) (1 - t).
    # (1 + d1 - d2 is not a valid bound under squared hypotheses; see the test below.)
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(2, 7)), int(rng.integers(2, 7))
    d1, d2 = rng.uniform(0, 0.5), rng.uniform(0, 0.9)
    sv = np.sort(rng.uniform(0, math.sqrt(1 - d2), min(m, n)))[::-1]
    sv[0] = math.sqrt(1 + d1)
    A = _orth(rng, m)[:, :len(sv)] @ np.diag(sv) @ _orth(rng, n)[:, :len(sv)].T
    U, _, Vt = np.linalg.svd(A)
    # p close enough to u1 that ||A^T p|| >= 1, then tilt q until p^T A q = 1
    c = rng.uniform(math.sqrt(1 / (1 + d1)), 1.0)
    w = rng.standard_normal(m)
    w -= (w @ U[:, 0]) * U[:, 0]
    p = c * U[:, 0] + math.sqrt(1 - c * c) * w / np.linalg.norm(w)
    a = A.T @ p
    r = np.linalg.norm(a)
    if r < 1:
        return
    a /= r
    z = rng.standard_normal(n)
    z -= (z @ a) * a
    cos = 1 / r
    q = cos * a + math.sqrt(max(1 - cos * cos, 0)) * z / np.linalg.norm(z)
    assert p @ A @ q == pytest.approx(1, abs=1e-12)
    Pp, Pq = np.eye(m) - np.outer(p, p), np.eye(n) - np.outer(q, q)
    worst = np.linalg.svd(Pp @ A @ Pq, compute_uv=False)[0]
    tt = d1 / (d1 + d2)
    assert worst <= math.sqrt(1 + d1) * tt + math.sqrt(1 - d2) * (1 - tt) + 1e-10


def test_quadratic_bound_with_unsquared_constants_fails():
    # A = diag(1, sigma2), p = q = e1: hypotheses hold with d1 = 0, d2 = 1 - sigma2^2,
    # but x = y = e2 gives sigma2 = sqrt(1 - d2) > 1 - d2.
    s2 = 0.7
    A = np.diag([1.0, s2])
    d1, d2 = 0.0, 1 - s2 * s2
    x = y = np.array([0.0, 1.0])
    assert x @ A @ y > 1 + d1 - d2
    assert x @ A @ y <= math.sqrt(1 - d2) + 1e-15


def test_matrix_representation_sigma_equals_certificate():
    op = Operator(np.random.default_rng(9).standard_normal((2, 3, 3)))
    sv = np.linalg.svd(matrix_representation(op), compute_uv=False)
    rep = certify_operator(op)
    assert (rep.sigma1, rep.sigma2) == pytest.approx(tuple(sv[:2]), rel=1e-10)
