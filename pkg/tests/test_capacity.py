import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opscale import moments as mo
from opscale.capacity import (CertificationError, bl_constant_bounds, capacity_bounds,
                              matrix_capacity_direct, matrix_capacity_exact, matrix_log_capacity_exact,
                              permanent_bruteforce, permanent_lower_bound, permanent_naive)
from opscale.experiments import random_gapped_matrix
from opscale.reductions import BLDatum, bl_datum_to_operator, frame_to_operator, matrix_to_operator
from opscale.spectral import certify_frame, certify_matrix, certify_operator


# ------------------------------------------------------------ bounds

def test_bounds_balanced():
    op = matrix_to_operator(np.ones((3, 3)))
    cb = capacity_bounds(op, certify_operator(op))
    assert cb.lower == pytest.approx(9) and cb.upper == pytest.approx(9)


def test_bounds_without_gap_are_generic():
    B = np.eye(3) + 0.01
    op = matrix_to_operator(B)
    rep = certify_operator(op)
    assert rep.lam <= 0.05
    cb = capacity_bounds(op, certify_operator(matrix_to_operator(np.eye(3))))
    assert cb.method.startswith("generic") and 0 <= cb.lower <= cb.upper


def test_bounds_sandwich_exact():
    rng = np.random.default_rng(0)
    for _ in range(10):
        B, rep = random_gapped_matrix(int(rng.integers(3, 7)), rng)
        cb = capacity_bounds(matrix_to_operator(B), rep)
        exact = matrix_capacity_exact(B)
        assert cb.lower - 1e-6 <= exact <= cb.upper + 1e-6


def test_frame_capacity_lower_bound_d8_n256():
    for seed in range(5):
        U = mo.random_unit_frame(256, 8, seed)
        cb = capacity_bounds(frame_to_operator(U), certify_frame(U))
        assert cb.upper == pytest.approx(256)
        assert cb.lower >= (1 - 4 * 8 * math.log(8) / 256) * 256


def test_capacity_report_json():
    op = matrix_to_operator(np.ones((2, 2)))
    d = capacity_bounds(op, certify_operator(op)).to_dict()
    assert d["type"] == "capacity_report" and d["log_upper"] == pytest.approx(math.log(4))


# ------------------------------------------------------- exact value

def test_exact_capacity_examples():
    n = 5
    assert matrix_capacity_exact(np.ones((n, n)) / n) == pytest.approx(n, rel=1e-9)
    assert matrix_capacity_exact(np.eye(n)) == pytest.approx(n, rel=1e-9)
    assert matrix_capacity_direct(np.ones((n, n)) / n) == pytest.approx(n, rel=1e-9)
    assert matrix_capacity_direct(np.eye(n)) == pytest.approx(n, rel=1e-9)


def test_exact_vs_direct_4x4():
    rng = np.random.default_rng(1)
    for _ in range(10):
        B = rng.random((4, 4)) + 0.05
        assert matrix_capacity_exact(B) == pytest.approx(matrix_capacity_direct(B), rel=1e-4)


def test_direct_triangular_infimum():
    # [[1,1],[0,1]] has no exact scaling; the infimum 2 is approached but not attained
    B = np.array([[1.0, 1.0], [0.0, 1.0]])
    v = matrix_capacity_direct(B)
    assert v == pytest.approx(2, rel=1e-9) and v >= 2
    # and the objective really is > 2 at finite points
    for x1 in (1.0, 10.0, 1e3):
        x = np.array([x1, 1.0])
        assert 2 * math.sqrt(np.prod(B @ x)) / math.sqrt(np.prod(x)) > 2


def test_direct_rejects_zero_row():
    with pytest.raises(ValueError):
        matrix_capacity_direct(np.array([[1.0, 1.0], [0.0, 0.0]]))


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
@settings(max_examples=20, deadline=None)
def test_capacity_homogeneous(seed, c):
    B = np.random.default_rng(seed).random((4, 4)) + 0.1
    assert matrix_log_capacity_exact(c * B) == pytest.approx(matrix_log_capacity_exact(B) + math.log(c),
                                                             abs=1e-8)


# --------------------------------------------------------- permanent

def test_permanent_examples():
    assert permanent_bruteforce(np.eye(3)) == pytest.approx(1)
    assert permanent_bruteforce(np.ones((3, 3))) == pytest.approx(6)
    assert permanent_bruteforce(np.ones((3, 3)) / 3) == pytest.approx(6 / 27)
    assert permanent_naive(np.ones((3, 3)) / 3) == pytest.approx(6 / 27)
    with pytest.raises(ValueError):
        permanent_bruteforce(np.ones((13, 13)))


@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
@settings(max_examples=30, deadline=None)
def test_ryser_matches_naive(seed, n):
    B = np.random.default_rng(seed).standard_normal((n, n))
    assert permanent_bruteforce(B) == pytest.approx(permanent_naive(B), rel=1e-9, abs=1e-12)


def test_permanent_bound_doubly_stochastic():
    n = 4
    B = np.ones((n, n)) / n
    b = permanent_lower_bound(B, certify_matrix(B))
    assert b == pytest.approx(math.exp(-n))
    assert permanent_bruteforce(B) >= b


def test_permanent_bound_refuses_without_gap():
    with pytest.raises(CertificationError):
        permanent_lower_bound(np.eye(4), certify_matrix(np.eye(4)))
    with pytest.raises(ValueError):
        permanent_lower_bound(np.ones((3, 3)), certify_matrix(np.ones((3, 3))))  # s != n


def test_permanent_bound_nontrivial_near_balanced():
    rng = np.random.default_rng(2)
    nontrivial = 0
    for _ in range(20):
        n = 6
        B = np.ones((n, n)) + 0.1 * rng.random((n, n))
        B *= n / B.sum()
        b = permanent_lower_bound(B, certify_matrix(B))
        assert permanent_bruteforce(B) >= b
        nontrivial += b > 0
    assert nontrivial == 20


def test_permanent_bound_gaussian_n8():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 5:
        B = mo.random_gaussian_squared_matrix(8, rng)
        B *= 8 / B.sum()
        rep = certify_matrix(B)
        try:
            b = permanent_lower_bound(B, rep)
        except CertificationError:
            continue
        assert permanent_bruteforce(B) >= b
        checked += 1


# ---------------------------------------------------------------- BL

def test_bl_geometric_constant_is_one():
    d = BLDatum(3, tuple(np.eye(3)[i:i + 1] for i in range(3)), (1, 1, 1), 1)
    op_rep = certify_operator(bl_datum_to_operator(d))
    b = bl_constant_bounds(d, op_rep)
    assert b.lower == pytest.approx(1) and b.upper == pytest.approx(1)


def test_bl_rank_one_random_upper():
    dd, m = 4, 64
    U = mo.random_unit_vectors(m, dd, 4)
    datum = BLDatum(dd, tuple(U[:, j][None, :] for j in range(m)), (dd,) * m, m)
    rep = certify_operator(bl_datum_to_operator(datum))
    assert rep.lam > 0
    b = bl_constant_bounds(datum, rep)
    assert b.log_lower <= b.log_upper <= 8 * dd * math.log(dd)


def test_bl_log_space_no_overflow():
    # n = 200, s/n = 1e6: (s/n)^{-n/2} underflows in linear space but not in log space
    n = 200
    datum = BLDatum(n, (np.eye(n) * 1e3,), (1,), 1)
    rep = certify_operator(bl_datum_to_operator(datum), rng=np.random.default_rng(0))
    b = bl_constant_bounds(datum, rep)
    assert b.log_lower == pytest.approx(-100 * math.log(1e6))
    assert math.isfinite(b.log_upper)
