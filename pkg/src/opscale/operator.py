"""Operators (tuples of Kraus matrices) and the instantaneous quantities of the
scaling dynamics: size, the two completely positive maps, error matrices,
l2-error, matrix / Choi representations, the gradient direction and the
rate decomposition of d(Delta)/dt.

Conventions
-----------
* Real matrices only; A* is A.T.
* vec is row-major (C order), so vec(E_ij) = e_i (x) e_j and
  vec(A Y B^T) = (A (x) B) vec(Y) with numpy's ``np.kron``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DENSE_BUDGET = 10**8  # max entries of a materialised M_A / Q_A


class BudgetError(ValueError):
    """Dense representation would exceed the size budget."""


@dataclass(frozen=True, eq=False)
class Operator:
    """k real m x n matrices, stored as a read-only (k, m, n) array."""

    matrices: np.ndarray

    def __post_init__(self):
        A = np.array(self.matrices, dtype=float, order="C")  # always a private copy
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or min(A.shape) < 1:
            raise ValueError(f"expected a (k, m, n) stack of matrices, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("operator has non-finite entries")
        if not np.any(A):
            raise ValueError("identically zero operator")
        A.flags.writeable = False
        object.__setattr__(self, "matrices", A)

    @property
    def k(self) -> int:
        return self.matrices.shape[0]

    @property
    def m(self) -> int:
        return self.matrices.shape[1]

    @property
    def n(self) -> int:
        return self.matrices.shape[2]

    @property
    def shape(self):
        return self.matrices.shape

    def transpose(self) -> "Operator":
        return Operator(np.transpose(self.matrices, (0, 2, 1)))

    def scaled(self, L: np.ndarray, R: np.ndarray) -> "Operator":
        """The operator (L A_i R)_i."""
        return Operator(L @ self.matrices @ R)

    def to_dict(self) -> dict:
        return {"type": "operator", "m": self.m, "n": self.n, "k": self.k,
                "matrices": self.matrices.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Operator":
        A = np.asarray(d["matrices"], dtype=float)
        op = cls(A)
        if (op.k, op.m, op.n) != (int(d["k"]), int(d["m"]), int(d["n"])):
            raise ValueError("declared (k, m, n) does not match matrices")
        return op


@dataclass(frozen=True)
class ErrorPair:
    E: np.ndarray
    F: np.ndarray


@dataclass(frozen=True)
class BalanceReport:
    s: float
    epsilon: float
    delta_total: float
    delta_E: float
    delta_F: float


def normalize_orientation(op: Operator) -> tuple[Operator, bool]:
    """Transpose so that m <= n. Returns (operator, flipped).

    Scaling (L, R) of the transposed operator corresponds to (R.T, L.T) of the
    original one.
    """
    if op.m <= op.n:
        return op, False
    return op.transpose(), True


def size(op: Operator) -> float:
    return float(np.sum(op.matrices ** 2))


def apply_phi(op: Operator, Y: np.ndarray) -> np.ndarray:
    """Phi(Y) = sum_i A_i Y A_i^T."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (op.n, op.n):
        raise ValueError(f"Y must be {op.n}x{op.n}, got {Y.shape}")
    A = op.matrices
    return np.tensordot(A @ Y, A, axes=([0, 2], [0, 2]))


def apply_phi_adjoint(op: Operator, X: np.ndarray) -> np.ndarray:
    """Phi*(X) = sum_i A_i^T X A_i."""
    X = np.asarray(X, dtype=float)
    if X.shape != (op.m, op.m):
        raise ValueError(f"X must be {op.m}x{op.m}, got {X.shape}")
    A = op.matrices
    return np.tensordot(A, X @ A, axes=([0, 1], [0, 1]))


def phi_identity(op: Operator) -> tuple[np.ndarray, np.ndarray]:
    """(Phi(I_n), Phi*(I_m)) without forming identities."""
    A = op.matrices
    row = np.tensordot(A, A, axes=([0, 2], [0, 2]))
    col = np.tensordot(A, A, axes=([0, 1], [0, 1]))
    return row, col


def _errors(op: Operator, s: float | None = None):
    row, col = phi_identity(op)
    if s is None:
        s = float(np.trace(row))
    E = s * np.eye(op.m) - op.m * row
    F = s * np.eye(op.n) - op.n * col
    # symmetrise away round-off
    return 0.5 * (E + E.T), 0.5 * (F + F.T), row, col, s


def error_matrices(op: Operator) -> ErrorPair:
    E, F, *_ = _errors(op, size(op))
    return ErrorPair(E, F)


def epsilon_from_marginals(row: np.ndarray, col: np.ndarray, s: float) -> float:
    """Smallest eps with (1-eps)(s/m)I <= row <= (1+eps)(s/m)I and likewise for col."""
    m, n = row.shape[0], col.shape[0]
    er = np.linalg.eigvalsh(0.5 * (row + row.T))
    ec = np.linalg.eigvalsh(0.5 * (col + col.T))
    eps = max(1 - m * er[0] / s, m * er[-1] / s - 1,
              1 - n * ec[0] / s, n * ec[-1] / s - 1)
    return max(float(eps), 0.0)


def balance_report(op: Operator) -> BalanceReport:
    s = size(op)
    E, F, row, col, _ = _errors(op, s)
    dE = float(np.sum(E * E)) / op.m
    dF = float(np.sum(F * F)) / op.n
    return BalanceReport(s, epsilon_from_marginals(row, col, s), dE + dF, dE, dF)


def delta(op: Operator) -> float:
    E, F, *_ = _errors(op, size(op))
    return float(np.sum(E * E)) / op.m + float(np.sum(F * F)) / op.n


def _check_budget(entries: int):
    if entries > DENSE_BUDGET:
        raise BudgetError(f"dense form needs {entries} entries > budget {DENSE_BUDGET}")


def matrix_representation(op: Operator) -> np.ndarray:
    """M_A = sum_i A_i (x) A_i, so that M_A vec(Y) = vec(Phi(Y))."""
    k, m, n = op.shape
    _check_budget(m * m * n * n)
    A = op.matrices
    M = np.einsum("kab,kcd->acbd", A, A)
    return M.reshape(m * m, n * n)


def choi_matrix(op: Operator) -> np.ndarray:
    """Q_A = sum_ij Phi(E_ij) (x) E_ij = sum_k vec(A_k) vec(A_k)^T."""
    k, m, n = op.shape
    _check_budget((m * n) ** 2)
    V = op.matrices.reshape(k, m * n)
    return V.T @ V


def partial_traces(Q: np.ndarray, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """(tr_n Q, tr_m Q) for Q acting on R^m (x) R^n."""
    Q4 = Q.reshape(m, n, m, n)
    return np.einsum("aici->ac", Q4), np.einsum("aiaj->ij", Q4)


def gradient_direction(op: Operator) -> np.ndarray:
    """H_i = E A_i + A_i F, as a (k, m, n) array."""
    E, F, *_ = _errors(op, size(op))
    A = op.matrices
    return E @ A + A @ F


def delta_rate_decomposition(op: Operator) -> tuple[float, float, float]:
    """(<E^2, Phi(I)>, <F^2, Phi*(I)>, 2<E, Phi(F)>); they sum to -(1/4) dDelta/dt."""
    E, F, row, col, _ = _errors(op, size(op))
    quad_E = float(np.sum((E @ E) * row))
    quad_F = float(np.sum((F @ F) * col))
    cross = 2.0 * float(np.sum(E * apply_phi(op, F)))
    return quad_E, quad_F, cross
