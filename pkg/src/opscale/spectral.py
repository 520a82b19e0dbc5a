"""Spectral-gap certificates.

An instance with size s has a lambda-spectral gap when the second singular
value of its natural representation satisfies sigma2 <= (1 - lambda) s / sqrt(mn).
Matrices and frames have cheap exact routes (sigma2(B), lambda2 of the squared
Gram matrix); general operators go through M_A, densely when small and through
its matvec form otherwise.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .operator import Operator, apply_phi, apply_phi_adjoint, balance_report, matrix_representation
from .reductions import Frame

DENSE_SVD_LIMIT = 4_000_000  # entries; above this certify_operator goes matrix-free


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class SpectralReport:
    sigma1: float
    sigma2: float
    s: float
    delta: float
    lam: float
    epsilon: float
    gap_condition_holds: bool
    C: float = 1.0
    m: int = 0
    n: int = 0

    @property
    def lambda_(self):
        return self.lam

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d.pop("m"), d.pop("n")
        return {"type": "spectral_report", **d}


@dataclass
class LinearMap:
    """Implicit linear map R^N -> R^M with its adjoint."""

    shape: tuple[int, int]
    matvec: Callable[[np.ndarray], np.ndarray]
    rmatvec: Callable[[np.ndarray], np.ndarray]
    dense: Callable[[], np.ndarray] | None = None

    @classmethod
    def from_matrix(cls, A):
        A = np.asarray(A, dtype=float)
        return cls(A.shape, lambda x: A @ x, lambda y: A.T @ y, lambda: A)


def _top2_iterative(op: LinearMap, rng, max_iters: int, tol: float, block: int):
    """Block power iteration on the Gram map with Rayleigh-Ritz.

    The leading Ritz pair is the deflated direction; the remaining block
    columns converge to the second pair in its orthogonal complement.
    """
    M, N = op.shape
    use_right = N <= M
    dim = N if use_right else M

    def gram(X):
        if use_right:
            return np.column_stack([op.rmatvec(op.matvec(x)) for x in X.T])
        return np.column_stack([op.matvec(op.rmatvec(x)) for x in X.T])

    p = min(block, dim)
    X, _ = np.linalg.qr(rng.standard_normal((dim, p)))
    prev = None
    for it in range(1, max_iters + 1):
        GX = gram(X)
        T = X.T @ GX
        w, S = np.linalg.eigh(0.5 * (T + T.T))
        order = np.argsort(w)[::-1]
        w, S = w[order], S[:, order]
        X = X @ S
        GX = GX @ S
        theta = np.maximum(w[:2], 0.0)
        scale = max(theta[0], np.finfo(float).tiny)
        res = np.linalg.norm(GX[:, :2] - X[:, :2] * w[:2], axis=0)
        if prev is not None:
            change = np.max(np.abs(theta - prev)) / scale
            if change < tol and np.all(res <= 1e-6 * scale):
                break
        prev = theta
        X, _ = np.linalg.qr(GX)
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iters} iterations", residual=res / scale)
    if p == 1:
        theta = np.array([theta[0], 0.0])
    return float(np.sqrt(theta[0])), float(np.sqrt(theta[1]))


def top_two_singular_values(op: LinearMap, rng=None, max_iters: int = 10_000,
                            tol: float = 1e-12, dense_limit: int = DENSE_SVD_LIMIT,
                            block: int = 4) -> tuple[float, float]:
    """Two largest singular values of an implicit map.

    Dense SVD is used when the map exposes a dense form with at most
    ``dense_limit`` entries; otherwise block power iteration.
    """
    M, N = op.shape
    if M < 1 or N < 1:
        raise ValueError("map dimensions must be positive")
    if op.dense is not None and M * N <= dense_limit:
        sv = np.linalg.svd(op.dense(), compute_uv=False)
        return float(sv[0]), float(sv[1]) if len(sv) > 1 else 0.0
    if rng is None:
        rng = np.random.default_rng(0)
    return _top2_iterative(op, rng, max_iters, tol, block)


def _log_m(m: int, n: int) -> float:
    return math.log(max(min(m, n), 2))


def gap_condition(lam: float, eps: float, m: int, n: int, C: float = 1.0) -> bool:
    return bool(lam > 0 and lam * lam >= C * eps * _log_m(m, n))


def _report(s1, s2, s, eps, m, n, C) -> SpectralReport:
    r = math.sqrt(m * n) / s
    delta = s1 * r - 1.0
    lam = 1.0 - s2 * r
    return SpectralReport(float(s1), float(s2), float(s), float(delta), float(lam), float(eps),
                          gap_condition(lam, eps, m, n, C), float(C), m, n)


def operator_linear_map(op: Operator) -> LinearMap:
    m, n = op.m, op.n
    fwd = lambda y: apply_phi(op, y.reshape(n, n)).ravel()
    adj = lambda x: apply_phi_adjoint(op, x.reshape(m, m)).ravel()
    return LinearMap((m * m, n * n), fwd, adj, lambda: matrix_representation(op))


def certify_operator(op: Operator, C: float = 1.0, rng=None,
                     dense_limit: int = DENSE_SVD_LIMIT) -> SpectralReport:
    if C <= 0:
        raise ValueError("C must be positive")
    br = balance_report(op)
    s1, s2 = top_two_singular_values(operator_linear_map(op), rng=rng, dense_limit=dense_limit)
    return _report(s1, s2, br.s, br.epsilon, op.m, op.n, C)


def matrix_epsilon(B: np.ndarray) -> float:
    m, n = B.shape
    s = B.sum()
    r, c = B.sum(1), B.sum(0)
    eps = max(1 - m * r.min() / s, m * r.max() / s - 1, 1 - n * c.min() / s, n * c.max() / s - 1)
    return max(float(eps), 0.0)


def _check_matrix(B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise ValueError("B must be a matrix")
    if np.any(B < 0) or not np.all(np.isfinite(B)):
        raise ValueError("B must be finite and entrywise nonnegative")
    if B.sum() <= 0:
        raise ValueError("B must have positive size")
    return B


def certify_matrix(B, C: float = 1.0) -> SpectralReport:
    B = _check_matrix(B)
    m, n = B.shape
    sv = np.linalg.svd(B, compute_uv=False)
    s2 = sv[1] if len(sv) > 1 else 0.0
    return _report(sv[0], s2, B.sum(), matrix_epsilon(B), m, n, C)


def squared_gram(U: Frame) -> np.ndarray:
    V = U.vectors
    return (V.T @ V) ** 2


def frame_epsilon(U: Frame) -> float:
    V = U.vectors
    s = U.size
    row = V @ V.T
    norms = np.sum(V * V, axis=0)
    ev = np.linalg.eigvalsh(row)
    d, n = V.shape
    eps = max(1 - d * ev[0] / s, d * ev[-1] / s - 1, 1 - n * norms.min() / s, n * norms.max() / s - 1)
    return max(float(eps), 0.0)


def gram_top_eigenvalues(U: Frame) -> tuple[float, float]:
    """Two largest eigenvalues of the squared Gram matrix G_ij = <u_i, u_j>^2.

    When n > d^2 the d^2 x d^2 matrix sum_i vec(u_i u_i^T) vec(u_i u_i^T)^T has
    the same nonzero spectrum and is smaller.
    """
    V = U.vectors
    d, n = V.shape
    if n <= d * d:
        w = np.linalg.eigvalsh(squared_gram(U))
    else:
        P = np.einsum("ai,bi->iab", V, V).reshape(n, d * d)
        w = np.linalg.eigvalsh(P.T @ P)
    w = w[::-1]
    return float(w[0]), float(w[1]) if len(w) > 1 else 0.0


def certify_frame(U: Frame, C: float = 1.0) -> SpectralReport:
    l1, l2 = gram_top_eigenvalues(U)
    return _report(math.sqrt(max(l1, 0.0)), math.sqrt(max(l2, 0.0)), U.size,
                   frame_epsilon(U), U.d, U.n, C)


# ---------------------------------------------------------------- conductance

MAX_CONDUCTANCE_VERTICES = 24


def conductance(B) -> float:
    """Exact conductance of the bipartite graph of B by brute force.

    Minimum over vertex sets S with 0 < vol(S) <= vol(V)/2 of cut(S)/vol(S).
    """
    B = _check_matrix(B)
    m, n = B.shape
    V = m + n
    if V > MAX_CONDUCTANCE_VERTICES:
        raise ValueError(f"conductance brute force limited to m+n <= {MAX_CONDUCTANCE_VERTICES}")
    W = np.zeros((V, V))
    W[:m, m:] = B
    W[m:, :m] = B.T
    deg = W.sum(1)
    half = deg.sum() / 2
    best = np.inf
    bits = np.arange(V)
    chunk = 1 << min(V, 16)
    for start in range(1, 1 << V, chunk):
        masks = np.arange(start, min(start + chunk, 1 << V))
        X = ((masks[:, None] >> bits) & 1).astype(float)
        vol = X @ deg
        inner = np.einsum("sv,sv->s", X @ W, X)
        ok = (vol > 0) & (vol <= half * (1 + 1e-12))
        if np.any(ok):
            best = min(best, float(np.min((vol[ok] - inner[ok]) / vol[ok])))
    return max(best, 0.0)


def cheeger_consistency(B) -> tuple[float, bool]:
    """(phi, sigma2(B) <= (1 - phi^2/2 + 3 eps) s / sqrt(mn))."""
    B = _check_matrix(B)
    eps = matrix_epsilon(B)
    if eps > 0.5:
        raise ValueError(f"requires eps <= 1/2, got {eps:.4g}")
    m, n = B.shape
    phi = conductance(B)
    sv = np.linalg.svd(B, compute_uv=False)
    s2 = sv[1] if len(sv) > 1 else 0.0
    bound = (1 - 0.5 * phi * phi + 3 * eps) * B.sum() / math.sqrt(m * n)
    return phi, bool(s2 <= bound * (1 + 1e-12))
