"""Discretised gradient flow and alternating (Sinkhorn-type) scaling.

Every solver tracks the accumulated scalings so that the final instance is
L A_i R (operator), diag(l^2) B diag(q^2) (matrix) or L U diag(q) (frame).

Step size: ``alpha`` is dimensionless and refers to the instance normalised
to s = 1.  Rather than rescaling the data we take steps with alpha / s0 in
the original units, which produces the same iterates (E and F are linear in
s) and needs no undoing in L.  The time coordinate t = sum of alpha / s0 over
the steps is therefore in the original units, so decay rates are directly
comparable with lambda * s0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .operator import BalanceReport, Operator, balance_report, phi_identity, size
from .reductions import Frame, frame_to_operator, matrix_to_operator

TRACE_COLUMNS = ("iter", "t", "s", "delta", "E_op", "F_op", "kappa_L", "kappa_R")


@dataclass(frozen=True)
class SolverConfig:
    alpha: float | None = None      # None -> c / (m + n)^2
    c: float = 1.0
    max_iters: int = 1_000_000
    eta: float = 1e-6
    algorithm: str = "gradient_descent"
    record_every: int = 100
    seed: int = 0
    record_movement: bool = False

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.c > 0 or not self.eta > 0:
            raise ValueError("c and eta must be positive")
        if self.max_iters < 1 or self.record_every < 1:
            raise ValueError("max_iters and record_every must be >= 1")
        if self.algorithm not in ("gradient_descent", "alternating"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    def step_size(self, m: int, n: int) -> float:
        return self.alpha if self.alpha is not None else self.c / (m + n) ** 2


@dataclass
class ConvergenceTrace:
    rows: list = field(default_factory=list)

    def append(self, *row):
        self.rows.append(tuple(row))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[TRACE_COLUMNS.index(name)] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    def decay_rate(self, frac: float = 0.9) -> float:
        """Least-squares slope of -log(delta) against t over the first ``frac`` of the run."""
        t, dl = self.column("t"), self.column("delta")
        keep = (t <= frac * t[-1]) & (dl > 0)
        if keep.sum() < 2:
            return float("nan")
        return -float(np.polyfit(t[keep], np.log(dl[keep]), 1)[0])


@dataclass
class ScalingResult:
    L: np.ndarray
    R: np.ndarray
    kappa_L: float
    kappa_R: float
    trace: ConvergenceTrace
    status: str                 # converged | budget | diverged | singular
    iterations: int
    alpha: float                # dimensionless step size in use at exit
    source: str                 # operator | matrix | frame
    initial: Any
    final: Any
    balance: BalanceReport      # of the final instance
    movement_sq: float | None = None
    step_norms: np.ndarray | None = None
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def final_operator(self) -> Operator:
        if self.source == "matrix":
            return matrix_to_operator(self.final)
        if self.source == "frame":
            return frame_to_operator(self.final)
        return self.final


def condition_number(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("condition_number needs a square matrix")
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= 0 or not np.isfinite(sv[-1]):
        return float("inf")
    return float(sv[0] / sv[-1])


def _cond_diag(v) -> float:
    a = np.abs(v)
    return float(a.max() / a.min()) if a.min() > 0 else float("inf")


def total_movement(steps) -> float:
    """(sum over steps of sqrt(sum_i ||dA_i||_F^2))^2.

    Each item is either an array of per-step displacements dA_i or an already
    reduced step norm sqrt(sum_i ||dA_i||_F^2).
    """
    total = 0.0
    for st in steps:
        if np.ndim(st) == 0:
            total += float(st)
        else:
            total += math.sqrt(float(np.sum(np.asarray(st, dtype=float) ** 2)))
    return total * total


def gradient_step(op: Operator, alpha: float):
    """One step A_i <- (I + alpha E) A_i (I + alpha F); alpha is used as given."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    s = size(op)
    row, col = phi_identity(op)
    E = s * np.eye(op.m) - op.m * row
    F = s * np.eye(op.n) - op.n * col
    SL = np.eye(op.m) + alpha * 0.5 * (E + E.T)
    SR = np.eye(op.n) + alpha * 0.5 * (F + F.T)
    return Operator(SL @ op.matrices @ SR), SL, SR


# ------------------------------------------------------------------ operator

def _op_state(A, m, n):
    row = np.tensordot(A, A, axes=([0, 2], [0, 2]))
    col = np.tensordot(A, A, axes=([0, 1], [0, 1]))
    s = float(np.trace(row))
    E = s * np.eye(m) - m * row
    F = s * np.eye(n) - n * col
    E, F = 0.5 * (E + E.T), 0.5 * (F + F.T)
    dl = float(np.sum(E * E)) / m + float(np.sum(F * F)) / n
    return s, E, F, dl


def _sym_op_norm(S) -> float:
    w = np.linalg.eigvalsh(S)
    return float(max(abs(w[0]), abs(w[-1])))


_DONE, _CHUNK, _DIVERGED = 0, 1, 2


class _Driver:
    """Shared loop: step-size control, divergence policy, trace recording.

    Subclasses provide measure() -> (s, delta) (caching E, F), step(a) which
    rebinds (never mutates) the state, snapshot/restore, op_norms and kappas.
    advance() may be overridden by a compiled kernel.
    """

    def advance(self, a, nsteps, eta2, s, dl, norms):
        for taken in range(nsteps):
            if dl <= eta2 * s * s:
                return _DONE, taken, s, dl
            snap = self.snapshot()
            nrm = self.step(a, norms is not None)
            s_new, dl_new = self.measure()
            if dl_new > 1.1 * dl:
                self.restore(snap)
                return _DIVERGED, taken, s, dl
            if norms is not None:
                norms.append(nrm)
            s, dl = s_new, dl_new
        return _CHUNK, nsteps, s, dl

    def run(self, cfg: SolverConfig, alpha: float, s0: float):
        trace = ConvergenceTrace()
        norms = [] if cfg.record_movement else None
        status, msg = "budget", ""
        eta2 = cfg.eta ** 2
        halved = False
        t = 0.0
        it = 0
        s, dl = self.measure()
        while True:
            done = dl <= eta2 * s * s
            if it % cfg.record_every == 0 or done or it == cfg.max_iters:
                trace.append(it, t, s, dl, *self.op_norms(), *self.kappas())
            if done:
                status = "converged"
                break
            if it == cfg.max_iters:
                break
            a = alpha / s0
            nsteps = min(cfg.record_every - it % cfg.record_every, cfg.max_iters - it)
            code, taken, s, dl = self.advance(a, nsteps, eta2, s, dl, norms)
            it += taken
            t += taken * a
            if code == _DIVERGED:
                if halved:
                    status, msg = "diverged", f"delta increased twice (iteration {it})"
                    trace.append(it, t, s, dl, *self.op_norms(), *self.kappas())
                    break
                halved = True
                alpha *= 0.5
        return trace, status, msg, it, alpha, norms


class _OperatorDriver(_Driver):
    def __init__(self, op: Operator):
        self.A = np.array(op.matrices)
        self.k, self.m, self.n = self.A.shape
        self.L, self.R = np.eye(self.m), np.eye(self.n)
        self._cache = None

    def measure(self):
        s, E, F, dl = _op_state(self.A, self.m, self.n)
        self._cache = (E, F)
        return s, dl

    def op_norms(self):
        E, F = self._cache
        return _sym_op_norm(E), _sym_op_norm(F)

    def kappas(self):
        return condition_number(self.L), condition_number(self.R)

    def snapshot(self):
        return self.A, self.L, self.R, self._cache  # step() rebinds, never mutates

    def restore(self, snap):
        self.A, self.L, self.R, self._cache = snap

    def step(self, a, want_norm):
        E, F = self._cache
        SL, SR = np.eye(self.m) + a * E, np.eye(self.n) + a * F
        new = SL @ self.A @ SR
        nrm = float(np.linalg.norm(new - self.A)) if want_norm else None
        self.A = new
        self.L = SL @ self.L
        self.R = self.R @ SR
        return nrm


def run_gradient_descent(op: Operator, cfg: SolverConfig = SolverConfig()) -> ScalingResult:
    drv = _OperatorDriver(op)
    s0 = size(op)
    alpha = cfg.step_size(op.m, op.n)
    trace, status, msg, it, alpha, norms = drv.run(cfg, alpha, s0)
    final = Operator(drv.A)
    return ScalingResult(drv.L, drv.R, condition_number(drv.L), condition_number(drv.R), trace,
                         status, it, alpha, "operator", op, final, balance_report(final),
                         None if norms is None else total_movement(norms),
                         None if norms is None else np.array(norms), msg)


# -------------------------------------------------------------- matrix path

def _marginals_np(B, l, q):
    l2, q2 = l * l, q * q
    return l2 * (B @ q2), q2 * (B.T @ l2)


try:  # the matrix path takes ~10^5 tiny steps; a fused kernel removes numpy call overhead
    import numba

    @numba.njit(cache=True)
    def _marginals(B, l, q):
        m, n = B.shape
        q2 = q * q
        r = np.zeros(m)
        c = np.zeros(n)
        for i in range(m):
            li2 = l[i] * l[i]
            acc = 0.0
            for j in range(n):
                w = B[i, j]
                acc += w * q2[j]
                c[j] += w * li2
            r[i] = li2 * acc
        return r, c * q2

    @numba.njit(cache=True)
    def _matrix_chunk(B, l, q, a, nsteps, eta2, s, dl):
        m, n = B.shape
        E = np.empty(m)
        F = np.empty(n)
        r, c = _marginals(B, l, q)
        for i in range(m):
            E[i] = s - m * r[i]
        for j in range(n):
            F[j] = s - n * c[j]
        for taken in range(nsteps):
            if dl <= eta2 * s * s:
                return 0, taken, l, q, s, dl
            l2 = l * (1.0 + a * E)
            q2 = q * (1.0 + a * F)
            r, c = _marginals(B, l2, q2)
            s2 = r.sum()
            d2 = 0.0
            for i in range(m):
                E[i] = s2 - m * r[i]
                d2 += E[i] * E[i] / m
            for j in range(n):
                F[j] = s2 - n * c[j]
                d2 += F[j] * F[j] / n
            if d2 > 1.1 * dl:
                return 2, taken, l, q, s, dl
            l, q, s, dl = l2, q2, s2, d2
        return 1, nsteps, l, q, s, dl
except ImportError:  # pragma: no cover
    _marginals = _marginals_np
    _matrix_chunk = None


class _MatrixDriver(_Driver):
    """Entrywise flow on B tracked through the diagonal scalings l, q.

    a_ij = l_i sqrt(B_ij) q_j, so the current matrix is diag(l^2) B diag(q^2).
    """

    def __init__(self, B):
        self.B = np.ascontiguousarray(B)
        self.m, self.n = B.shape
        self.l, self.q = np.ones(self.m), np.ones(self.n)

    def measure(self):
        r, c = _marginals(self.B, self.l, self.q)
        s = float(r.sum())
        E = s - self.m * r
        F = s - self.n * c
        self._cache = (E, F)
        return s, float(E @ E) / self.m + float(F @ F) / self.n

    def op_norms(self):
        E, F = self._cache
        return float(np.abs(E).max()), float(np.abs(F).max())

    def kappas(self):
        return _cond_diag(self.l), _cond_diag(self.q)

    def snapshot(self):
        return self.l, self.q, self._cache

    def restore(self, snap):
        self.l, self.q, self._cache = snap

    def advance(self, a, nsteps, eta2, s, dl, norms):
        if norms is not None or _matrix_chunk is None:
            return super().advance(a, nsteps, eta2, s, dl, norms)
        code, taken, self.l, self.q, s, dl = _matrix_chunk(self.B, self.l, self.q, a, nsteps, eta2, s, dl)
        self.measure()  # refresh cached E, F for the trace
        return code, taken, s, dl

    def step(self, a, want_norm):
        E, F = self._cache
        x, y = 1 + a * E, 1 + a * F
        nrm = None
        if want_norm:
            # a_ij changes by l_i q_j sqrt(B_ij) (x_i y_j - 1)
            D = np.outer(x - 1, np.ones(self.n)) + np.outer(x, y - 1)
            nrm = math.sqrt(float(np.sum(self.B * np.outer(self.l ** 2, self.q ** 2) * D * D)))
        self.l = self.l * x
        self.q = self.q * y
        return nrm


def _check_nonneg(B):
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or np.any(B < 0) or not np.all(np.isfinite(B)):
        raise ValueError("B must be a finite entrywise nonnegative matrix")
    if B.sum() <= 0:
        raise ValueError("B must have positive size")
    return B


def run_matrix_fast_path(B, cfg: SolverConfig = SolverConfig()) -> ScalingResult:
    B = _check_nonneg(B)
    drv = _MatrixDriver(B)
    s0 = float(B.sum())
    alpha = cfg.step_size(*B.shape)
    trace, status, msg, it, alpha, norms = drv.run(cfg, alpha, s0)
    final = (drv.l ** 2)[:, None] * B * (drv.q ** 2)[None, :]
    bal = balance_report(matrix_to_operator(final)) if final.size <= 4096 else _matrix_balance(final)
    return ScalingResult(np.diag(drv.l), np.diag(drv.q), _cond_diag(drv.l), _cond_diag(drv.q), trace,
                         status, it, alpha, "matrix", B, final, bal,
                         None if norms is None else total_movement(norms),
                         None if norms is None else np.array(norms), msg)


def _matrix_balance(B) -> BalanceReport:
    from .spectral import matrix_epsilon
    m, n = B.shape
    s = float(B.sum())
    E, F = s - m * B.sum(1), s - n * B.sum(0)
    dE, dF = float(E @ E) / m, float(F @ F) / n
    return BalanceReport(s, matrix_epsilon(B), dE + dF, dE, dF)


# --------------------------------------------------------------- frame path

class _FrameDriver(_Driver):
    """Flow on the frame operator A_i = u_i e_i^T: U <- (I + aE) U diag(1 + aF)."""

    def __init__(self, U: Frame):
        self.U0 = U.vectors
        self.d, self.n = self.U0.shape
        self.V = np.array(self.U0)
        self.L = np.eye(self.d)
        self.q = np.ones(self.n)

    def measure(self):
        V = self.V
        G = V @ V.T
        nr = np.einsum("ij,ij->j", V, V)
        s = float(nr.sum())
        E = s * np.eye(self.d) - self.d * G
        F = s - self.n * nr
        self._cache = (E, F)
        return s, float(np.sum(E * E)) / self.d + float(F @ F) / self.n

    def op_norms(self):
        E, F = self._cache
        return _sym_op_norm(E), float(np.abs(F).max())

    def kappas(self):
        return condition_number(self.L), _cond_diag(self.q)

    def snapshot(self):
        return self.V, self.L, self.q, self._cache

    def restore(self, snap):
        self.V, self.L, self.q, self._cache = snap

    def step(self, a, want_norm):
        E, F = self._cache
        SL = np.eye(self.d) + a * E
        y = 1 + a * F
        new = (SL @ self.V) * y[None, :]
        nrm = float(np.linalg.norm(new - self.V)) if want_norm else None
        self.V = new
        self.L = SL @ self.L
        self.q = self.q * y
        return nrm


def run_frame_fast_path(U: Frame, cfg: SolverConfig = SolverConfig()) -> ScalingResult:
    drv = _FrameDriver(U)
    s0 = U.size
    alpha = cfg.step_size(U.d, U.n)
    trace, status, msg, it, alpha, norms = drv.run(cfg, alpha, s0)
    final = Frame(drv.V)
    from .spectral import frame_epsilon
    E, F = drv._cache
    s = final.size
    dE, dF = float(np.sum(E * E)) / U.d, float(F @ F) / U.n
    bal = BalanceReport(s, frame_epsilon(final), dE + dF, dE, dF)
    return ScalingResult(drv.L, np.diag(drv.q), condition_number(drv.L), _cond_diag(drv.q), trace,
                         status, it, alpha, "frame", U, final, bal,
                         None if norms is None else total_movement(norms),
                         None if norms is None else np.array(norms), msg)


# -------------------------------------------------------------- alternating

def _inv_sqrt(S, floor):
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    return (Q / np.sqrt(np.maximum(w, floor))) @ Q.T, float(w[0])


def run_alternating(op: Operator, cfg: SolverConfig = SolverConfig(algorithm="alternating")) -> ScalingResult:
    """A <- sqrt(s/m) Phi(I)^{-1/2} A, then A <- sqrt(s/n) A Phi*(I)^{-1/2}, repeated.

    The trace's t column counts full (row + column) iterations.
    """
    A = np.array(op.matrices)
    k, m, n = A.shape
    L, R = np.eye(m), np.eye(n)
    trace = ConvergenceTrace()
    status, msg = "budget", ""
    it = 0
    while True:
        s, E, F, dl = _op_state(A, m, n)
        done = dl <= cfg.eta ** 2 * s * s
        if it % cfg.record_every == 0 or done or it == cfg.max_iters:
            trace.append(it, float(it), s, dl, _sym_op_norm(E), _sym_op_norm(F),
                         condition_number(L), condition_number(R))
        if done:
            status = "converged"
            break
        if it == cfg.max_iters:
            break
        row = np.tensordot(A, A, axes=([0, 2], [0, 2]))
        Xi, wmin = _inv_sqrt(row, 1e-14 * s)
        if wmin < 1e-12 * s / m:
            status, msg = "singular", "Phi(I) is singular: instance likely admits no scaling"
            break
        SL = math.sqrt(s / m) * Xi
        A = SL @ A
        L = SL @ L
        col = np.tensordot(A, A, axes=([0, 1], [0, 1]))
        Yi, wmin = _inv_sqrt(col, 1e-14 * s)
        if wmin < 1e-12 * s / n:
            status, msg = "singular", "Phi*(I) is singular: instance likely admits no scaling"
            break
        SR = math.sqrt(s / n) * Yi
        A = A @ SR
        R = R @ SR
        it += 1
    final = Operator(A)
    return ScalingResult(L, R, condition_number(L), condition_number(R), trace, status, it,
                         float("nan"), "operator", op, final, balance_report(final), message=msg)


def run(instance, cfg: SolverConfig = SolverConfig()) -> ScalingResult:
    """Dispatch on instance type and cfg.algorithm."""
    if cfg.algorithm == "alternating":
        if isinstance(instance, Frame):
            instance = frame_to_operator(instance)
        elif not isinstance(instance, Operator):
            instance = matrix_to_operator(instance)
        return run_alternating(instance, cfg)
    if isinstance(instance, Operator):
        return run_gradient_descent(instance, cfg)
    if isinstance(instance, Frame):
        return run_frame_fast_path(instance, cfg)
    return run_matrix_fast_path(instance, cfg)


def canonical_form(result: ScalingResult) -> Operator:
    """Gauge-fixed balanced operator D_L A0 D_R with D_L = (L^T L)^{1/2} and
    D_R = (R R^T)^{1/2}, each divided by det^{1/dim}.

    Balanced scalings of the same instance differ by orthogonal factors and by
    one positive scalar on each side; polar parts and unit determinants remove both.
    """
    from .reductions import _psd_sqrt
    op0 = result.initial
    if result.source == "matrix":
        op0 = matrix_to_operator(op0)
    elif result.source == "frame":
        op0 = frame_to_operator(op0)
    DL, DR = _psd_sqrt(result.L.T @ result.L), _psd_sqrt(result.R @ result.R.T)
    cl = math.exp(np.linalg.slogdet(DL)[1] / DL.shape[0])
    cr = math.exp(np.linalg.slogdet(DR)[1] / DR.shape[0])
    return Operator((DL / cl) @ op0.matrices @ (DR / cr))
