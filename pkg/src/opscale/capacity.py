"""Capacity bounds, exact matrix capacity, permanents and Brascamp-Lieb bounds.

All products that can over/underflow (determinants, n-th powers) are carried
in log space.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .operator import Operator, balance_report
from .reductions import BLDatum, bl_datum_to_operator
from .solvers import SolverConfig, run_matrix_fast_path
from .spectral import SpectralReport


class CertificationError(ValueError):
    """The spectral certificate needed for a bound is missing."""


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


@dataclass(frozen=True)
class CapacityReport:
    lower: float
    upper: float
    exact: float | None
    method: str
    s: float = float("nan")

    def to_dict(self) -> dict:
        return {"type": "capacity_report", "log_lower": _log(self.lower), "log_upper": _log(self.upper),
                "log_exact": None if self.exact is None else _log(self.exact), "method": self.method}


def capacity_bounds(op: Operator, report: SpectralReport) -> CapacityReport:
    """s >= cap >= max((1 - 4 eps^2/lam) s, s - 2 Delta/(lam s)) when lam > 0.

    Without a positive gap only the generic s >= cap >= (1 - mn eps) s is available.
    """
    br = balance_report(op)
    s, eps = br.s, br.epsilon
    if report.lam <= 0:
        lower = max(0.0, (1 - op.m * op.n * eps) * s)
        return CapacityReport(lower, s, None, "generic (no spectral gap)", s)
    thm = (1 - 4 * eps * eps / report.lam) * s
    prop = s - 2 * br.delta_total / (report.lam * s)
    lower = max(thm, prop, 0.0)
    tag = "spectral" if report.gap_condition_holds else "spectral (gap condition with C not met)"
    return CapacityReport(min(lower, s), s, None, tag, s)


def _check_square(B):
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("B must be square")
    if np.any(B < 0) or not np.all(np.isfinite(B)):
        raise ValueError("B must be finite and entrywise nonnegative")
    return B


def matrix_log_capacity_exact(B, cfg: SolverConfig | None = None) -> float | None:
    """log cap(B) from the diagonal scalings that make B doubly stochastic.

    Returns None when the fast path does not converge.
    """
    B = _check_square(B)
    n = B.shape[0]
    s0 = float(B.sum())
    if s0 <= 0:
        raise ValueError("B must have positive size")
    Bn = B * (n / s0)  # normalise to s = n; cap is 1-homogeneous
    if cfg is None:
        cfg = SolverConfig(eta=1e-10, record_every=10_000, max_iters=2_000_000)
    res = run_matrix_fast_path(Bn, cfg)
    if not res.converged:
        return None
    sT = res.balance.s
    l = np.diag(res.L)
    q = np.diag(res.R)
    # doubly stochastic: (n/sT) diag(l^2) Bn diag(q^2); cap(Bn) = n (det Lh det Rh)^{-1/n}
    logdet = 2 * np.sum(np.log(np.abs(l))) + 2 * np.sum(np.log(np.abs(q))) + n * math.log(n / sT)
    return math.log(n) - logdet / n + math.log(s0 / n)


def matrix_capacity_exact(B, cfg: SolverConfig | None = None) -> float | None:
    lc = matrix_log_capacity_exact(B, cfg)
    return None if lc is None else math.exp(lc)


_Y_RANGE = math.log(1e12)


def _direct(B, sweeps: int, tol: float):
    m, n = B.shape
    y = np.zeros(n)
    pos = B > 0
    count = pos.sum(0)

    def deriv(j, yj, rest):
        # d/dy_j of (1/m) sum_i log(Bx)_i - (1/n) sum y, and its (positive) slope
        w = B[:, j] * math.exp(yj)
        tot = rest + w
        safe = np.where(tot > 0, tot, 1.0)
        ratio = np.where(tot > 0, w / safe, 0.0)
        return ratio.sum() / m - 1.0 / n, float(np.sum(ratio * rest / safe)) / m

    Bx = B @ np.exp(y)
    for sweep in range(sweeps):
        moved = 0.0
        for j in range(n):
            old = y[j]
            rest = np.maximum(Bx - B[:, j] * math.exp(old), 0.0)
            if count[j] == 0:
                new = _Y_RANGE  # objective strictly decreasing in y_j
            else:
                lo, hi = -_Y_RANGE, _Y_RANGE
                if deriv(j, hi, rest)[0] < 0:
                    new = hi
                elif deriv(j, lo, rest)[0] > 0:
                    new = lo
                else:
                    # Newton on the monotone derivative, bisection as safeguard
                    new = min(max(old, lo), hi)
                    for _ in range(200):
                        g, h = deriv(j, new, rest)
                        if abs(g) < tol:
                            break
                        if g < 0:
                            lo = new
                        else:
                            hi = new
                        cand = new - g / h if h > 0 else lo - 1.0
                        new = cand if lo < cand < hi else 0.5 * (lo + hi)
                        if hi - lo < 1e-15:
                            break
            y[j] = new
            Bx = rest + B[:, j] * math.exp(new)
            moved = max(moved, abs(new - old))
        # re-centre (objective is invariant under y -> y + c) to stay inside the box
        shift = 0.5 * (y.max() + y.min())
        if shift != 0.0:
            y -= shift
            Bx = B @ np.exp(y)
        if moved < 1e-12:
            break
    at_bound = bool(np.any(np.abs(y) >= _Y_RANGE - 1e-9))
    with np.errstate(divide="ignore"):
        val = math.log(m) + float(np.mean(np.log(Bx))) - float(np.mean(y))
    return val, y, at_bound


def matrix_capacity_direct(B, sweeps: int = 500, tol: float = 1e-10) -> float:
    """cap(B) = inf_x m (prod (Bx)_i)^{1/m} / (prod x_j)^{1/n} by coordinate descent
    in y = log x.  Each coordinate minimiser is found by Newton's method on the
    (monotone) partial derivative, safeguarded by bisection, within |y_j| <= log(1e12); hitting that box
    means the infimum is approached at infinity (value reported at the box edge,
    ~0 when no scaling exists)."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or np.any(B < 0):
        raise ValueError("B must be a nonnegative matrix")
    if np.any(B.sum(1) <= 0):
        raise ValueError("every row of B needs a nonzero entry")
    val, _, _ = _direct(B, sweeps, tol)
    return math.exp(val)


MAX_PERMANENT_N = 12


def permanent_bruteforce(B) -> float:
    """Ryser's formula with a Gray-code walk over column subsets."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("B must be square")
    n = B.shape[0]
    if n > MAX_PERMANENT_N:
        raise ValueError(f"brute-force permanent limited to n <= {MAX_PERMANENT_N}")
    if n == 0:
        return 1.0
    rows = np.zeros(n)
    total = 0.0
    sign_n = -1 if n % 2 else 1
    in_set = np.zeros(n, dtype=bool)
    k = 0
    for g in range(1, 1 << n):
        j = (g & -g).bit_length() - 1  # bit flipped between Gray codes g-1 and g
        if in_set[j]:
            rows -= B[:, j]
            k -= 1
        else:
            rows += B[:, j]
            k += 1
        in_set[j] = not in_set[j]
        total += (-1) ** k * np.prod(rows)
    return float(sign_n * total)


def permanent_naive(B) -> float:
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    return float(sum(np.prod(B[np.arange(n), list(p)]) for p in itertools.permutations(range(n))))


def permanent_lower_bound(B, report: SpectralReport) -> float:
    """per(B) >= (cap_lower / n)^n e^{-n} for B normalised to s(B) = n.

    Refuses (CertificationError) unless the report carries a positive gap.
    """
    B = _check_square(B)
    n = B.shape[0]
    s = float(B.sum())
    if abs(s - n) > 1e-9 * n:
        raise ValueError(f"normalise B to s(B) = n first (s = {s!r}, n = {n})")
    if not report.lam > 0:
        raise CertificationError(f"no spectral gap (lambda = {report.lam:.3g}); bound not valid")
    from .reductions import matrix_to_operator
    cap = capacity_bounds(matrix_to_operator(B), report)
    if cap.lower <= 0:
        return 0.0
    return math.exp(n * (math.log(cap.lower / n) - 1.0))


EXACT_EPS = 1e-12  # below this an instance counts as exactly balanced


@dataclass(frozen=True)
class BLBounds:
    log_lower: float
    log_upper: float
    s_over_n: float

    @property
    def lower(self) -> float:
        return math.exp(self.log_lower)

    @property
    def upper(self) -> float:
        return math.exp(self.log_upper) if self.log_upper < math.inf else math.inf


def bl_constant_bounds(datum: BLDatum, report: SpectralReport) -> BLBounds:
    """lower = (s/n)^{-n/2}, upper = ((s/n)(1 - 4 eps^2/lam))^{-n/2}.

    An exactly balanced (geometric, up to scale) datum needs no gap: both ends coincide.
    """
    op = bl_datum_to_operator(datum)
    br = balance_report(op)
    if br.epsilon <= EXACT_EPS:
        v = -0.5 * datum.n * math.log(br.s / datum.n)
        return BLBounds(v, v, br.s / datum.n)
    if not report.lam > 0:
        raise CertificationError(f"no spectral gap (lambda = {report.lam:.3g})")
    n = datum.n
    ratio = br.s / n
    shrink = 1 - 4 * br.epsilon ** 2 / report.lam
    log_lower = -0.5 * n * math.log(ratio)
    log_upper = -0.5 * n * (math.log(ratio) + math.log(shrink)) if shrink > 0 else math.inf
    return BLBounds(log_lower, log_upper, ratio)
