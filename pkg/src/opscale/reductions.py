"""Embeddings of matrices, frames and Brascamp-Lieb data as operators, and the
inverse extraction of structured scalings from a solver result."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .operator import Operator


@dataclass(frozen=True, eq=False)
class Frame:
    """n vectors in R^d, stored as the columns of a read-only d x n array."""

    vectors: np.ndarray

    def __post_init__(self):
        V = np.array(self.vectors, dtype=float, order="C")
        if V.ndim != 2 or min(V.shape) < 1:
            raise ValueError(f"frame must be a d x n array, got shape {V.shape}")
        if not np.all(np.isfinite(V)):
            raise ValueError("frame has non-finite entries")
        if not np.any(V):
            raise ValueError("frame has zero size")
        V.flags.writeable = False
        object.__setattr__(self, "vectors", V)

    @property
    def d(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    @property
    def size(self) -> float:
        return float(np.sum(self.vectors ** 2))

    def to_dict(self) -> dict:
        return {"type": "frame", "d": self.d, "n": self.n, "vectors": self.vectors.T.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Frame":
        V = np.asarray(d["vectors"], dtype=float).reshape(int(d["n"]), int(d["d"]))
        return cls(V.T)


@dataclass(frozen=True, eq=False)
class BLDatum:
    """Brascamp-Lieb datum: maps B_j (n_j x n) with exponents p_j = c_j / denominator."""

    n: int
    maps: tuple
    c: tuple
    denominator: int

    def __post_init__(self):
        maps = tuple(np.array(B, dtype=float, ndmin=2) for B in self.maps)
        c = tuple(int(x) for x in self.c)
        if len(maps) != len(c) or not maps:
            raise ValueError("need one exponent per map")
        if any(B.shape[1] != self.n for B in maps):
            raise ValueError("every map must have n columns")
        if any(x < 1 for x in c) or self.denominator < 1:
            raise ValueError("exponent numerators and denominator must be positive integers")
        if sum(x * B.shape[0] for x, B in zip(c, maps)) != self.denominator * self.n:
            raise ValueError("exponents violate sum_j p_j n_j = n")
        for B in maps:
            B.flags.writeable = False
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "c", c)

    @property
    def m(self) -> int:
        return len(self.maps)

    @property
    def p(self) -> np.ndarray:
        return np.array(self.c, dtype=float) / self.denominator

    def to_dict(self) -> dict:
        return {"type": "bl_datum", "n": self.n,
                "maps": [{"nj": int(B.shape[0]), "B": B.tolist()} for B in self.maps],
                "exponents": [{"c": x} for x in self.c], "denominator": self.denominator}

    @classmethod
    def from_dict(cls, d: dict) -> "BLDatum":
        maps = [np.asarray(mp["B"], dtype=float).reshape(int(mp["nj"]), int(d["n"])) for mp in d["maps"]]
        return cls(int(d["n"]), tuple(maps), tuple(e["c"] for e in d["exponents"]), int(d["denominator"]))


def matrix_to_operator(B) -> Operator:
    """One Kraus matrix per nonzero entry, holding sqrt(B_ij) at (i, j)."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or np.any(B < 0):
        raise ValueError("B must be an entrywise nonnegative matrix")
    idx = np.argwhere(B > 0)
    if len(idx) == 0:
        raise ValueError("all-zero matrix")
    A = np.zeros((len(idx),) + B.shape)
    A[np.arange(len(idx)), idx[:, 0], idx[:, 1]] = np.sqrt(B[idx[:, 0], idx[:, 1]])
    return Operator(A)


def frame_to_operator(U: Frame) -> Operator:
    """A_i = u_i e_i^T in R^{d x n}."""
    d, n = U.d, U.n
    A = np.zeros((n, d, n))
    A[np.arange(n), :, np.arange(n)] = U.vectors.T
    return Operator(A)


def bl_datum_to_operator(datum: BLDatum) -> Operator:
    """Kraus operators A_ji (n x D n) holding B_j^T / sqrt(D) in column block (j, i).

    Then Phi(X) = (1/D) sum_ji B_j^T X_(ji) B_j maps R^{Dn x Dn} -> R^{n x n} and
    Phi*(I_n) is block diagonal with blocks B_j B_j^T / D.
    """
    D, n = datum.denominator, datum.n
    width = D * n
    mats = []
    col = 0
    scale = 1.0 / math.sqrt(D)
    for B, c in zip(datum.maps, datum.c):
        nj = B.shape[0]
        for _ in range(c):
            A = np.zeros((n, width))
            A[:, col:col + nj] = B.T * scale
            mats.append(A)
            col += nj
    assert col == width
    return Operator(np.array(mats))


@dataclass(frozen=True)
class DiagonalScaling:
    dl: np.ndarray          # diagonal of D_L = (L^T L)^{1/2}
    dr: np.ndarray          # diagonal of D_R = (R R^T)^{1/2}
    off_diagonal: float     # relative off-diagonal mass of D_L, D_R
    ok: bool

    def apply(self, B) -> np.ndarray:
        """D_L^2 B D_R^2."""
        return (self.dl ** 2)[:, None] * np.asarray(B, dtype=float) * (self.dr ** 2)[None, :]


@dataclass(frozen=True)
class FrameScaling:
    M: np.ndarray           # left linear map (= L)
    norms: np.ndarray       # per-vector normalisers R_ii
    frame: Frame            # v_i = M u_i R_ii
    off_diagonal: float
    ok: bool


def _psd_sqrt(S):
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    return (Q * np.sqrt(np.clip(w, 0, None))) @ Q.T


def _offdiag(D):
    tot = np.linalg.norm(D)
    return float(np.linalg.norm(D - np.diag(np.diag(D))) / tot) if tot > 0 else 0.0


def extract_diagonal_scaling(result, kind: str = "matrix", source: Frame | None = None,
                             tol: float = 1e-7):
    """Structured scaling from a solver run on an embedded matrix or frame.

    matrix: D_L = (L^T L)^{1/2}, D_R = (R R^T)^{1/2}, so D_L^2 B D_R^2 is the
    balanced matrix.  frame: M = L and normalisers R_ii.
    """
    L, R = np.asarray(result.L), np.asarray(result.R)
    if kind == "matrix":
        DL, DR = _psd_sqrt(L.T @ L), _psd_sqrt(R @ R.T)
        off = max(_offdiag(DL), _offdiag(DR))
        return DiagonalScaling(np.diag(DL).copy(), np.diag(DR).copy(), off, off <= tol)
    if kind == "frame":
        U = source if source is not None else result.initial
        if not isinstance(U, Frame):
            raise TypeError("frame extraction needs a result whose initial instance is a Frame")
        off = _offdiag(R)
        norms = np.diag(R).copy()
        V = L @ U.vectors * norms[None, :]
        return FrameScaling(L.copy(), norms, Frame(V), off, off <= tol)
    raise ValueError(f"unknown kind {kind!r}")
