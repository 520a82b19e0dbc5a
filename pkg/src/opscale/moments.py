"""Random instances and the closed-form moment calculus for random unit frames.

For u uniform on the sphere S^{d-1},
    xi(q) = E prod_i <u, e_i>^{2 q_i} = prod_i (2q_i - 1)!! / prod_{j<|q|} (d + 2j).
Closed walks in the squared Gram matrix G_ij = <u_i, u_j>^2 reduce to trees
(product of xi over edges) and simple cycles (a trace of a fixed d^2 x d^2 matrix).
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .reductions import Frame
from .spectral import frame_epsilon, gram_top_eigenvalues


# ---------------------------------------------------------------- generators

def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_unit_vectors(n: int, d: int, seed=None) -> np.ndarray:
    """d x n array of independent uniform unit vectors (normalised Gaussians)."""
    if n < 1 or d < 1:
        raise ValueError("n, d >= 1")
    rng = _rng(seed)
    V = rng.standard_normal((d, n))
    nr = np.linalg.norm(V, axis=0)
    while np.any(nr == 0):  # probability-zero event
        bad = nr == 0
        V[:, bad] = rng.standard_normal((d, int(bad.sum())))
        nr = np.linalg.norm(V, axis=0)
    return V / nr


def random_unit_frame(n: int, d: int, seed=None) -> Frame:
    return Frame(random_unit_vectors(n, d, seed))


def random_gaussian_squared_matrix(n: int, seed=None) -> np.ndarray:
    """B_ij = g_ij^2 with g_ij ~ N(0, 1/n), so E s(B) = n."""
    if n < 1:
        raise ValueError("n >= 1")
    g = _rng(seed).standard_normal((n, n)) / math.sqrt(n)
    return g * g


def random_bipartite_matrix(m: int, n: int, p: float = 0.5, low: float = 0.5,
                            high: float = 1.5, seed=None) -> np.ndarray:
    """Weighted bipartite graph: each edge present with probability p, weight ~ U[low, high].

    Rows/columns left empty get one random edge so that the graph has no
    isolated vertex.
    """
    rng = _rng(seed)
    W = rng.uniform(low, high, (m, n)) * (rng.random((m, n)) < p)
    for i in np.flatnonzero(W.sum(1) == 0):
        W[i, rng.integers(n)] = rng.uniform(low, high)
    for j in np.flatnonzero(W.sum(0) == 0):
        W[rng.integers(m), j] = rng.uniform(low, high)
    return W


def child_seeds(seed: int, count: int) -> list:
    """Independent per-trial generators derived from (seed, index)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# ------------------------------------------------------------------ moments

@dataclass(frozen=True)
class MomentSpec:
    d: int
    q: tuple = ()
    k: int = 0
    edges: tuple = ()   # ((u, v, q_f), ...)


def _double_factorial_odd(q: int) -> int:
    # (2q - 1)!!, with (-1)!! = 1
    return math.prod(range(1, 2 * q, 2))


def xi_fraction(q, d: int) -> Fraction:
    q = [int(x) for x in q]
    if any(x < 0 for x in q):
        raise ValueError("exponents must be nonnegative")
    if len([x for x in q if x]) > d:
        raise ValueError("more nonzero exponents than dimensions")
    num = math.prod(_double_factorial_odd(x) for x in q)
    den = math.prod(d + 2 * j for j in range(sum(q)))
    return Fraction(num, den)


def xi_moment(q, d: int) -> float:
    return float(xi_fraction(q, d))


def _edge_multiplicities(edges):
    mult = Counter()
    for e in edges:
        u, v = e[0], e[1]
        qf = e[2] if len(e) > 2 else 1
        if u == v:
            continue  # self loops contribute <u,u>^2 = 1
        mult[frozenset((u, v))] += int(qf)
    return mult


def _is_tree(mult) -> bool:
    verts = set().union(*mult) if mult else set()
    if len(mult) != max(len(verts) - 1, 0):
        return False
    if not verts:
        return True
    adj = {v: set() for v in verts}
    for e in mult:
        a, b = tuple(e)
        adj[a].add(b)
        adj[b].add(a)
    seen, stack = set(), [next(iter(verts))]
    while stack:
        v = stack.pop()
        if v not in seen:
            seen.add(v)
            stack.extend(adj[v] - seen)
    return len(seen) == len(verts)


def expected_tree_walk(edges, d: int) -> float:
    """prod_f xi(q_f chi_1) over the edges of a tree; edges are (u, v) or (u, v, q_f)."""
    return float(tree_walk_fraction(edges, d))


def tree_walk_fraction(edges, d: int) -> Fraction:
    mult = _edge_multiplicities(edges)
    if not _is_tree(mult):
        raise ValueError("edge multiset is not a tree")
    val = Fraction(1)
    for qf in mult.values():
        if qf < 1:
            raise ValueError("multiplicities must be >= 1")
        val *= xi_fraction((qf,), d)
    return val


def proper_colorings(l: int, d: int) -> int:
    """Proper d-colourings of the cycle C_l: (d-1)^l + (-1)^l (d-1)."""
    return (d - 1) ** l + (-1) ** l * (d - 1)


def cycle_walk_fraction(k: int, d: int) -> Fraction:
    """E prod_i <v_i, v_{i+1}>^2 around a k-cycle = tr(M^k), where
    M = E vec(vv^T) vec(vv^T)^T = (2 P_sym + vec(I) vec(I)^T) / (d(d+2)).

    M has eigenvalue 1/d on vec(I) and 2/(d(d+2)) on the remaining
    (d-1)(d+2)/2 symmetric directions.
    """
    if k < 3:
        raise ValueError("cycle walks need k >= 3 distinct vertices")
    return Fraction(1, d ** k) + Fraction((d - 1) * (d + 2), 2) * Fraction(2, d * (d + 2)) ** k


def printed_cycle_walk_fraction(k: int, d: int) -> Fraction:
    """The commonly quoted variant with multiplicity (d^2 - 1)/2 in place of
    (d - 1)(d + 2)/2; kept for comparison only (it undercounts by d - 1 directions)."""
    if k < 3:
        raise ValueError("cycle walks need k >= 3 distinct vertices")
    return Fraction(1, d ** k) + Fraction(d * d - 1, 2) * Fraction(2, d * (d + 2)) ** k


def expected_cycle_walk(k: int, d: int) -> float:
    """E prod_{i} <v_i, v_{i+1}>^2 around a k-cycle of independent unit vectors."""
    return float(cycle_walk_fraction(k, d))


def walk_by_coordinates(edges, d: int) -> Fraction:
    """Exact expectation of prod over edges (u, v) of <x_u, x_v>^2 by expanding every
    inner product in coordinates and applying xi vertex by vertex.

    Cost d^(2 * #edges); an oracle for small structures only.
    """
    edges = [(e[0], e[1]) for e in edges for _ in range(e[2] if len(e) > 2 else 1)]
    verts = sorted({v for e in edges for v in e}, key=str)
    total = Fraction(0)
    cache = {}
    for coords in itertools.product(range(d), repeat=2 * len(edges)):
        counts = {v: [0] * d for v in verts}
        for t, (u, v) in enumerate(edges):
            a, b = coords[2 * t], coords[2 * t + 1]
            counts[u][a] += 1
            counts[u][b] += 1
            counts[v][a] += 1
            counts[v][b] += 1
        term = Fraction(1)
        for v in verts:
            c = counts[v]
            if any(x % 2 for x in c):
                term = Fraction(0)
                break
            key = tuple(sorted(c))
            if key not in cache:
                cache[key] = xi_fraction([x // 2 for x in key], d)
            term *= cache[key]
        total += term
    return total


def walk_expectation(walk, d: int) -> float:
    """Expectation of prod_t G_{w_t, w_{t+1}} along a closed walk (cyclic sequence of
    vertex labels), assuming its identified graph is a tree or a simple cycle."""
    return float(walk_fraction(walk, d))


def walk_fraction(walk, d: int) -> Fraction:
    k = len(walk)
    edges = [(walk[t], walk[(t + 1) % k]) for t in range(k)]
    mult = _edge_multiplicities(edges)
    if _is_tree(mult):
        return tree_walk_fraction(edges, d)
    verts = set().union(*mult)
    if len(mult) == len(verts) and all(q == 1 for q in mult.values()):
        deg = Counter(v for e in mult for v in e)
        if all(c == 2 for c in deg.values()) and len(verts) >= 3:
            return cycle_walk_fraction(len(verts), d)
    raise ValueError("walk graph is neither a tree nor a simple cycle")


def expected_trace_g4_fraction(n: int, d: int) -> Fraction:
    if n < 4:
        raise ValueError("n >= 4")
    x2 = xi_fraction((2,), d)
    x4 = xi_fraction((4,), d)
    c3 = cycle_walk_fraction(3, d)
    c4 = cycle_walk_fraction(4, d)
    n1, n2, n3 = n * (n - 1), n * (n - 1) * (n - 2), n * (n - 1) * (n - 2) * (n - 3)
    return (n + 6 * n1 * x2 + n1 * x4 + 4 * n2 * c3 + 2 * n2 * x2 * x2 + n3 * c4)


def expected_trace_g4(n: int, d: int) -> float:
    """Exact E tr(G^4) for n independent uniform unit vectors in R^d."""
    return float(expected_trace_g4_fraction(n, d))


def trace_g4_by_enumeration(n: int, d: int) -> float:
    """E tr(G^4) by summing walk expectations over all n^4 closed walks (small n)."""
    total = Fraction(0)
    cache = {}
    for w in itertools.product(range(n), repeat=4):
        # canonical relabelling so equivalent walk shapes share one evaluation
        lab, key = {}, []
        for v in w:
            lab.setdefault(v, len(lab))
            key.append(lab[v])
        key = tuple(key)
        if key not in cache:
            cache[key] = walk_fraction(key, d)
        total += cache[key]
    return float(total)


def fourth_moment_upper_bound(n: int, d: int) -> float:
    return (n / d) ** 4 * (1 + d ** 4 / n ** 3 + 18 * d * d / n ** 2 + 105 / n ** 2
                           + 4 * d / n + 34 / n + 8 / d ** 2)


def second_eigenvalue_tail_bound(n: int, d: int, lam: float) -> float:
    """Markov bound on P[lambda_2(G) > (1 - lam)^2 n / d] via E tr(G^4)."""
    if not 0 < lam < 1:
        raise ValueError("0 < lambda < 1")
    top = (n / d) ** 4 * (1 + (d - 1) / n) ** 4
    val = (expected_trace_g4(n, d) - top) / ((1 - lam) ** 8 * (n / d) ** 4)
    return float(min(max(val, 0.0), 1.0))


def bernstein_failure_probability(n: int, d: int, eps) -> np.ndarray:
    """Matrix Bernstein bound on P[frame epsilon >= eps] for n random unit vectors."""
    eps = np.asarray(eps, dtype=float)
    if d == 1:
        return np.zeros_like(eps)
    return np.minimum(1.0, 2 * d * np.exp(-n * eps ** 2 / (2 * (d - 1) * (1 + eps / 3))))


@dataclass
class ParsevalCheck:
    eps: np.ndarray          # per-trial epsilon
    thresholds: np.ndarray
    empirical: np.ndarray    # fraction of trials with eps >= threshold
    bernstein: np.ndarray    # predicted bound on that fraction


def parseval_concentration_check(n: int, d: int, trials: int, seed=0, thresholds=None) -> ParsevalCheck:
    if trials < 1:
        raise ValueError("trials >= 1")
    eps = np.array([frame_epsilon(random_unit_frame(n, d, g)) for g in child_seeds(seed, trials)])
    if thresholds is None:
        thresholds = np.linspace(0.0, max(eps.max(), 1e-3) * 1.5, 31)[1:]
    thresholds = np.asarray(thresholds, dtype=float)
    emp = np.array([(eps >= t).mean() for t in thresholds])
    return ParsevalCheck(eps, thresholds, emp, bernstein_failure_probability(n, d, thresholds))


# -------------------------------------------------------- Monte Carlo checks

@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    samples: int

    def agrees(self, value: float, z: float = 3.0) -> bool:
        return abs(self.mean - value) <= z * self.stderr + 1e-15


def _batched(fn, samples, seed, batch=100_000):
    rng = _rng(seed)
    tot = tot2 = 0.0
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        x = fn(rng, b)
        tot += float(x.sum())
        tot2 += float((x * x).sum())
        done += b
    mean = tot / samples
    var = max(tot2 / samples - mean * mean, 0.0) * samples / max(samples - 1, 1)
    return MCEstimate(mean, math.sqrt(var / samples), samples)


def _unit(rng, d, b):
    V = rng.standard_normal((b, d))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def mc_xi(q, d: int, samples: int = 10**6, seed=0) -> MCEstimate:
    q = np.zeros(d, dtype=int) if len(q) == 0 else np.pad(np.asarray(q, dtype=int), (0, d - len(q)))
    return _batched(lambda rng, b: np.prod(_unit(rng, d, b) ** (2 * q), axis=1), samples, seed)


def mc_tree_walk(edges, d: int, samples: int = 10**6, seed=0) -> MCEstimate:
    mult = _edge_multiplicities(edges)
    if not _is_tree(mult):
        raise ValueError("edge multiset is not a tree")
    verts = sorted(set().union(*mult), key=str)
    idx = {v: i for i, v in enumerate(verts)}

    def f(rng, b):
        U = np.stack([_unit(rng, d, b) for _ in verts])
        out = np.ones(b)
        for e, qf in mult.items():
            a, c = tuple(e)
            out *= np.einsum("bd,bd->b", U[idx[a]], U[idx[c]]) ** (2 * qf)
        return out
    return _batched(f, samples, seed)


def mc_cycle_walk(k: int, d: int, samples: int = 10**6, seed=0) -> MCEstimate:
    if k < 3:
        raise ValueError("k >= 3")

    def f(rng, b):
        U = np.stack([_unit(rng, d, b) for _ in range(k)])
        out = np.ones(b)
        for i in range(k):
            out *= np.einsum("bd,bd->b", U[i], U[(i + 1) % k]) ** 2
        return out
    return _batched(f, samples, seed)


def mc_trace_g4(n: int, d: int, frames: int = 10**5, seed=0) -> MCEstimate:
    def f(rng, b):
        V = rng.standard_normal((b, n, d))
        V /= np.linalg.norm(V, axis=2, keepdims=True)
        G = np.einsum("bid,bjd->bij", V, V) ** 2
        G2 = G @ G
        return np.einsum("bij,bji->b", G2, G2)
    return _batched(f, frames, seed, batch=20_000)


def mc_gram_pair_moment(d: int, pairs: int = 10**5, seed=0) -> MCEstimate:
    """E <v_i, v_j>^2 over independent pairs (should be 1/d)."""
    def f(rng, b):
        return np.einsum("bd,bd->b", _unit(rng, d, b), _unit(rng, d, b)) ** 2
    return _batched(f, pairs, seed)


def lambda2_exceedance(n: int, d: int, lam: float, trials: int, seed=0) -> np.ndarray:
    """Indicator per trial of lambda_2(G) > (1 - lam)^2 n / d."""
    thr = (1 - lam) ** 2 * n / d
    return np.array([gram_top_eigenvalues(random_unit_frame(n, d, g))[1] > thr
                     for g in child_seeds(seed, trials)])
