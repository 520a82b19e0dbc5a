"""Desk-scale experiments.  Each returns an ExperimentResult holding one
CriterionResult per checked claim plus raw tables for CSV export."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import moments as mo
from .capacity import (CertificationError, capacity_bounds, matrix_capacity_direct,
                       matrix_capacity_exact, permanent_bruteforce, permanent_lower_bound)
from .operator import (Operator, delta, delta_rate_decomposition, gradient_direction)
from .operator import size as op_size
from .reductions import Frame, frame_to_operator, matrix_to_operator
from .solvers import SolverConfig, run_frame_fast_path, run_matrix_fast_path
from .spectral import (certify_frame, certify_matrix, certify_operator, cheeger_consistency,
                       matrix_epsilon)


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        bits = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.id:>2} {self.name}: {bits}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


@dataclass
class ExperimentResult:
    name: str
    criteria: list
    tables: dict = field(default_factory=dict)   # name -> (columns, rows)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def summary(self) -> dict:
        return {"type": "experiment_summary", "experiment": self.name, "passed": self.passed,
                "criteria": [{"id": c.id, "name": c.name, "passed": c.passed, "detail": c.detail}
                             for c in self.criteria]}


# --------------------------------------------------- convergence (1, 2, 6)

@lru_cache(maxsize=4)
def _convergence_runs(seed: int, n: int, count: int, eta: float):
    out = []
    for g in mo.child_seeds(seed, count):
        B = mo.random_gaussian_squared_matrix(n, g)
        rep = certify_matrix(B)
        res = run_matrix_fast_path(B, SolverConfig(eta=eta, record_every=100, max_iters=2_000_000))
        out.append((B, rep, res))
    return tuple(out)


def convergence(seed: int = 0, n: int = 100, count: int = 10, eta: float = 1e-6) -> ExperimentResult:
    runs = _convergence_runs(seed, n, count, eta)
    rows, env_ok = [], 0
    ok_rate = 0
    for i, (B, rep, res) in enumerate(runs):
        rate = res.trace.decay_rate(0.9)
        target = 0.5 * rep.lam * rep.s
        ok_rate += rate >= target
        s0 = rep.s
        s_t = res.trace.column("s")
        env = np.maximum(res.trace.column("E_op") - ((1 + rep.epsilon) * s0 - s_t),
                         res.trace.column("F_op") - ((1 + rep.epsilon) * s0 - s_t))
        env_good = bool(np.all(env <= 1e-6 * s0))
        env_ok += env_good
        rows.append((i, rep.s, rep.epsilon, rep.lam, rate, rate / (rep.lam * rep.s),
                     res.iterations, int(res.converged), float(env.max() / s0)))
    c1 = CriterionResult(1, "linear convergence rate >= 0.5 lambda s0", ok_rate >= math.ceil(0.9 * count),
                         {"instances_ok": ok_rate, "instances": count,
                          "min_rate_over_lambda_s0": min(r[5] for r in rows)})
    c6 = CriterionResult(6, "E/F operator-norm envelope", env_ok == count,
                         {"runs_ok": env_ok, "runs": count, "max_excess_over_s0": max(r[8] for r in rows)})
    cols = ("instance", "s0", "epsilon", "lambda", "rate", "rate_over_lambda_s0", "iterations",
            "converged", "envelope_excess_over_s0")
    return ExperimentResult("convergence", [c1, c6], {"convergence": (cols, rows)})


def condition_number(seed: int = 0, n: int = 100, count: int = 10, eta: float = 1e-6) -> ExperimentResult:
    runs = _convergence_runs(seed, n, count, eta)
    rows, ok = [], 0
    for i, (B, rep, res) in enumerate(runs):
        allow = 50 * rep.epsilon * math.log(n) / rep.lam
        good = rep.lam > 0 and res.kappa_L - 1 <= allow and res.kappa_R - 1 <= allow
        ok += good
        rows.append((i, rep.epsilon, rep.lam, res.kappa_L, res.kappa_R, allow, int(good)))
    c2 = CriterionResult(2, "kappa - 1 <= 50 eps ln m / lambda", ok == count,
                         {"instances_ok": ok, "instances": count,
                          "max_kappa_minus_1": max(max(r[3], r[4]) - 1 for r in rows),
                          "min_allowance": min(r[5] for r in rows)})
    cols = ("instance", "epsilon", "lambda", "kappa_L", "kappa_R", "allowance", "ok")
    return ExperimentResult("condition_number", [c2], {"condition_number": (cols, rows)})


# ------------------------------------------------------------ capacity (3)

def random_gapped_matrix(n: int, rng) -> tuple[np.ndarray, object]:
    """Complete bipartite graph with U[0.2, 1] weights, redrawn until lambda > 0."""
    while True:
        B = mo.random_bipartite_matrix(n, n, p=1.0, low=0.2, high=1.0, seed=rng)
        rep = certify_matrix(B)
        if rep.lam > 0:
            return B, rep


def capacity(seed: int = 0, count: int = 25) -> ExperimentResult:
    rows = []
    sandwich_ok = oracle_ok = 0
    for i, g in enumerate(mo.child_seeds(seed, count)):
        n = int(g.integers(4, 9))
        B, rep = random_gapped_matrix(n, g)
        s, eps = rep.s, rep.epsilon
        exact = matrix_capacity_exact(B)
        direct = matrix_capacity_direct(B)
        lower = (1 - 4 * eps * eps / rep.lam) * s
        in_sw = exact is not None and lower - 1e-6 <= exact <= s + 1e-6
        agree = exact is not None and abs(exact - direct) <= 1e-4 * abs(direct)
        cb = capacity_bounds(matrix_to_operator(B), rep)
        sandwich_ok += in_sw
        oracle_ok += agree
        rows.append((i, n, s, eps, rep.lam, lower, cb.lower, exact, direct, int(in_sw), int(agree)))
    c3 = CriterionResult(3, "capacity sandwich and oracle agreement", sandwich_ok == count and oracle_ok == count,
                         {"sandwich_ok": sandwich_ok, "oracle_ok": oracle_ok, "instances": count,
                          "max_rel_oracle_gap": max(abs(r[7] - r[8]) / r[8] for r in rows)})
    cols = ("instance", "n", "s", "epsilon", "lambda", "gap_lower", "reported_lower", "exact",
            "direct", "sandwich_ok", "oracle_ok")
    return ExperimentResult("capacity", [c3], {"capacity": (cols, rows)})


# ---------------------------------------------------------- permanent (4)

def permanent(seed: int = 0, count: int = 20, n: int = 8) -> ExperimentResult:
    rows = []
    gens = iter(mo.child_seeds(seed, 100 * count))
    violations = nontrivial = 0
    while len(rows) < count:
        g = next(gens)
        B = mo.random_gaussian_squared_matrix(n, g)
        B = B * (n / B.sum())
        rep = certify_matrix(B)
        try:
            bound = permanent_lower_bound(B, rep)
        except CertificationError:
            continue
        per = permanent_bruteforce(B)
        exact = matrix_capacity_exact(B)
        chain = (exact / n) ** n * math.exp(-n) if exact else float("nan")
        violations += per < bound
        nontrivial += bound > 0
        rows.append((len(rows), rep.epsilon, rep.lam, per, bound, chain, int(per >= bound),
                     int(per >= chain)))
    c4 = CriterionResult(4, "per(B) >= permanent_lower_bound", violations == 0,
                         {"violations": violations, "instances": count, "nontrivial_bounds": nontrivial,
                          "min_per": min(r[3] for r in rows)})
    cols = ("instance", "epsilon", "lambda", "permanent", "bound", "exact_capacity_chain",
            "bound_ok", "chain_ok")
    return ExperimentResult("permanent", [c4], {"permanent": (cols, rows)})


# --------------------------------------------------- gradient identity (5)

def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def gradient_identity(seed: int = 0, count: int = 100) -> ExperimentResult:
    rows = []
    fd_ok = rate_ok = 0
    h = 1e-6
    for i, g in enumerate(mo.child_seeds(seed, count)):
        k, m, n = int(g.integers(1, 6)), int(g.integers(1, 9)), int(g.integers(1, 9))
        A = g.standard_normal((k, m, n))
        op = Operator(A)
        P = g.standard_normal((k, m, n))
        P /= np.linalg.norm(P)
        H = gradient_direction(op)
        analytic = -4 * float(np.sum(H * P))
        fd = (delta(Operator(A + h * P)) - delta(Operator(A - h * P))) / (2 * h)
        # relative error; 1x1-type operators are always balanced and both sides vanish
        scale = max(abs(analytic), abs(fd), 1e-9 * (1.0 + op_size(op)) ** 2)
        e_fd = abs(fd - analytic) / scale
        qe, qf, cr = delta_rate_decomposition(op)
        e_rate = _rel(qe + qf + cr, float(np.sum(H * H)))
        fd_ok += e_fd <= 1e-5
        rate_ok += e_rate <= 1e-8
        rows.append((i, k, m, n, analytic, fd, e_fd, e_rate))
    c5 = CriterionResult(5, "gradient-flow identity and rate decomposition", fd_ok == count and rate_ok == count,
                         {"fd_ok": fd_ok, "rate_ok": rate_ok, "operators": count,
                          "max_fd_err": max(r[6] for r in rows), "max_rate_err": max(r[7] for r in rows)})
    cols = ("instance", "k", "m", "n", "analytic", "finite_difference", "fd_rel_err", "rate_rel_err")
    return ExperimentResult("gradient_identity", [c5], {"gradient_identity": (cols, rows)})


# ------------------------------------------------------------ reduction (7)

def reduction(seed: int = 0, count: int = 50) -> ExperimentResult:
    rows = []
    worst = 0.0
    gens = mo.child_seeds(seed, 2 * count)
    for i, g in enumerate(gens[:count]):
        m, n = int(g.integers(1, 7)), int(g.integers(1, 7))
        B = g.random((m, n)) * (g.random((m, n)) < 0.8) + 1e-3 * (g.random((m, n)) < 0.2)
        if B.sum() == 0:
            B[0, 0] = 1.0
        a, b = certify_matrix(B), certify_operator(matrix_to_operator(B))
        err = abs(a.sigma2 - b.sigma2) / max(a.sigma2, 1e-12 * a.sigma1)
        worst = max(worst, err)
        rows.append(("matrix", i, m, n, a.sigma2, b.sigma2, err))
    for i, g in enumerate(gens[count:]):
        d, n = int(g.integers(2, 5)), int(g.integers(2, 11))
        U = Frame(g.standard_normal((d, n)))
        a, b = certify_frame(U), certify_operator(frame_to_operator(U))
        err = abs(a.sigma2 - b.sigma2) / max(a.sigma2, 1e-12 * a.sigma1)
        worst = max(worst, err)
        rows.append(("frame", i, d, n, a.sigma2, b.sigma2, err))
    c7 = CriterionResult(7, "sigma2 agreement across reductions", worst <= 1e-8,
                         {"instances": 2 * count, "max_rel_err": worst})
    cols = ("kind", "instance", "rows", "cols", "sigma2_direct", "sigma2_operator", "rel_err")
    return ExperimentResult("reduction", [c7], {"reduction": (cols, rows)})


# -------------------------------------------------------------- cheeger (8)

def nearly_balanced_bipartite(rng, max_vertices: int = 16, eps_max: float = 0.5):
    """Random weighted bipartite graph pushed towards balance by a random number
    of row/column normalisations until eps <= eps_max."""
    while True:
        m = int(rng.integers(2, 9))
        n = int(rng.integers(2, max_vertices - m + 1)) if max_vertices - m >= 2 else 2
        if m + n > max_vertices:
            continue
        B = mo.random_bipartite_matrix(m, n, p=float(rng.uniform(0.3, 0.9)), seed=rng)
        for _ in range(int(rng.integers(0, 3))):
            B = B / B.sum(1, keepdims=True) * (B.sum() / m)
            B = B / B.sum(0, keepdims=True) * (B.sum() / n)
        for _ in range(50):
            if matrix_epsilon(B) <= eps_max:
                return B
            B = B / B.sum(1, keepdims=True) * (B.sum() / m)
            B = B / B.sum(0, keepdims=True) * (B.sum() / n)


def cheeger(seed: int = 0, count: int = 50) -> ExperimentResult:
    rows = []
    bad = 0
    for i, g in enumerate(mo.child_seeds(seed, count)):
        B = nearly_balanced_bipartite(g)
        phi, ok = cheeger_consistency(B)
        bad += not ok
        rep = certify_matrix(B)
        rows.append((i, B.shape[0], B.shape[1], rep.epsilon, phi, rep.sigma2,
                     (1 - phi * phi / 2 + 3 * rep.epsilon) * rep.s / math.sqrt(B.size), int(ok)))
    c8 = CriterionResult(8, "Cheeger cross-check", bad == 0, {"violations": bad, "instances": count,
                                                              "max_eps": max(r[3] for r in rows)})
    cols = ("instance", "m", "n", "epsilon", "phi", "sigma2", "bound", "ok")
    return ExperimentResult("cheeger", [c8], {"cheeger": (cols, rows)})


# -------------------------------------------------------------- moments (9)

def moments(seed: int = 0, scalar_samples: int = 10**6, frames: int = 10**5) -> ExperimentResult:
    gens = iter(mo.child_seeds(seed, 64))
    rows = []

    def check(label, est, exact):
        z = (est.mean - exact) / est.stderr if est.stderr > 0 else 0.0
        rows.append((label, exact, est.mean, est.stderr, z, int(abs(z) <= 3)))

    for q, d in [((1,), 5), ((2,), 5), ((1, 1), 5), ((4,), 3), ((2, 1), 4), ((3,), 2)]:
        check(f"xi{q}_d{d}", mo.mc_xi(q, d, scalar_samples, next(gens)), mo.xi_moment(q, d))
    for edges, d, label in [([(0, 1)], 4, "tree_edge"), ([(0, 1), (1, 2)], 3, "tree_path"),
                            ([(0, 1, 2)], 3, "tree_edge_mult2"), ([(0, 1), (1, 2), (1, 3)], 2, "tree_star")]:
        check(f"{label}_d{d}", mo.mc_tree_walk(edges, d, scalar_samples, next(gens)),
              mo.expected_tree_walk(edges, d))
    for k, d in [(3, 2), (4, 3), (3, 5)]:
        check(f"cycle_k{k}_d{d}", mo.mc_cycle_walk(k, d, scalar_samples, next(gens)),
              mo.expected_cycle_walk(k, d))
    est = mo.mc_trace_g4(6, 3, frames, next(gens))
    check("trace_g4_n6_d3", est, mo.expected_trace_g4(6, 3))
    grid_bad = sum(mo.expected_trace_g4(n, d) > mo.fourth_moment_upper_bound(n, d)
                   for n in range(4, 24) for d in range(2, 22))
    mc_ok = all(r[5] for r in rows)
    # the printed cycle multiplicity (d^2 - 1)/2, for the record
    c3 = [r for r in rows if r[0] == "cycle_k3_d2"][0]
    printed = float(mo.printed_cycle_walk_fraction(3, 2))
    c9 = CriterionResult(9, "moment closed forms vs Monte Carlo; fourth-moment bound", mc_ok and grid_bad == 0,
                         {"mc_checks_ok": sum(r[5] for r in rows), "mc_checks": len(rows),
                          "max_abs_z": max(abs(r[4]) for r in rows), "grid_violations": grid_bad,
                          "printed_cycle_k3_d2_z": (c3[2] - printed) / c3[3]})
    cols = ("quantity", "closed_form", "mc_mean", "mc_stderr", "z", "ok")
    return ExperimentResult("moments", [c9], {"moments": (cols, rows)})


# ----------------------------------------------------------- random gap (10)

def random_gap(seed: int = 0, count: int = 100, d: int = 8, n: int = 1024,
               lam_min: float = 0.3, eps_max: float = 0.15) -> ExperimentResult:
    rows = []
    for i, g in enumerate(mo.child_seeds(seed, count)):
        U = mo.random_unit_frame(n, d, g)
        rep = certify_frame(U)
        l2 = rep.sigma2 ** 2
        exceed = l2 > (1 - lam_min) ** 2 * n / d
        rows.append((i, rep.epsilon, rep.lam, l2, int(rep.lam >= lam_min and rep.epsilon <= eps_max), int(exceed)))
    good = sum(r[4] for r in rows)
    freq = sum(r[5] for r in rows) / count
    bound = mo.second_eigenvalue_tail_bound(n, d, lam_min)
    se = math.sqrt(freq * (1 - freq) / count)
    tail_ok = freq <= bound + 3 * se
    lam_ok = sum(r[2] >= lam_min for r in rows)
    eps_ok = sum(r[1] <= eps_max for r in rows)
    c10 = CriterionResult(10, f"random-frame gap at d={d}, n={n}", good >= math.ceil(0.95 * count) and tail_ok,
                          {"certified": good, "instances": count, "lambda_ok": lam_ok, "eps_ok": eps_ok,
                           "eps_median": float(np.median([r[1] for r in rows])),
                           "tail_freq": freq, "tail_bound": bound, "tail_ok": tail_ok})
    cols = ("instance", "epsilon", "lambda", "lambda2_G", "certified", "exceeds")
    return ExperimentResult("random_gap", [c10], {"random_gap": (cols, rows)})


# -------------------------------------------------- frames at d=16 (11, 12)

def frame_alpha(d: int, n: int) -> float:
    return 1.0 / (d + n)


@lru_cache(maxsize=4)
def _frame_runs(seed: int, count: int, d: int, n: int, eta: float):
    out = []
    for g in mo.child_seeds(seed, count):
        U = mo.random_unit_frame(n, d, g)
        U = Frame(U.vectors * math.sqrt(d / n))  # norms^2 = d/n, s0 = d
        rep = certify_frame(U)
        res = run_frame_fast_path(U, SolverConfig(alpha=frame_alpha(d, n), eta=eta, record_every=1000,
                                                  record_movement=True, max_iters=1_000_000))
        out.append((U, rep, res))
    return tuple(out)


def paulsen(seed: int = 0, count: int = 20, d: int = 16, n: int = 512, eta: float = 1e-6) -> ExperimentResult:
    rows, ok = [], 0
    for i, (U, rep, res) in enumerate(_frame_runs(seed, count, d, n, eta)):
        s0 = U.size
        bound = 2 * s0 * rep.epsilon ** 2 / rep.lam if rep.lam > 0 else float("inf")
        dist = float(np.sum((res.final.vectors - U.vectors) ** 2))
        good = res.converged and res.movement_sq <= bound
        ok += good
        rows.append((i, s0, rep.epsilon, rep.lam, dist, res.movement_sq, bound, int(good)))
    c11 = CriterionResult(11, "Paulsen total movement <= 2 s0 eps^2 / lambda", ok >= math.ceil(0.9 * count),
                          {"seeds_ok": ok, "seeds": count,
                           "max_movement_over_bound": max(r[5] / r[6] for r in rows)})
    cols = ("seed", "s0", "epsilon", "lambda", "distance", "movement_sq", "bound", "ok")
    return ExperimentResult("paulsen", [c11], {"paulsen": (cols, rows)})


def frame_angle_value(V) -> float:
    """max_{i != j} <v_i, v_j>^2 after normalising every vector."""
    W = V / np.linalg.norm(V, axis=0)
    G = (W.T @ W) ** 2
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def frame_angle(seed: int = 0, count: int = 20, d: int = 16, n: int = 512, eta: float = 1e-6) -> ExperimentResult:
    rows, ok = [], 0
    for i, (U, rep, res) in enumerate(_frame_runs(seed, count, d, n, eta)):
        tu, tv = frame_angle_value(U.vectors), frame_angle_value(res.final.vectors)
        bound = 2 * tu + 10 * (rep.epsilon * math.log(d) / rep.lam) ** 2 if rep.lam > 0 else float("inf")
        good = res.converged and tv <= bound
        ok += good
        rows.append((i, rep.epsilon, rep.lam, tu, tv, bound, int(good)))
    c12 = CriterionResult(12, "frame angle theta(V) <= 2 theta(U) + 10 (eps ln d / lambda)^2",
                          ok >= math.ceil(0.9 * count),
                          {"seeds_ok": ok, "seeds": count, "max_theta_V": max(r[4] for r in rows)})
    cols = ("seed", "epsilon", "lambda", "theta_U", "theta_V", "bound", "ok")
    return ExperimentResult("frame_angle", [c12], {"frame_angle": (cols, rows)})


# ---------------------------------------------------------- determinism (13)

def determinism(seed: int = 0) -> ExperimentResult:
    """Run every CLI command twice (same paths, fresh state) and compare output bytes."""
    import contextlib
    import io
    import shutil
    import tempfile
    from pathlib import Path

    from .cli import main

    def run_all(root: Path):
        inst = root / "inst"
        B, U = inst / "B.csv", inst / "U.json"
        cmds = [
            ("generate_matrix", ["generate", "gaussian-squared", "--n", "12", "--name", "B"], inst),
            ("generate_frame", ["generate", "unit-frame", "--n", "20", "--d", "3", "--name", "U"], inst),
            ("certify", ["certify", str(B)], None),
            ("certify_frame", ["certify", str(U)], None),
            ("scale", ["scale", str(B), "--eta", "1e-6", "--name", "B"], None),
            ("scale_frame", ["scale", str(U), "--eta", "1e-6", "--alpha", "0.02", "--name", "U"], None),
            ("capacity", ["capacity", str(B)], None),
            ("permanent-bound", ["permanent-bound", str(B)], None),
            ("experiment", ["experiment", "reduction", "--count", "5"], None),
            ("experiment_csv", ["--format", "csv", "experiment", "gradient_identity", "--count", "5"], None),
        ]
        out = {}
        for key, argv, where in cmds:
            buf = io.StringIO()
            with contextlib.redirect_stdout(buf):
                code = main(["--seed", str(seed), "--out-dir", str(where or root / key)] + argv)
            out[key] = (code, buf.getvalue().encode())
        for p in sorted(root.rglob("*")):
            if p.is_file():
                out[str(p.relative_to(root))] = p.read_bytes()
        return out

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "run"
        first = run_all(root)
        shutil.rmtree(root)
        second = run_all(root)
    diff = sorted(k for k in set(first) | set(second) if first.get(k) != second.get(k))
    c13 = CriterionResult(13, "CLI byte-reproducibility", not diff,
                          {"artifacts_compared": len(first), "differing": ",".join(diff) or "none"})
    return ExperimentResult("determinism", [c13])


EXPERIMENTS = {
    "convergence": convergence, "condition_number": condition_number, "capacity": capacity,
    "permanent": permanent, "gradient_identity": gradient_identity, "reduction": reduction,
    "cheeger": cheeger, "moments": moments, "random_gap": random_gap, "paulsen": paulsen,
    "frame_angle": frame_angle, "determinism": determinism,
}
