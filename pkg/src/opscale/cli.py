"""Command-line front end.

Exit codes: 0 ok, 1 bad input / usage, 2 no certified gap, 3 iteration budget
exhausted, 4 diverged or singular, 5 an experiment criterion failed.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from . import moments as mo
from .capacity import (CertificationError, capacity_bounds, matrix_log_capacity_exact,
                       permanent_lower_bound)
from .operator import Operator
from .reductions import Frame, frame_to_operator, matrix_to_operator
from .solvers import SolverConfig, run
from .spectral import certify_frame, certify_matrix, certify_operator

EXIT_OK, EXIT_INPUT, EXIT_NO_GAP, EXIT_BUDGET, EXIT_DIVERGED, EXIT_CRITERION = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _emit(args, d: dict):
    if args.format == "json":
        sys.stdout.write(io.dumps(d) + "\n")
    else:
        rows = [(k, v) for k, v in d.items() if not isinstance(v, (list, dict, np.ndarray))]
        sys.stdout.write("key,value\n" + "".join(f"{k},{v if isinstance(v, str) else io.fmt(v)}\n"
                                                for k, v in rows))


def _load(path):
    inst = io.load_instance(path)
    from .reductions import BLDatum
    if isinstance(inst, BLDatum):
        from .reductions import bl_datum_to_operator
        inst = bl_datum_to_operator(inst)
    return inst


def _certify(inst, seed):
    if isinstance(inst, Frame):
        return certify_frame(inst)
    if isinstance(inst, Operator):
        return certify_operator(inst, rng=np.random.default_rng(seed))
    return certify_matrix(inst)


def _as_operator(inst) -> Operator:
    if isinstance(inst, Frame):
        return frame_to_operator(inst)
    if isinstance(inst, Operator):
        return inst
    return matrix_to_operator(inst)


def cmd_certify(args) -> int:
    rep = _certify(_load(args.input), args.seed)
    _emit(args, rep.to_dict())
    return EXIT_OK if rep.gap_condition_holds else EXIT_NO_GAP


def cmd_scale(args) -> int:
    inst = _load(args.input)
    cfg = SolverConfig(alpha=args.alpha, c=args.c, max_iters=args.max_iters, eta=args.eta,
                       algorithm=args.algorithm, record_every=args.record_every, seed=args.seed)
    res = run(inst, cfg)
    out = Path(args.out_dir)
    name = args.name or Path(args.input).stem
    trace_path = out / f"{name}_trace.csv"
    io.write_atomic(trace_path, io.trace_csv(res.trace))
    d = io.result_to_dict(res, trace_path.name)
    io.write_atomic(out / f"{name}_result.json", io.dumps(d) + "\n")
    _emit(args, {k: v for k, v in d.items() if k not in ("L", "R", "final_instance")})
    if res.converged:
        return EXIT_OK
    return EXIT_BUDGET if res.status == "budget" else EXIT_DIVERGED


def cmd_capacity(args) -> int:
    inst = _load(args.input)
    rep = _certify(inst, args.seed)
    cb = capacity_bounds(_as_operator(inst), rep)
    d = cb.to_dict()
    if isinstance(inst, np.ndarray) and inst.shape[0] == inst.shape[1]:
        d["log_exact"] = matrix_log_capacity_exact(inst)
        if d["log_exact"] is not None:
            d["method"] += "; exact via doubly stochastic scaling"
    d["lambda"] = rep.lam
    d["epsilon"] = rep.epsilon
    _emit(args, d)
    return EXIT_OK


def cmd_permanent_bound(args) -> int:
    inst = _load(args.input)
    if not isinstance(inst, np.ndarray) or inst.ndim != 2 or inst.shape[0] != inst.shape[1]:
        raise UsageError("permanent-bound needs a square matrix instance")
    n = inst.shape[0]
    s = float(inst.sum())
    if not s > 0:
        raise UsageError("matrix has zero size")
    Bn = inst * (n / s)  # per(B) = (s/n)^n per(Bn)
    rep = certify_matrix(Bn)
    try:
        b = permanent_lower_bound(Bn, rep)
    except CertificationError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_NO_GAP
    log_b = math.log(b) if b > 0 else -math.inf
    _emit(args, {"type": "permanent_bound", "n": n, "s": s, "lambda": rep.lam, "epsilon": rep.epsilon,
                 "bound_normalized": b, "log_bound": log_b + n * math.log(s / n)})
    return EXIT_OK


GENERATORS = ("gaussian-squared", "unit-frame", "bipartite", "gapped-uniform")


def cmd_generate(args) -> int:
    rng = np.random.default_rng(args.seed)
    kind = args.kind
    if args.n < 1 or (args.d is not None and args.d < 1):
        raise UsageError("dimensions must be positive")
    if kind == "gaussian-squared":
        inst = mo.random_gaussian_squared_matrix(args.n, rng)
    elif kind == "unit-frame":
        if args.d is None:
            raise UsageError("unit-frame needs --d")
        inst = mo.random_unit_frame(args.n, args.d, rng)
    elif kind == "bipartite":
        inst = mo.random_bipartite_matrix(args.m or args.n, args.n, p=args.p, seed=rng)
    else:
        from .experiments import random_gapped_matrix
        inst, _ = random_gapped_matrix(args.n, rng)
    name = args.name or kind
    path = Path(args.out_dir) / (name + (".csv" if isinstance(inst, np.ndarray) else ".json"))
    io.save_instance(path, inst)
    _emit(args, {"type": "generated", "kind": kind, "path": str(path)})
    return EXIT_OK


def _param(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected key=value")
    k, v = text.split("=", 1)
    for conv in (int, float):
        try:
            return k, conv(v)
        except ValueError:
            pass
    return k, v


def cmd_experiment(args) -> int:
    from .experiments import EXPERIMENTS
    fn = EXPERIMENTS.get(args.name)
    if fn is None:
        raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}")
    kwargs = dict(args.param or [])
    if args.count is not None:
        kwargs["count"] = args.count
    try:
        res = fn(seed=args.seed, **kwargs)
    except TypeError as e:
        raise UsageError(str(e)) from e
    out = Path(args.out_dir)
    summary = res.summary()
    summary["seed"] = args.seed
    summary["csv"] = []
    for tname, (cols, rows) in res.tables.items():
        p = out / f"{args.name}_{tname}.csv"
        io.write_atomic(p, io.csv_text(cols, rows))
        summary["csv"].append(p.name)
    io.write_atomic(out / f"{args.name}_summary.json", io.dumps(summary) + "\n")
    if args.format == "json":
        _emit(args, summary)
    else:
        for c in res.criteria:
            sys.stdout.write(c.line() + "\n")
    return EXIT_OK if res.passed else EXIT_CRITERION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opscale", description="Operator scaling: certify, scale, bound.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", help="spectral-gap certificate (exit 2 when the gap condition fails)")
    c.add_argument("input")
    c.set_defaults(fn=cmd_certify)

    c = sub.add_parser("scale", help="run the scaling flow; writes <name>_result.json and <name>_trace.csv")
    c.add_argument("input")
    c.add_argument("--alpha", type=float, default=None, help="dimensionless step (default c/(m+n)^2)")
    c.add_argument("--c", type=float, default=1.0)
    c.add_argument("--eta", type=float, default=1e-6)
    c.add_argument("--max-iters", type=int, default=1_000_000)
    c.add_argument("--record-every", type=int, default=100)
    c.add_argument("--algorithm", choices=("gradient_descent", "alternating"), default="gradient_descent")
    c.add_argument("--name", default=None)
    c.set_defaults(fn=cmd_scale)

    c = sub.add_parser("capacity", help="capacity bounds (and exact value for square matrices)")
    c.add_argument("input")
    c.set_defaults(fn=cmd_capacity)

    c = sub.add_parser("permanent-bound", help="certified permanent lower bound for a square matrix")
    c.add_argument("input")
    c.set_defaults(fn=cmd_permanent_bound)

    c = sub.add_parser("generate", help="write a random instance")
    c.add_argument("kind", choices=GENERATORS)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--m", type=int, default=None)
    c.add_argument("--d", type=int, default=None)
    c.add_argument("--p", type=float, default=0.5)
    c.add_argument("--name", default=None)
    c.set_defaults(fn=cmd_generate)

    c = sub.add_parser("experiment", help="run a named experiment; exit 5 if any criterion fails")
    c.add_argument("name")
    c.add_argument("--count", type=int, default=None)
    c.add_argument("--param", type=_param, action="append", metavar="KEY=VALUE")
    c.set_defaults(fn=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return args.fn(args)
    except (io.ParseError, UsageError, ValueError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
