"""Instance / report serialisation.

Every float is written with 17 significant digits so that a write-read round
trip is exact; files are written atomically (temp file + rename).
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .operator import Operator
from .reductions import BLDatum, Frame
from .solvers import TRACE_COLUMNS, ConvergenceTrace, ScalingResult


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent: int | None = 1, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits and stable key order."""
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_, int, np.integer, float, np.floating)):
        return fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [json.dumps(str(k)) + ": " + dumps(v, indent, _level + 1) for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric rows stay on one line
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v, None) for v in obj) + "]"
        return "[" + pad + ("," + pad).join(dumps(v, indent, _level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    lines += [",".join(v if isinstance(v, str) else fmt(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def matrix_csv(B) -> str:
    return "\n".join(",".join(fmt(v) for v in row) for row in np.atleast_2d(B)) + "\n"


def trace_csv(trace: ConvergenceTrace) -> str:
    return csv_text(TRACE_COLUMNS, trace.rows)


def read_trace_csv(path) -> ConvergenceTrace:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    tr = ConvergenceTrace()
    for r in arr:
        tr.append(int(r[0]), *map(float, r[1:]))
    return tr


# ----------------------------------------------------------------- instances

class ParseError(ValueError):
    pass


def instance_to_dict(inst) -> dict:
    if isinstance(inst, (Operator, Frame, BLDatum)):
        return inst.to_dict()
    B = np.asarray(inst, dtype=float)
    return {"type": "matrix", "m": B.shape[0], "n": B.shape[1], "entries": B.tolist()}


def instance_from_dict(d: dict):
    kind = d.get("type")
    if kind is None:  # schemas without the discriminator
        kind = ("operator" if "matrices" in d else "frame" if "vectors" in d
                else "bl_datum" if "maps" in d else "matrix" if "entries" in d else None)
    if kind == "operator":
        return Operator.from_dict(d)
    if kind == "frame":
        return Frame.from_dict(d)
    if kind == "bl_datum":
        return BLDatum.from_dict(d)
    if kind == "matrix":
        return np.asarray(d["entries"], dtype=float).reshape(int(d["m"]), int(d["n"]))
    raise ParseError(f"unrecognised instance type {kind!r}")


def loads_instance(text: str):
    """Operator JSON -> Frame JSON -> BL datum JSON -> matrix CSV."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e}") from e
        try:
            return instance_from_dict(d)
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"invalid instance: {e}") from e
    try:
        rows = [[float(x) for x in line.split(",")] for line in text.strip().splitlines()
                if line.strip() and not line.lstrip().startswith("#")]
        B = np.array(rows, dtype=float)
    except ValueError as e:
        raise ParseError(f"neither instance JSON nor numeric CSV: {e}") from e
    if B.ndim != 2 or B.size == 0:
        raise ParseError("CSV matrix must be rectangular and non-empty")
    return B


def load_instance(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(str(e)) from e
    return loads_instance(text)


def save_instance(path, inst) -> Path:
    if isinstance(inst, np.ndarray):
        return write_atomic(path, matrix_csv(inst))
    return write_atomic(path, dumps(instance_to_dict(inst)) + "\n")


def result_to_dict(res: ScalingResult, trace_path: str | None = None) -> dict:
    b = res.balance
    out = {
        "type": "scaling_result", "source": res.source, "status": res.status,
        "converged": res.converged, "iterations": res.iterations, "alpha": res.alpha,
        "kappa_L": res.kappa_L, "kappa_R": res.kappa_R,
        "final_s": b.s, "final_delta": b.delta_total, "final_epsilon": b.epsilon,
        "movement_sq": res.movement_sq, "message": res.message,
        "L": np.asarray(res.L).tolist(), "R": np.asarray(res.R).tolist(),
        "trace_path": trace_path,
    }
    out["final_instance"] = instance_to_dict(res.final)
    return out
