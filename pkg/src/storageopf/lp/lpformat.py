"""CPLEX-style LP file writer.

Columns are written as ``x<j>`` and rows as ``c<i>`` regardless of any labels
on the model, so the text is stable across runs and free of characters some
readers reject.
"""
from __future__ import annotations

import math

import numpy as np

from .model import EQ, GE, LE, LinearModel, ModelError

_MAX_LINE = 200


def _num(v: float) -> str:
    s = f"{v:.17g}"
    return s


def _terms(idx, val) -> list[str]:
    out = []
    for j, a in zip(idx, val):
        if a == 0.0:
            continue
        sign = "-" if a < 0 else "+"
        out.append(f"{sign} {_num(abs(a))} x{int(j)}")
    return out


def _wrap(head: str, parts: list[str]) -> list[str]:
    lines = []
    cur = head
    for p in parts:
        if len(cur) + len(p) + 1 > _MAX_LINE:
            lines.append(cur)
            cur = "   "
        cur += " " + p
    lines.append(cur)
    return lines


def export_lp_format(model: LinearModel) -> str:
    """Serialize ``model`` to LP-file text (Minimize/Maximize, Subject To, Bounds, Binary, End)."""
    if model.bilinear:
        raise ModelError("LP export needs a linear model; linearize bilinear terms first")
    lines = [f"\\ {model.name}"]
    lines.append("Maximize" if model.sense == "max" else "Minimize")
    obj = np.asarray(model.obj, dtype=float)
    nz = np.flatnonzero(obj)
    parts = _terms(nz, obj[nz])
    if model.obj_constant != 0.0:
        c = model.obj_constant
        parts.append(f"{'-' if c < 0 else '+'} {_num(abs(c))}")
    lines += _wrap(" obj:", parts)
    lines.append("Subject To")
    ops = {LE: "<=", GE: ">=", EQ: "="}
    for i in range(model.num_rows):
        parts = _terms(model.row_idx[i], model.row_val[i])
        if not parts:
            parts = ["0 x0"] if model.num_vars else []
        parts.append(f"{ops[model.row_sense[i]]} {_num(model.rhs[i])}")
        lines += _wrap(f" c{i}:", parts)
    lines.append("Bounds")
    for j in range(model.num_vars):
        lo, hi = model.lb[j], model.ub[j]
        name = f"x{j}"
        if lo == hi:
            lines.append(f" {name} = {_num(lo)}")
        elif math.isinf(lo) and math.isinf(hi):
            lines.append(f" {name} free")
        elif math.isinf(lo):
            lines.append(f" -inf <= {name} <= {_num(hi)}")
        elif math.isinf(hi):
            lines.append(f" {name} >= {_num(lo)}")
        else:
            lines.append(f" {_num(lo)} <= {name} <= {_num(hi)}")
    if model.binaries:
        lines.append("Binary")
        for j in sorted(model.binaries):
            lines.append(f" x{j}")
    lines.append("End")
    return "\n".join(lines) + "\n"
