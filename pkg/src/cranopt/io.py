"""Cone-program JSON files.

Layout::

    {"m": 2, "n": 1,
     "A": {"rows": [0, 1], "cols": [0, 0], "vals": [-1.0, 1.0]},
     "b": [-1.0, 0.0], "c": [0.0],
     "cone": {"zero": 0, "nonneg": 2, "soc": []}}

Indices are 0-based. Python's float repr round-trips exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .cones import ConeSpec
from .solver import ConeProgram


def program_to_dict(prog: ConeProgram) -> dict:
    coo = prog.A.tocoo()
    return {
        "m": prog.m,
        "n": prog.n,
        "A": {"rows": coo.row.tolist(), "cols": coo.col.tolist(), "vals": [float(v) for v in coo.data]},
        "b": [float(v) for v in prog.b],
        "c": [float(v) for v in prog.c],
        "cone": prog.cone.to_dict(),
    }


def program_from_dict(d: dict) -> ConeProgram:
    try:
        m, n = int(d["m"]), int(d["n"])
        A = d["A"]
        rows, cols, vals = (np.asarray(A[k]) for k in ("rows", "cols", "vals"))
        cone = ConeSpec.from_dict(d["cone"])
        b, c = d["b"], d["c"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed cone program: {exc}") from exc
    if not (len(rows) == len(cols) == len(vals)):
        raise ValueError("A triplet arrays differ in length")
    if len(rows) and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
        raise ValueError("A index out of range")
    mat = sp.coo_matrix((vals.astype(float), (rows.astype(np.int64), cols.astype(np.int64))), shape=(m, n)).tocsc()
    mat.sum_duplicates()
    return ConeProgram(mat, b, c, cone)


def read_program(path) -> ConeProgram:
    with open(path, encoding="utf-8") as f:
        return program_from_dict(json.load(f))


def write_program(prog: ConeProgram, path) -> None:
    Path(path).write_text(json.dumps(program_to_dict(prog)), encoding="utf-8")


def outcome_to_dict(out) -> dict:
    def clean(x):
        return None if x is None else [float(v) for v in x]

    obj = out.objective
    return {
        "status": out.status.value,
        "objective": obj if math.isfinite(obj) else str(obj),
        "iterations": out.iterations,
        "residuals": {"primal": out.residuals.primal, "dual": out.residuals.dual, "gap": out.residuals.gap},
        "x": clean(out.x),
        "y": clean(out.y),
        "s": clean(out.s),
        "certificate": clean(out.certificate),
    }
