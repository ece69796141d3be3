"""Sparse linear model container and solver result types."""
from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

INF = math.inf

LE, GE, EQ = "<=", ">=", "="
_SENSES = (LE, GE, EQ)


class ModelError(ValueError):
    """Raised for structurally invalid models."""


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"
    TIME_LIMIT = "TimeLimit"


class LinearModel:
    """Rows of sparse coefficients over bounded columns.

    Columns carry lower/upper bounds (``-inf``/``inf`` allowed) and an
    objective coefficient. Rows carry a sense (``<=``, ``>=``, ``=``) and a
    right-hand side. ``binaries`` marks columns that branch-and-bound must
    drive to {0, 1}; ``solve_lp`` ignores the marker.

    Bilinear objective terms ``coef * x[i] * x[j]`` can be recorded in
    ``bilinear`` for models that are linearized later; the LP/MIP engines
    refuse models that still carry any.

    Treat a model as frozen once handed to a solver. ``copy()`` gives an
    independent model to modify.
    """

    def __init__(self, sense: str = "min", name: str = "model"):
        if sense not in ("min", "max"):
            raise ModelError(f"sense must be 'min' or 'max', got {sense!r}")
        self.sense = sense
        self.name = name
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.obj: list[float] = []
        self.names: list[str | None] = []
        self.binaries: set[int] = set()
        self.obj_constant = 0.0
        self.row_idx: list[np.ndarray] = []
        self.row_val: list[np.ndarray] = []
        self.row_sense: list[str] = []
        self.rhs: list[float] = []
        self.row_names: list[str | None] = []
        self.bilinear: list[tuple[float, int, int]] = []

    # -- construction ---------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self.lb)

    @property
    def num_rows(self) -> int:
        return len(self.rhs)

    def add_var(self, lb: float = 0.0, ub: float = INF, obj: float = 0.0,
                name: str | None = None, binary: bool = False) -> int:
        j = len(self.lb)
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
            self.binaries.add(j)
        if lb > ub:
            raise ModelError(f"variable {name or j}: lb {lb} > ub {ub}")
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.obj.append(float(obj))
        self.names.append(name)
        return j

    def add_vars(self, n: int, lb: float | Sequence[float] = 0.0,
                 ub: float | Sequence[float] = INF,
                 obj: float | Sequence[float] = 0.0,
                 prefix: str | None = None, binary: bool = False) -> np.ndarray:
        lbs = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        ubs = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
        objs = np.broadcast_to(np.asarray(obj, dtype=float), (n,))
        out = np.empty(n, dtype=np.int64)
        for k in range(n):
            name = f"{prefix}[{k}]" if prefix else None
            out[k] = self.add_var(lbs[k], ubs[k], objs[k], name, binary)
        return out

    def add_row(self, coeffs: Mapping[int, float] | tuple[Iterable[int], Iterable[float]],
                sense: str, rhs: float, name: str | None = None) -> int:
        if sense not in _SENSES:
            raise ModelError(f"unknown row sense {sense!r}")
        if isinstance(coeffs, Mapping):
            idx = np.fromiter(coeffs.keys(), dtype=np.int64, count=len(coeffs))
            val = np.fromiter(coeffs.values(), dtype=float, count=len(coeffs))
        else:
            idx = np.asarray(list(coeffs[0]), dtype=np.int64)
            val = np.asarray(list(coeffs[1]), dtype=float)
        if idx.size and (idx.min() < 0 or idx.max() >= self.num_vars):
            raise ModelError(f"row {name or self.num_rows} references an unknown variable")
        if idx.size != np.unique(idx).size:
            # merge duplicate references
            uniq, inv = np.unique(idx, return_inverse=True)
            merged = np.zeros(uniq.size)
            np.add.at(merged, inv, val)
            idx, val = uniq, merged
        self.row_idx.append(idx)
        self.row_val.append(val)
        self.row_sense.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name)
        return self.num_rows - 1

    def add_bilinear(self, coef: float, binary_var: int, cont_var: int) -> None:
        self.bilinear.append((float(coef), int(binary_var), int(cont_var)))

    def set_bounds(self, j: int, lb: float | None = None, ub: float | None = None) -> None:
        if lb is not None:
            self.lb[j] = float(lb)
        if ub is not None:
            self.ub[j] = float(ub)

    def copy(self) -> "LinearModel":
        return copy.deepcopy(self)

    # -- views ----------------------------------------------------------
    def matrix(self) -> sp.csr_matrix:
        """Row-major constraint matrix (num_rows x num_vars)."""
        if not self.row_idx:
            return sp.csr_matrix((0, self.num_vars))
        indptr = np.zeros(self.num_rows + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in self.row_idx])
        return sp.csr_matrix(
            (np.concatenate(self.row_val), np.concatenate(self.row_idx), indptr),
            shape=(self.num_rows, self.num_vars),
        )

    def objective_vector(self) -> np.ndarray:
        return np.asarray(self.obj, dtype=float)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lb, dtype=float), np.asarray(self.ub, dtype=float)

    def evaluate(self, x: np.ndarray) -> float:
        """Objective value at ``x`` including bilinear terms and the constant."""
        x = np.asarray(x, dtype=float)
        val = float(self.objective_vector() @ x) + self.obj_constant
        for coef, i, j in self.bilinear:
            val += coef * x[i] * x[j]
        return val

    def row_activity(self, x: np.ndarray) -> np.ndarray:
        return self.matrix() @ np.asarray(x, dtype=float)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest bound or row violation at ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        lb, ub = self.bounds()
        viol = 0.0
        if x.size:
            viol = max(float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0)))
        if self.num_rows:
            act = self.row_activity(x)
            rhs = np.asarray(self.rhs)
            sense = np.asarray(self.row_sense)
            le = sense == LE
            ge = sense == GE
            eq = sense == EQ
            if le.any():
                viol = max(viol, float(np.max(act[le] - rhs[le], initial=0.0)))
            if ge.any():
                viol = max(viol, float(np.max(rhs[ge] - act[ge], initial=0.0)))
            if eq.any():
                viol = max(viol, float(np.max(np.abs(act[eq] - rhs[eq]), initial=0.0)))
        return viol

    def validate(self) -> None:
        lb, ub = self.bounds()
        if np.any(lb > ub):
            bad = int(np.flatnonzero(lb > ub)[0])
            raise ModelError(f"variable {self.names[bad] or bad} has lb > ub")
        for j in self.binaries:
            if lb[j] < 0.0 or ub[j] > 1.0:
                raise ModelError(f"binary variable {self.names[j] or j} has bounds outside [0, 1]")
        for _, i, j in self.bilinear:
            if not (0 <= i < self.num_vars and 0 <= j < self.num_vars):
                raise ModelError("bilinear term references an unknown variable")

    def __repr__(self) -> str:
        return (f"LinearModel({self.name!r}, {self.sense}, vars={self.num_vars}, "
                f"rows={self.num_rows}, binaries={len(self.binaries)})")


@dataclass
class Solution:
    status: Status
    objective: float = math.nan
    primal: np.ndarray | None = None  # None when no feasible point is known
    dual: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    bound: float = math.nan
    iterations: int = 0
    nodes: int = 0
    history: list[tuple[float, float]] = field(default_factory=list)
    # final simplex basis, reusable as a warm start (LP only)
    basis: object | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def gap(self) -> float:
        return relative_gap(self.objective, self.bound)


def relative_gap(upper: float, lower: float) -> float:
    """``|upper - lower| / |upper|`` with an absolute floor for zero optima."""
    if not (math.isfinite(upper) and math.isfinite(lower)):
        return math.inf
    diff = abs(upper - lower)
    if diff <= 1e-9:
        return 0.0
    return diff / max(abs(upper), 1e-9)
