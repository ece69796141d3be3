"""Bounded-variable revised simplex.

Each row ``a_i x (sense) b_i`` is rewritten as ``a_i x - r_i = 0`` with a
logical column ``r_i`` whose bounds encode the sense. Every column then has
box bounds and the starting basis is the logical identity. Phase 1 minimizes
the sum of bound violations of basic columns; phase 2 is the usual primal
method. A dual simplex is used when a warm basis stays dual feasible after
bound changes (branch-and-bound children).

The basis inverse is kept as a sparse LU factor plus a product-form eta file
that is refactored periodically.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import GE, LE, LinearModel, ModelError, Solution, Status

FEAS_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 64
DEGENERATE_SWITCH = 50


class SingularBasis(RuntimeError):
    pass


@dataclass
class Basis:
    """Basic column indices plus, for nonbasic columns, which bound they sit on."""

    head: np.ndarray
    at_upper: np.ndarray


class _Factor:
    def __init__(self, A: sp.csc_matrix, head: np.ndarray):
        m = len(head)
        B = A[:, head].tocsc()
        try:
            self.lu = splu(B, permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError as exc:
            raise SingularBasis(str(exc)) from exc
        self.m = m
        self.etas: list[tuple[int, np.ndarray]] = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        x = self.lu.solve(np.asarray(v, dtype=float))
        for r, col in self.etas:
            xr = x[r] / col[r]
            x -= col * xr
            x[r] = xr
        return x

    def btran(self, c: np.ndarray) -> np.ndarray:
        y = np.array(c, dtype=float)
        for r, col in reversed(self.etas):
            yr = (y[r] - (col @ y - col[r] * y[r])) / col[r]
            y[r] = yr
        return self.lu.solve(y, trans="T")

    def update(self, r: int, alpha: np.ndarray) -> None:
        self.etas.append((r, alpha.copy()))


class _Engine:
    """Working state for one standard-form problem (min sense)."""

    def __init__(self, model: LinearModel):
        model.validate()
        if model.bilinear:
            raise ModelError("model still carries bilinear terms; linearize first")
        self.n = model.num_vars
        self.m = model.num_rows
        A = model.matrix().tocsc()
        logical = -sp.identity(self.m, format="csc")
        self.A = sp.hstack([A, logical], format="csc")
        self.AT = self.A.T.tocsr()
        c = model.objective_vector()
        self.flip = -1.0 if model.sense == "max" else 1.0
        self.c = np.concatenate([self.flip * c, np.zeros(self.m)])
        lb, ub = model.bounds()
        rlo = np.full(self.m, -math.inf)
        rhi = np.full(self.m, math.inf)
        rhs = np.asarray(model.rhs, dtype=float)
        for i, s in enumerate(model.row_sense):
            if s == LE:
                rhi[i] = rhs[i]
            elif s == GE:
                rlo[i] = rhs[i]
            else:
                rlo[i] = rhi[i] = rhs[i]
        self.lo0 = np.concatenate([lb, rlo])
        self.hi0 = np.concatenate([ub, rhi])

    def run(self, lo: np.ndarray, hi: np.ndarray, warm: Basis | None,
            max_iter: int, deadline: float | None) -> "_Run":
        r = _Run(self, lo, hi, max_iter, deadline)
        r.solve(warm)
        return r


class _Run:
    def __init__(self, eng: _Engine, lo, hi, max_iter, deadline):
        self.e = eng
        self.lo = lo
        self.hi = hi
        self.N = eng.n + eng.m
        self.max_iter = max_iter
        self.deadline = deadline
        self.iters = 0
        self.status = None
        self.x = np.zeros(self.N)
        self.y = np.zeros(eng.m)
        self.d = np.zeros(self.N)

    # -- basis management -------------------------------------------------
    def _set_basis(self, head: np.ndarray, at_upper: np.ndarray | None) -> None:
        lo, hi = self.lo, self.hi
        self.head = np.array(head, dtype=np.int64)
        self.is_basic = np.zeros(self.N, dtype=bool)
        self.is_basic[self.head] = True
        x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        if at_upper is not None:
            up = at_upper & np.isfinite(hi)
            x = np.where(up, hi, x)
        self.x = x
        self._refactor()

    def _refactor(self) -> None:
        self.F = _Factor(self.e.A, self.head)
        self._recompute_primal()

    def _recompute_primal(self) -> None:
        xn = np.where(self.is_basic, 0.0, self.x)
        rhs = -(self.e.A @ xn)
        self.x[self.head] = self.F.ftran(rhs)

    def _column(self, j: int) -> np.ndarray:
        col = np.zeros(self.e.m)
        A = self.e.A
        s, t = A.indptr[j], A.indptr[j + 1]
        col[A.indices[s:t]] = A.data[s:t]
        return col

    def _pivot(self, r: int, q: int, alpha: np.ndarray) -> None:
        leaving = self.head[r]
        self.is_basic[leaving] = False
        self.is_basic[q] = True
        self.head[r] = q
        if len(self.F.etas) >= REFACTOR_EVERY:
            self._refactor()
        else:
            self.F.update(r, alpha)

    def _out_of_time(self) -> bool:
        if self.iters >= self.max_iter:
            self.status = Status.ITERATION_LIMIT
            return True
        if self.deadline is not None and (self.iters & 15) == 0 and time.perf_counter() > self.deadline:
            self.status = Status.TIME_LIMIT
            return True
        return False

    def _infeasibility(self) -> np.ndarray:
        xb = self.x[self.head]
        below = self.lo[self.head] - xb
        above = xb - self.hi[self.head]
        return np.maximum(np.maximum(below, above), 0.0)

    def _duals(self, cb: np.ndarray) -> None:
        self.y = self.F.btran(cb)
        self.d = self._pricing_costs - self.e.AT @ self.y
        self.d[self.head] = 0.0

    # -- entering choice ---------------------------------------------------
    def _choose_entering(self, bland: bool) -> tuple[int, float]:
        x, lo, hi, d = self.x, self.lo, self.hi, self.d
        can_up = (~self.is_basic) & (x < hi - FEAS_TOL) & (d < -DUAL_TOL)
        can_dn = (~self.is_basic) & (x > lo + FEAS_TOL) & (d > DUAL_TOL)
        elig = can_up | can_dn
        if not elig.any():
            return -1, 0.0
        if bland:
            q = int(np.flatnonzero(elig)[0])
        else:
            score = np.where(elig, np.abs(d), -1.0)
            q = int(np.argmax(score))
        return q, (1.0 if can_up[q] else -1.0)

    # -- primal ratio test -----------------------------------------------
    def _ratio(self, alpha: np.ndarray, direction: float, phase1: bool, bland: bool):
        """Harris two-pass ratio test. Returns (row, step, leave_to_upper)."""
        g = -direction * alpha
        xb = self.x[self.head]
        lb = self.lo[self.head]
        ub = self.hi[self.head]
        dec = g < -PIVOT_TOL
        inc = g > PIVOT_TOL
        if phase1:
            below = xb < lb - FEAS_TOL
            above = xb > ub + FEAS_TOL
            # an infeasible basic only blocks once it reaches the violated bound
            dec_lim = np.where(above, ub, np.where(below, -math.inf, lb))
            inc_lim = np.where(below, lb, np.where(above, math.inf, ub))
        else:
            dec_lim, inc_lim = lb, ub
        with np.errstate(divide="ignore", invalid="ignore"):
            r_dec = np.where(dec, (xb - dec_lim) / -g, math.inf)
            r_inc = np.where(inc, (inc_lim - xb) / g, math.inf)
            rh_dec = np.where(dec, (xb - dec_lim + FEAS_TOL) / -g, math.inf)
            rh_inc = np.where(inc, (inc_lim - xb + FEAS_TOL) / g, math.inf)
        ratio = np.minimum(r_dec, r_inc)
        ratio = np.where(np.isnan(ratio), math.inf, ratio)
        if not np.isfinite(ratio).any():
            return -1, math.inf, False
        if bland:
            tmin = ratio.min()
            cand = np.flatnonzero(ratio <= tmin + 1e-12)
            r = int(cand[np.argmin(self.head[cand])])
        else:
            tmax = np.nanmin(np.minimum(rh_dec, rh_inc))
            cand = np.flatnonzero(ratio <= tmax)
            r = int(cand[np.argmax(np.abs(g[cand]))])
        step = max(float(ratio[r]), 0.0)
        return r, step, bool(r_inc[r] <= r_dec[r])

    # -- primal simplex --------------------------------------------------------
    def _primal(self, phase1: bool) -> bool:
        """Run primal iterations. Returns True when the phase finished normally."""
        degenerate = 0
        self._pricing_costs = self.e.c if not phase1 else np.zeros(self.N)
        while True:
            if self._out_of_time():
                return False
            if phase1:
                xb = self.x[self.head]
                cb = np.where(xb < self.lo[self.head] - FEAS_TOL, -1.0,
                              np.where(xb > self.hi[self.head] + FEAS_TOL, 1.0, 0.0))
                if not cb.any():
                    return True
            else:
                cb = self.e.c[self.head]
            self._duals(cb)
            bland = degenerate >= DEGENERATE_SWITCH
            q, direction = self._choose_entering(bland)
            if q < 0:
                if phase1:
                    self.status = Status.INFEASIBLE
                    return False
                return True
            alpha = self.F.ftran(self._column(q))
            r, step, to_upper = self._ratio(alpha, direction, phase1, bland)
            span = self.hi[q] - self.lo[q]
            self.iters += 1
            if span <= step and math.isfinite(span):
                # bound flip, basis unchanged
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
                self.x[self.head] -= direction * span * alpha
                degenerate = 0
                continue
            if r < 0:
                if phase1:
                    # cannot happen in exact arithmetic; refactor and retry
                    self._refactor()
                    degenerate += 1
                    if degenerate > 3 * DEGENERATE_SWITCH:
                        self.status = Status.INFEASIBLE
                        return False
                    continue
                self.status = Status.UNBOUNDED
                return False
            self.x[q] += direction * step
            self.x[self.head] -= direction * step * alpha
            leaving = self.head[r]
            if phase1:
                xl = self.x[leaving]
                # snap to whichever bound it reached
                if abs(xl - self.lo[leaving]) <= abs(xl - self.hi[leaving]):
                    self.x[leaving] = self.lo[leaving]
                else:
                    self.x[leaving] = self.hi[leaving]
            else:
                self.x[leaving] = self.hi[leaving] if to_upper else self.lo[leaving]
            if not np.isfinite(self.x[leaving]):
                self.x[leaving] = 0.0
            degenerate = degenerate + 1 if step <= 1e-12 else 0
            self._pivot(r, q, alpha)

    # -- dual simplex -------------------------------------------------------------
    def _dual_feasible(self) -> bool:
        self._pricing_costs = self.e.c
        self._duals(self.e.c[self.head])
        nb = ~self.is_basic
        x, lo, hi, d = self.x, self.lo, self.hi, self.d
        at_lo = nb & (x <= lo + FEAS_TOL) & (hi > lo)
        at_hi = nb & (x >= hi - FEAS_TOL) & (hi > lo)
        free = nb & ~np.isfinite(lo) & ~np.isfinite(hi)
        bad = (at_lo & ~at_hi & (d < -1e-7)) | (at_hi & ~at_lo & (d > 1e-7)) | (free & (np.abs(d) > 1e-7))
        return not bad.any()

    def _dual(self) -> bool:
        self._pricing_costs = self.e.c
        while True:
            if self._out_of_time():
                return False
            infeas = self._infeasibility()
            r = int(np.argmax(infeas))
            if infeas[r] <= FEAS_TOL:
                return True
            self._duals(self.e.c[self.head])
            p = self.head[r]
            xb = self.x[p]
            target = self.lo[p] if xb < self.lo[p] else self.hi[p]
            increase = xb < self.lo[p]
            e_r = np.zeros(self.e.m)
            e_r[r] = 1.0
            rho = self.F.btran(e_r)
            arow = self.e.AT @ rho
            nb = ~self.is_basic
            x, lo, hi, d = self.x, self.lo, self.hi, self.d
            can_up = nb & (x < hi - FEAS_TOL)
            can_dn = nb & (x > lo + FEAS_TOL)
            # d x_p / d x_j = -arow_j
            if increase:
                elig = (can_up & (arow < -PIVOT_TOL)) | (can_dn & (arow > PIVOT_TOL))
            else:
                elig = (can_up & (arow > PIVOT_TOL)) | (can_dn & (arow < -PIVOT_TOL))
            if not elig.any():
                self.status = Status.INFEASIBLE
                return False
            idx = np.flatnonzero(elig)
            ratios = np.abs(d[idx]) / np.abs(arow[idx])
            tmax = np.min((np.abs(d[idx]) + DUAL_TOL) / np.abs(arow[idx]))
            cand = idx[ratios <= tmax]
            q = int(cand[np.argmax(np.abs(arow[cand]))])
            alpha = self.F.ftran(self._column(q))
            if abs(alpha[r]) < PIVOT_TOL:
                self._refactor()
                self.iters += 1
                continue
            delta = (xb - target) / alpha[r]
            self.x[q] += delta
            self.x[self.head] -= delta * alpha
            self.x[p] = target
            self.iters += 1
            self._pivot(r, q, alpha)

    # -- driver ---------------------------------------------------------------------
    def solve(self, warm: Basis | None) -> None:
        m = self.e.m
        if warm is not None:
            try:
                self._set_basis(warm.head, warm.at_upper)
            except SingularBasis:
                warm = None
        if warm is None:
            self._set_basis(np.arange(self.e.n, self.e.n + m), None)
        if warm is not None and self._infeasibility().max(initial=0.0) > FEAS_TOL and self._dual_feasible():
            if not self._dual():
                if self.status is not None:
                    return
        if not self._primal(phase1=True):
            return
        if not self._primal(phase1=False):
            return
        # final clean-up: fresh factor, primal values and duals
        self._refactor()
        if self._infeasibility().max(initial=0.0) > 1e-7:
            # drift after refactor; one more pass
            if not self._primal(phase1=True) or not self._primal(phase1=False):
                return
        self._pricing_costs = self.e.c
        self._duals(self.e.c[self.head])
        self.status = Status.OPTIMAL

    def basis(self) -> Basis:
        at_upper = (~self.is_basic) & np.isfinite(self.hi) & (self.x >= self.hi - FEAS_TOL) & (self.hi > self.lo)
        return Basis(self.head.copy(), at_upper)


def _trivial(model: LinearModel, lo, hi, eng: _Engine) -> Solution:
    """No rows: each column sits at its cheapest bound."""
    c = eng.c[: eng.n]
    x = np.where(c > 0, lo, np.where(c < 0, hi, np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))))
    if not np.all(np.isfinite(x)):
        return Solution(Status.UNBOUNDED)
    obj = float(model.objective_vector() @ x) + model.obj_constant
    return Solution(Status.OPTIMAL, obj, x, dual=np.zeros(0),
                    reduced_costs=eng.flip * c, bound=obj)


def solve_lp(model: LinearModel, *, time_limit: float | None = None,
             max_iter: int | None = None, warm_start: Basis | None = None,
             lb: np.ndarray | None = None, ub: np.ndarray | None = None,
             _engine: _Engine | None = None) -> Solution:
    """Solve the continuous relaxation of ``model``.

    Binary markers are ignored (binaries are treated as [0, 1]). ``lb``/``ub``
    override the column bounds without touching the model. Duals follow the
    model's sense: for a minimization they are the rate of change of the
    optimum per unit increase of the row right-hand side.
    """
    eng = _engine or _Engine(model)
    lo = eng.lo0.copy()
    hi = eng.hi0.copy()
    if lb is not None:
        lo[: eng.n] = lb
    if ub is not None:
        hi[: eng.n] = ub
    if np.any(lo > hi + FEAS_TOL):
        return Solution(Status.INFEASIBLE)
    hi = np.maximum(hi, lo)
    if eng.m == 0:
        return _trivial(model, lo[: eng.n], hi[: eng.n], eng)
    if max_iter is None:
        max_iter = max(20000, 40 * (eng.n + eng.m))
    deadline = None if time_limit is None else time.perf_counter() + time_limit
    run = eng.run(lo, hi, warm_start, max_iter, deadline)
    if run.status is not Status.OPTIMAL:
        return Solution(run.status, iterations=run.iters)
    x = run.x[: eng.n].copy()
    obj = float(model.objective_vector() @ x) + model.obj_constant
    dual = eng.flip * run.y
    # logical column r_i has cost 0 and column -e_i, so its reduced cost is y_i
    rc = eng.flip * run.d[: eng.n]
    return Solution(Status.OPTIMAL, obj, x, dual=dual, reduced_costs=rc, bound=obj,
                    iterations=run.iters, basis=run.basis())


class LPSolver:
    """Repeated solves of one model under different column bounds.

    The standard-form matrix is assembled once; each ``solve`` call may
    override bounds and reuse a basis from an earlier call.
    """

    def __init__(self, model: LinearModel):
        self.model = model
        self._engine = _Engine(model)

    def solve(self, lb: np.ndarray | None = None, ub: np.ndarray | None = None,
              warm_start: Basis | None = None, time_limit: float | None = None) -> Solution:
        return solve_lp(self.model, lb=lb, ub=ub, warm_start=warm_start,
                        time_limit=time_limit, _engine=self._engine)
