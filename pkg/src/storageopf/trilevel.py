"""Battery siting against line attacks: a min (placement) / max (attack) / min (dispatch) problem.

The dispatch level drops the angle equations and generation cost, so its
objective is shedding plus surplus (plus the charge/discharge penalty for the
penalized model). With the switch variable relaxed it is an LP; its dual,
with the flow-limit multipliers bounded by 2 and the attack products
linearized, turns the attacker's problem into one MILP. The outer problem is
solved by scenario expansion: the master picks a placement against every
attack found so far (each attack brings its own copy of the relaxed dispatch
model) and the attacker answers with its best attack against that placement.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np

from .grid import DemandScenario, Network
from .lp import EQ, GE, INF, LE, LinearModel, Status, relative_gap, solve_lp, solve_mip
from .opf import Lambda, ZERO
from .regularization import zero_gap_lambda_ok

BETA_BOUND = 2.0
DEFAULT_GAP = 0.005
MAX_ENUMERATION = 100_000


class TrilevelError(ValueError):
    pass


class Level3(str, enum.Enum):
    REG = "Reg"  # penalized, switch relaxed (exact by the zero-gap condition)
    EXACT_MIP = "ExactMIP"  # binary switch
    LP_RELAX = "LPRelax"  # binary switch relaxed, no penalty intended


@dataclass(frozen=True)
class Placement:
    x: tuple[int, ...]
    budget: int

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.x):
            raise TrilevelError("placement entries must be 0 or 1")
        if sum(self.x) > self.budget:
            raise TrilevelError(f"placement uses {sum(self.x)} batteries, budget is {self.budget}")

    @classmethod
    def none(cls, n: int, budget: int = 0) -> "Placement":
        return cls(tuple([0] * n), budget)

    @property
    def buses(self) -> list[int]:
        return [i for i, v in enumerate(self.x) if v]


@dataclass(frozen=True)
class Attack:
    y: tuple[int, ...]
    budget: int

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.y):
            raise TrilevelError("attack entries must be 0 or 1")
        if sum(self.y) > self.budget:
            raise TrilevelError(f"attack cuts {sum(self.y)} lines, budget is {self.budget}")

    @classmethod
    def none(cls, n: int, budget: int = 0) -> "Attack":
        return cls(tuple([0] * n), budget)

    @property
    def lines(self) -> list[int]:
        return [e for e, v in enumerate(self.y) if v]


@dataclass
class DualSolution:
    """Multipliers of the relaxed dispatch model, all shaped (T, N) or (T, L)."""

    alpha: np.ndarray  # balance
    beta_plus: np.ndarray  # flow upper limit
    beta_minus: np.ndarray  # flow lower limit
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray
    tau: np.ndarray  # storage recursion; the initial-state multiplier equals tau[0]
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    nu_plus: np.ndarray
    nu_minus: np.ndarray
    omega_plus: np.ndarray
    omega_minus: np.ndarray
    phi: np.ndarray
    objective: float

    @property
    def tau0(self) -> np.ndarray:
        return self.tau[0].copy()


@dataclass
class DualIndex:
    """Column blocks of a dualized dispatch model."""

    blocks: dict[str, np.ndarray]
    y: np.ndarray | None  # attack columns when the attack is a decision

    def unpack(self, values: np.ndarray, objective: float) -> DualSolution:
        b = self.blocks
        return DualSolution(objective=objective, **{k: values[v] for k, v in b.items()})


# -- dispatch level ----------------------------------------------------------------------

def _check_budgets(network: Network, x: Placement, y: Attack) -> None:
    if len(x.x) != network.n_buses:
        raise TrilevelError(f"placement has {len(x.x)} entries for {network.n_buses} buses")
    if len(y.y) != network.n_lines:
        raise TrilevelError(f"attack has {len(y.y)} entries for {network.n_lines} lines")


def _add_dispatch(model: LinearModel, network: Network, demand: DemandScenario, y, lam: Lambda,
                  binary_u: bool, x_vals=None, x_cols=None, tag: str = "") -> np.ndarray:
    """Append one dispatch copy to ``model``; returns the objective as a coefficient vector.

    Exactly one of ``x_vals`` (fixed placement) and ``x_cols`` (placement
    columns already in the model) must be given. Terms in the placement sit on
    the right-hand side when it is fixed and on the left otherwise.
    """
    cfg = network.battery_config
    T, N, L = demand.horizon, network.n_buses, network.n_lines
    D = demand.values
    gmin, gmax = network.g_min_by_bus(), network.g_max_by_bus()
    cap = np.array([ln.capacity for ln in network.lines], dtype=float)
    fixed = x_cols is None
    xv = np.asarray(x_vals, dtype=float) if fixed else None

    # a bus with no battery gets its storage columns pinned instead of left to the rows
    bat_ub = (lambda i: INF if xv[i] > 0 else 0.0) if fixed else (lambda i: INF)
    f = np.empty((T, L), dtype=np.int64)
    pg, pc, pd, ps, pls, pex, u = (np.empty((T, N), dtype=np.int64) for _ in range(7))
    for t in range(T):
        for e in range(L):
            lim = cap[e] * (1 - y[e])
            f[t, e] = model.add_var(-lim, lim, 0.0, f"{tag}f[{t},{e}]")
        for i in range(N):
            pg[t, i] = model.add_var(gmin[i], gmax[i], 0.0, f"{tag}pg[{t},{i}]")
            pc[t, i] = model.add_var(0.0, bat_ub(i), lam.lambda_c, f"{tag}pc[{t},{i}]")
            pd[t, i] = model.add_var(0.0, bat_ub(i), lam.lambda_d, f"{tag}pd[{t},{i}]")
            ps[t, i] = model.add_var(-INF if bat_ub(i) else 0.0, bat_ub(i), 0.0, f"{tag}ps[{t},{i}]")
            pls[t, i] = model.add_var(0.0, INF, 1.0, f"{tag}pls[{t},{i}]")
            pex[t, i] = model.add_var(0.0, INF, 1.0, f"{tag}pex[{t},{i}]")
            u[t, i] = model.add_var(0.0, min(1.0, bat_ub(i)), 0.0, f"{tag}u[{t},{i}]", binary=binary_u)

    def row(coeffs: dict, sense: str, rhs: float, i: int, x_coef: float) -> None:
        # row: coeffs + (x_coef * x_i moved to the rhs) sense rhs
        if fixed:
            model.add_row(coeffs, sense, rhs + x_coef * xv[i])
        else:
            coeffs = dict(coeffs)
            if x_coef:
                coeffs[int(x_cols[i])] = coeffs.get(int(x_cols[i]), 0.0) - x_coef
            model.add_row(coeffs, sense, rhs)

    for t in range(T):
        for i in range(N):
            c = {int(pg[t, i]): -1.0, int(pc[t, i]): 1.0, int(pd[t, i]): -1.0,
                 int(pls[t, i]): -1.0, int(pex[t, i]): 1.0}
            for e in network.out_lines(i):
                c[int(f[t, e])] = c.get(int(f[t, e]), 0.0) + 1.0
            for e in network.in_lines(i):
                c[int(f[t, e])] = c.get(int(f[t, e]), 0.0) - 1.0
            model.add_row(c, EQ, -float(D[t, i]))
        for i in range(N):
            if fixed and xv[i] == 0:
                continue
            soc = {int(ps[t, i]): 1.0, int(pc[t, i]): -cfg.eta_c, int(pd[t, i]): 1.0 / cfg.eta_d}
            if t > 0:
                soc[int(ps[t - 1, i])] = -1.0
            row(soc, EQ, 0.0, i, cfg.e0 if t == 0 else 0.0)
            row({int(ps[t, i]): 1.0}, GE, 0.0, i, cfg.e_min)
            row({int(ps[t, i]): 1.0}, LE, 0.0, i, cfg.e_max)
            model.add_row({int(pc[t, i]): 1.0, int(u[t, i]): -cfg.ec_min}, GE, 0.0)
            model.add_row({int(pc[t, i]): 1.0, int(u[t, i]): -cfg.ec_max}, LE, 0.0)
            row({int(pd[t, i]): 1.0, int(u[t, i]): cfg.ed_min}, GE, 0.0, i, cfg.ed_min)
            row({int(pd[t, i]): 1.0, int(u[t, i]): cfg.ed_max}, LE, 0.0, i, cfg.ed_max)
            row({int(u[t, i]): 1.0}, LE, 0.0, i, 1.0)

    obj = np.zeros(model.num_vars)
    obj[pls.ravel()] = 1.0
    obj[pex.ravel()] = 1.0
    obj[pc.ravel()] = lam.lambda_c
    obj[pd.ravel()] = lam.lambda_d
    return obj


def build_third_level(network: Network, demand: DemandScenario, x: Placement, y: Attack,
                      lam: Lambda = ZERO, variant: Level3 = Level3.REG) -> LinearModel:
    """Dispatch model for a fixed placement and attack (no angle equations, free generation)."""
    _check_budgets(network, x, y)
    m = LinearModel("min", f"dispatch_{variant.value}")
    _add_dispatch(m, network, demand, y.y, lam, variant == Level3.EXACT_MIP, x_vals=x.x)
    return m


def third_level_value(network: Network, demand: DemandScenario, x: Placement, y: Attack,
                      lam: Lambda = ZERO, variant: Level3 = Level3.REG) -> float:
    m = build_third_level(network, demand, x, y, lam, variant)
    s = solve_mip(m, gap_tol=1e-9) if variant == Level3.EXACT_MIP else solve_lp(m)
    if not s.optimal:
        raise RuntimeError(f"dispatch solve failed: {s.status.value}")
    return s.objective


# -- dual of the relaxed dispatch level ----------------------------------------------------

def dualize_third_level(network: Network, demand: DemandScenario, x: Placement, lam: Lambda,
                        y: Attack | None = None, k: int | None = None,
                        variant: Level3 = Level3.REG,
                        beta_bound: float | None = BETA_BOUND) -> tuple[LinearModel, DualIndex]:
    """Max-sense dual of the relaxed dispatch model.

    With ``y`` given the attack enters as constants and the dual is an LP.
    Without it, binary attack columns (at most ``k`` of them set, if given)
    multiply the flow-limit duals; those products are recorded as bilinear
    terms for :func:`mccormick_linearize`.
    """
    cfg = network.battery_config
    if variant == Level3.REG and not zero_gap_lambda_ok(lam, cfg.eta_c, cfg.eta_d):
        raise TrilevelError("penalty fails the zero-gap condition; the dual would not certify the MIP value")
    if variant == Level3.EXACT_MIP:
        raise TrilevelError("only the relaxed dispatch model has an LP dual")
    if len(x.x) != network.n_buses:
        raise TrilevelError("placement size does not match the network")
    if y is not None and len(y.y) != network.n_lines:
        raise TrilevelError("attack size does not match the network")
    T, N, L = demand.horizon, network.n_buses, network.n_lines
    D = demand.values
    xv = np.asarray(x.x, dtype=float)
    gmin, gmax = network.g_min_by_bus(), network.g_max_by_bus()
    cap = np.array([ln.capacity for ln in network.lines], dtype=float)
    bub = INF if beta_bound is None else beta_bound

    m = LinearModel("max", "dispatch_dual")
    B = {}

    def block(name, shape, lb, ub, obj):
        obj = np.broadcast_to(np.asarray(obj, dtype=float), shape)
        cols = np.empty(shape, dtype=np.int64)
        for idx in np.ndindex(*shape):
            cols[idx] = m.add_var(lb, ub, obj[idx], f"{name}{list(idx)}")
        B[name] = cols

    xt = np.broadcast_to(xv, (T, N))
    block("alpha", (T, N), -1.0, 1.0, -D)
    fixed_y = np.asarray(y.y, dtype=float) if y is not None else np.zeros(L)
    flow_obj = -np.broadcast_to(cap * (1 - fixed_y), (T, L))
    block("beta_plus", (T, L), 0.0, bub, flow_obj)
    block("beta_minus", (T, L), 0.0, bub, flow_obj)
    block("gamma_plus", (T, N), 0.0, INF, np.broadcast_to(gmin, (T, N)))
    block("gamma_minus", (T, N), 0.0, INF, -np.broadcast_to(gmax, (T, N)))
    tau_obj = np.zeros((T, N))
    tau_obj[0] = cfg.e0 * xv
    block("tau", (T, N), -INF, INF, tau_obj)
    block("mu_plus", (T, N), 0.0, INF, cfg.e_min * xt)
    block("mu_minus", (T, N), 0.0, INF, -cfg.e_max * xt)
    block("nu_plus", (T, N), 0.0, INF, 0.0)
    block("nu_minus", (T, N), 0.0, INF, 0.0)
    block("omega_plus", (T, N), 0.0, INF, cfg.ed_min * xt)
    block("omega_minus", (T, N), 0.0, INF, -cfg.ed_max * xt)
    block("phi", (T, N), 0.0, INF, -xt)

    y_cols = None
    if y is None:
        y_cols = np.array([m.add_var(0.0, 1.0, 0.0, f"y[{e}]", binary=True) for e in range(L)], dtype=np.int64)
        if k is not None:
            m.add_row((y_cols, np.ones(L)), LE, float(k), "attack_budget")
        for t in range(T):
            for e in range(L):
                m.add_bilinear(cap[e], int(y_cols[e]), int(B["beta_plus"][t, e]))
                m.add_bilinear(cap[e], int(y_cols[e]), int(B["beta_minus"][t, e]))

    a, tau = B["alpha"], B["tau"]
    for t in range(T):
        for e, ln in enumerate(network.lines):
            m.add_row({int(a[t, ln.from_bus]): 1.0, int(a[t, ln.to_bus]): -1.0,
                       int(B["beta_plus"][t, e]): -1.0, int(B["beta_minus"][t, e]): 1.0}, EQ, 0.0)
        for i in range(N):
            m.add_row({int(a[t, i]): -1.0, int(B["gamma_plus"][t, i]): 1.0,
                       int(B["gamma_minus"][t, i]): -1.0}, EQ, 0.0)
            m.add_row({int(a[t, i]): 1.0, int(tau[t, i]): -cfg.eta_c, int(B["nu_plus"][t, i]): 1.0,
                       int(B["nu_minus"][t, i]): -1.0}, LE, lam.lambda_c)
            m.add_row({int(a[t, i]): -1.0, int(tau[t, i]): 1.0 / cfg.eta_d, int(B["omega_plus"][t, i]): 1.0,
                       int(B["omega_minus"][t, i]): -1.0}, LE, lam.lambda_d)
            c = {int(tau[t, i]): 1.0, int(B["mu_plus"][t, i]): 1.0, int(B["mu_minus"][t, i]): -1.0}
            if t + 1 < T:
                c[int(tau[t + 1, i])] = -1.0
            m.add_row(c, EQ, 0.0)
            m.add_row({int(B["nu_plus"][t, i]): -cfg.ec_min, int(B["nu_minus"][t, i]): cfg.ec_max,
                       int(B["omega_plus"][t, i]): cfg.ed_min, int(B["omega_minus"][t, i]): -cfg.ed_max,
                       int(B["phi"][t, i]): -1.0}, LE, 0.0)
    return m, DualIndex(B, y_cols)


def mccormick_linearize(model: LinearModel) -> LinearModel:
    """Replace each binary-times-bounded product in the objective by an exact envelope column."""
    out = model.copy()
    out.bilinear = []
    for coef, yb, c in model.bilinear:
        if yb not in model.binaries:
            raise TrilevelError(f"column {yb} in a product is not binary")
        lo, hi = model.lb[c], model.ub[c]
        if lo != 0.0 or not math.isfinite(hi):
            raise TrilevelError(f"column {c} needs finite bounds [0, U] for an exact envelope")
        z = out.add_var(0.0, hi, coef, f"z[{yb},{c}]")
        out.add_row({z: 1.0, c: -1.0}, LE, 0.0)
        out.add_row({z: 1.0, yb: -hi}, LE, 0.0)
        out.add_row({z: 1.0, c: -1.0, yb: -hi}, GE, -hi)
    return out


def worst_attack(network: Network, demand: DemandScenario, x: Placement, k: int, lam: Lambda,
                 variant: Level3 = Level3.REG, time_limit: float | None = None,
                 gap_tol: float = 1e-9) -> tuple[Attack, float, Status]:
    """Attack of at most ``k`` lines that maximizes the relaxed dispatch cost under ``x``."""
    if k < 0:
        raise TrilevelError("attack budget must be >= 0")
    dual, idx = dualize_third_level(network, demand, x, lam, k=k, variant=variant)
    lin = mccormick_linearize(dual)
    s = solve_mip(lin, gap_tol=gap_tol, time_limit=time_limit)
    if s.primal is None:
        raise RuntimeError(f"attack problem failed: {s.status.value}")
    y = tuple(int(round(v)) for v in s.primal[idx.y])
    return Attack(y, k), s.objective, s.status


# -- scenario expansion ----------------------------------------------------------------------

@dataclass
class RunRecord:
    """One scenario-expansion run for one dispatch model."""

    variant: str
    x: tuple[int, ...]
    y: tuple[int, ...]
    upper: float
    lower: float
    ub_history: list[float] = field(default_factory=list)
    lb_history: list[float] = field(default_factory=list)
    iterations: int = 0
    seconds: float = 0.0
    status: str = "Optimal"  # Optimal | Stalled | TimeLimit | IterationLimit

    @property
    def gap(self) -> float:
        return relative_gap(self.upper, self.lower)


@dataclass
class TrilevelResult:
    network: str
    b: int
    k: int
    best_x: Placement
    worst_y: Attack
    ub_history: list[float]
    lb_history: list[float]
    z_reg_ub: float
    z_reg_lb: float
    z_lp_ub: float
    z_lp_lb: float
    solution_gap: float
    trilevel_gap_reg: float
    trilevel_gap_lp: float
    iterations: int
    wall_time: float
    reg_run: RunRecord | None = None
    lp_run: RunRecord | None = None
    oracle: float | None = None

    CSV_HEADER = ("network,b,k,z_reg_ub,z_reg_lb,z_lp_lb,solution_gap,trilevel_gap_reg,"
                  "trilevel_gap_lp,iters,seconds")

    def csv_row(self) -> str:
        vals = [self.network, self.b, self.k, f"{self.z_reg_ub:.6f}", f"{self.z_reg_lb:.6f}",
                f"{self.z_lp_lb:.6f}", f"{self.solution_gap:.6f}", f"{self.trilevel_gap_reg:.6f}",
                f"{self.trilevel_gap_lp:.6f}", self.iterations, f"{self.wall_time:.3f}"]
        return ",".join(str(v) for v in vals)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best_x"] = {"x": list(self.best_x.x), "budget": self.best_x.budget}
        d["worst_y"] = {"y": list(self.worst_y.y), "budget": self.worst_y.budget}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)


def _json_default(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    raise TypeError(type(v))


def _lex_weights(n: int) -> np.ndarray:
    # 2^(n-1-i) prefers zeros at low indices; only exact while the weights stay representable
    return np.array([2.0 ** (n - 1 - i) for i in range(n)]) / 2.0 ** max(n - 1, 0)


def _solve_master(network, demand, b, attacks, lam, time_limit):
    N = network.n_buses
    m = LinearModel("min", "placement_master")
    xc = np.array([m.add_var(0.0, 1.0, 0.0, f"x[{i}]", binary=True) for i in range(N)], dtype=np.int64)
    xi = m.add_var(0.0, INF, 1.0, "xi")
    m.add_row((xc, np.ones(N)), LE, float(b), "battery_budget")
    for n_att, y in enumerate(attacks):
        obj = _add_dispatch(m, network, demand, y, lam, False, x_cols=xc, tag=f"a{n_att}.")
        nz = np.flatnonzero(obj)
        m.add_row((np.r_[xi, nz], np.r_[1.0, -obj[nz]]), GE, 0.0)
    # copies only feed xi; the master minimizes xi alone
    m.obj = [0.0] * m.num_vars
    m.obj[xi] = 1.0
    s = solve_mip(m, gap_tol=1e-9, time_limit=time_limit)
    if s.primal is None:
        raise RuntimeError(f"placement master failed: {s.status.value}")
    bound = s.bound if math.isfinite(s.bound) else s.objective
    x = s.primal[xc]
    if N <= 40 and s.optimal:
        # among optimal placements take the lexicographically smallest
        tie = m.copy()
        tie.obj = [0.0] * tie.num_vars
        for w, j in zip(_lex_weights(N), xc):
            tie.obj[int(j)] = float(w)
        tie.add_row({xi: 1.0}, LE, s.objective + 1e-9 * max(1.0, abs(s.objective)))
        s2 = solve_mip(tie, gap_tol=0.0, time_limit=time_limit)
        if s2.optimal:
            x = s2.primal[xc]
    return tuple(int(round(v)) for v in x), s.objective, bound, s.status


def run_expansion(network: Network, demand: DemandScenario, b: int, k: int, lam: Lambda,
                  variant: Level3 = Level3.REG, gap: float = DEFAULT_GAP, max_iter: int = 1000,
                  time_limit: float | None = None) -> RunRecord:
    """Scenario expansion for one relaxed dispatch model; bounds are always valid."""
    if b < 0 or k < 0:
        raise TrilevelError("budgets must be >= 0")
    if variant == Level3.EXACT_MIP:
        raise TrilevelError("scenario expansion needs a relaxed dispatch model")
    start = time.perf_counter()
    deadline = None if time_limit is None else start + time_limit
    remaining = lambda: None if deadline is None else max(deadline - time.perf_counter(), 0.0)  # noqa: E731
    L = network.n_lines
    attacks: list[tuple[int, ...]] = [tuple([0] * L)]
    rec = RunRecord(variant.value, tuple([0] * network.n_buses), attacks[0], math.inf, -math.inf)
    status = "IterationLimit"
    for it in range(1, max_iter + 1):
        if deadline is not None and time.perf_counter() >= deadline:
            status = "TimeLimit"
            break
        x, _, bound, _ = _solve_master(network, demand, b, attacks, lam, remaining())
        rec.lower = max(rec.lower, bound)
        y, value, st = worst_attack(network, demand, Placement(x, b), k, lam, variant, remaining())
        if st == Status.OPTIMAL and value < rec.upper:
            rec.upper, rec.x, rec.y = value, x, y.y
        rec.lower = min(rec.lower, rec.upper)  # the master bound can overshoot by solver tolerance only
        rec.ub_history.append(rec.upper)
        rec.lb_history.append(rec.lower)
        rec.iterations = it
        if st != Status.OPTIMAL:
            status = st.value
            break
        if rec.gap <= gap:
            status = "Optimal"
            break
        if y.y in attacks:
            status = "Stalled"
            break
        attacks.append(y.y)
    rec.status = status
    rec.seconds = time.perf_counter() - start
    return rec


def _run_job(args):
    return run_expansion(*args)


def solve_trilevel(network: Network, demand: DemandScenario, b: int, k: int, lam: Lambda,
                   gap: float = DEFAULT_GAP, max_iter: int = 1000, time_limit: float | None = 600.0,
                   jobs: int = 1) -> TrilevelResult:
    """Penalized run for an upper bound and relaxed run for a lower bound on the true value."""
    cfg = network.battery_config
    if not zero_gap_lambda_ok(lam, cfg.eta_c, cfg.eta_d):
        raise TrilevelError("penalty fails the zero-gap condition")
    start = time.perf_counter()
    reg_args = (network, demand, b, k, lam, Level3.REG, gap, max_iter, time_limit)
    lp_args = (network, demand, b, k, ZERO, Level3.LP_RELAX, gap, max_iter, time_limit)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=2) as ex:
            reg, lp = ex.map(_run_job, [reg_args, lp_args])
    else:
        reg, lp = run_expansion(*reg_args), run_expansion(*lp_args)
    return TrilevelResult(
        network=network.name, b=b, k=k,
        best_x=Placement(reg.x, b), worst_y=Attack(reg.y, k),
        ub_history=reg.ub_history, lb_history=reg.lb_history,
        z_reg_ub=reg.upper, z_reg_lb=reg.lower, z_lp_ub=lp.upper, z_lp_lb=lp.lower,
        solution_gap=relative_gap(reg.upper, lp.lower),
        trilevel_gap_reg=reg.gap, trilevel_gap_lp=lp.gap,
        iterations=reg.iterations, wall_time=time.perf_counter() - start,
        reg_run=reg, lp_run=lp,
    )


# -- enumeration oracle ----------------------------------------------------------------------

def _subsets(n: int, budget: int):
    for r in range(min(budget, n) + 1):
        for comb_ in itertools.combinations(range(n), r):
            v = [0] * n
            for j in comb_:
                v[j] = 1
            yield tuple(v)


def enumeration_size(n_buses: int, n_lines: int, b: int, k: int) -> int:
    nx = sum(comb(n_buses, r) for r in range(min(b, n_buses) + 1))
    ny = sum(comb(n_lines, r) for r in range(min(k, n_lines) + 1))
    return nx * ny


def worst_attack_bruteforce(network: Network, demand: DemandScenario, x: Placement, k: int, lam: Lambda,
                            variant: Level3 = Level3.REG) -> tuple[Attack, float]:
    best, best_y = -math.inf, None
    for y in _subsets(network.n_lines, k):
        v = third_level_value(network, demand, x, Attack(y, k), lam, variant)
        if v > best + 1e-12:
            best, best_y = v, y
    return Attack(best_y, k), best


def brute_force_trilevel(network: Network, demand: DemandScenario, b: int, k: int,
                         lam: Lambda = ZERO, variant: Level3 = Level3.EXACT_MIP) -> tuple[float, Placement]:
    """Exact min over placements of max over attacks, by enumeration."""
    size = enumeration_size(network.n_buses, network.n_lines, b, k)
    if size > MAX_ENUMERATION:
        raise TrilevelError(f"{size} placement/attack pairs exceed the cap of {MAX_ENUMERATION}")
    best, best_x = math.inf, None
    for x in _subsets(network.n_buses, b):
        _, v = worst_attack_bruteforce(network, demand, Placement(x, b), k, lam, variant)
        if v < best - 1e-12:
            best, best_x = v, x
    return best, Placement(best_x, b)
