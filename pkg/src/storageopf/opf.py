"""DC-OPF models with batteries and the mapping from solver vectors to dispatch."""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .grid import DemandScenario, Network
from .lp import GE, LE, EQ, INF, LinearModel, Solution, Status, solve_lp, solve_mip

OBJ_TOL = 1e-6


class BuildError(ValueError):
    pass


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Lambda:
    """Per-unit penalties on total charging and total discharging."""

    lambda_c: float = 0.0
    lambda_d: float = 0.0

    def __post_init__(self):
        if self.lambda_c < 0 or self.lambda_d < 0:
            raise ValueError(f"penalties must be >= 0, got ({self.lambda_c}, {self.lambda_d})")

    @classmethod
    def uniform(cls, value: float) -> "Lambda":
        return cls(value, value)

    def as_tuple(self) -> tuple[float, float]:
        return (self.lambda_c, self.lambda_d)


ZERO = Lambda(0.0, 0.0)


class Variant(str, enum.Enum):
    BATTERY_MIP = "BatteryMIP"  # original model, no penalty
    REG_MIP = "RegBatteryMIP"
    REG_LP = "RegBatteryLP"  # u relaxed to [0, 1]
    NO_BATTERY = "NoBattery"  # charge and discharge pinned to 0


@dataclass(frozen=True)
class ModelVariant:
    tag: Variant
    include_ohms_law: bool = True

    @property
    def binary_u(self) -> bool:
        return self.tag in (Variant.BATTERY_MIP, Variant.REG_MIP)

    def penalty(self, lam: Lambda) -> Lambda:
        return ZERO if self.tag is Variant.BATTERY_MIP else lam


@dataclass
class IndexMap:
    """Column positions of each variable block, shaped (T, N), (T, L) or (T, G)."""

    network: Network
    demand: DemandScenario
    lam: Lambda  # penalty actually placed in the objective
    variant: ModelVariant
    blocks: dict[str, np.ndarray]
    balance_rows: np.ndarray  # (T, N)

    @property
    def T(self) -> int:
        return self.demand.horizon


@dataclass
class DispatchSolution:
    theta: np.ndarray
    flow: np.ndarray
    p_g: np.ndarray
    p_s: np.ndarray
    p_c: np.ndarray
    p_d: np.ndarray
    p_ls: np.ndarray
    p_ex: np.ndarray
    u: np.ndarray
    objective_c: float
    objective_reg: float
    lam: Lambda = ZERO
    p_gen: np.ndarray | None = None  # per generator, (T, G)
    labels: list[int] | None = None

    @property
    def horizon(self) -> int:
        return self.p_c.shape[0]

    def copy(self) -> "DispatchSolution":
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        return DispatchSolution(**kw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "bus", "p_g", "p_c", "p_d", "p_s", "p_ls", "p_ex", "u"])
        T, N = self.p_c.shape
        labels = self.labels or list(range(1, N + 1))
        for t in range(T):
            for i in range(N):
                w.writerow([t + 1, labels[i]] + [repr(float(a[t, i])) for a in
                           (self.p_g, self.p_c, self.p_d, self.p_s, self.p_ls, self.p_ex, self.u)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        out = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()
               if k not in ("lam",)}
        out["lambda"] = list(self.lam.as_tuple())
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "DispatchSolution":
        arrays = ("theta", "flow", "p_g", "p_s", "p_c", "p_d", "p_ls", "p_ex", "u", "p_gen")
        kw = {}
        for k, v in d.items():
            if k == "lambda":
                kw["lam"] = Lambda(*v)
            elif k in arrays and v is not None:
                kw[k] = np.asarray(v, dtype=float).reshape(len(v), -1) if len(v) else np.zeros((0, 0))
            else:
                kw[k] = v
        return cls(**kw)


def _check_inputs(network: Network, demand: DemandScenario) -> None:
    if demand.horizon < 1:
        raise BuildError("demand horizon must be >= 1")
    if demand.n_buses != network.n_buses:
        raise BuildError(f"demand has {demand.n_buses} columns, network has {network.n_buses} buses")


def build_opf(network: Network, demand: DemandScenario, lam: Lambda = ZERO,
              variant: ModelVariant = ModelVariant(Variant.REG_MIP)) -> tuple[LinearModel, IndexMap]:
    """Assemble the multi-period DC-OPF with batteries.

    Columns come in blocks theta, f, p_g, p_c, p_d, p_s, p_ls, p_ex, u; each
    block is time-major. Battery columns at buses without a battery are fixed
    to zero. Storage-recursion and rate rows are only written for battery
    buses since all their columns are fixed elsewhere.
    """
    _check_inputs(network, demand)
    uses_battery = variant.tag is not Variant.NO_BATTERY
    cfg = network.battery_config
    T, N, L, G = demand.horizon, network.n_buses, network.n_lines, len(network.generators)
    pen = variant.penalty(lam)
    m = LinearModel("min", name=f"opf_{variant.tag.value}")
    blocks: dict[str, np.ndarray] = {}
    battery = np.array([b.has_battery for b in network.buses])

    def block(name, shape, lb, ub, obj, binary=False):
        lb = np.broadcast_to(np.asarray(lb, dtype=float), shape).ravel()
        ub = np.broadcast_to(np.asarray(ub, dtype=float), shape).ravel()
        obj = np.broadcast_to(np.asarray(obj, dtype=float), shape).ravel()
        idx = np.empty(int(np.prod(shape)), dtype=np.int64)
        for k in range(idx.size):
            idx[k] = m.add_var(lb[k], ub[k], obj[k], binary=binary and ub[k] > lb[k])
        blocks[name] = idx.reshape(shape)

    if variant.include_ohms_law:
        ref = np.zeros(N, dtype=bool)
        for comp in network.components():
            ref[comp[0]] = True
        block("theta", (T, N), np.where(ref, 0.0, -INF), np.where(ref, 0.0, INF), 0.0)
    cap = np.array([ln.capacity for ln in network.lines])
    block("f", (T, L), -cap, cap, 0.0)
    block("p_g", (T, G), [g.g_min for g in network.generators],
          [g.g_max for g in network.generators], [g.cost_coeff for g in network.generators])
    on = battery & uses_battery
    block("p_c", (T, N), 0.0, np.where(on, cfg.ec_max, 0.0), pen.lambda_c)
    block("p_d", (T, N), 0.0, np.where(on, cfg.ed_max, 0.0), pen.lambda_d)
    block("p_s", (T, N), np.where(battery, cfg.e_min, 0.0), np.where(battery, cfg.e_max, 0.0), 0.0)
    block("p_ls", (T, N), 0.0, INF, 1.0)
    block("p_ex", (T, N), 0.0, INF, 1.0)
    block("u", (T, N), 0.0, np.where(battery, 1.0, 0.0), 0.0, binary=variant.binary_u)

    th, f, pg = blocks.get("theta"), blocks["f"], blocks["p_g"]
    pc, pd, ps, pls, pex, u = (blocks[k] for k in ("p_c", "p_d", "p_s", "p_ls", "p_ex", "u"))
    gens_at = [[k for k, g in enumerate(network.generators) if g.bus == i] for i in range(N)]
    out_l = [network.out_lines(i) for i in range(N)]
    in_l = [network.in_lines(i) for i in range(N)]
    balance = np.zeros((T, N), dtype=np.int64)
    for t in range(T):
        if th is not None:
            for k, ln in enumerate(network.lines):
                m.add_row({f[t, k]: 1.0, th[t, ln.from_bus]: -ln.susceptance,
                           th[t, ln.to_bus]: ln.susceptance}, EQ, 0.0, name=f"ohm[{t},{k}]")
        for i in range(N):
            row = {f[t, k]: 1.0 for k in out_l[i]}
            for k in in_l[i]:
                row[f[t, k]] = row.get(f[t, k], 0.0) - 1.0
            for k in gens_at[i]:
                row[pg[t, k]] = -1.0
            row.update({pc[t, i]: 1.0, pd[t, i]: -1.0, pls[t, i]: -1.0, pex[t, i]: 1.0})
            balance[t, i] = m.add_row(row, EQ, -demand.values[t, i], name=f"balance[{t},{i}]")
        for i in np.flatnonzero(battery):
            m.add_row({pc[t, i]: 1.0, u[t, i]: -cfg.ec_max}, LE, 0.0)
            if cfg.ec_min > 0:
                m.add_row({pc[t, i]: 1.0, u[t, i]: -cfg.ec_min}, GE, 0.0)
            m.add_row({pd[t, i]: 1.0, u[t, i]: cfg.ed_max}, LE, cfg.ed_max)
            if cfg.ed_min > 0:
                m.add_row({pd[t, i]: 1.0, u[t, i]: cfg.ed_min}, GE, cfg.ed_min)
            row = {ps[t, i]: 1.0, pc[t, i]: -cfg.eta_c, pd[t, i]: 1.0 / cfg.eta_d}
            if t == 0:
                m.add_row(row, EQ, cfg.e0, name=f"soc[{t},{i}]")
            else:
                row[ps[t - 1, i]] = -1.0
                m.add_row(row, EQ, 0.0, name=f"soc[{t},{i}]")
    imap = IndexMap(network, demand, pen, variant, blocks, balance)
    return m, imap


def extract_dispatch(solution: Solution, index_map: IndexMap, check: bool = True) -> DispatchSolution:
    """Slice the primal vector into dispatch matrices and recompute the costs."""
    if solution.status is not Status.OPTIMAL:
        raise ExtractionError(f"cannot extract dispatch from a {solution.status.value} solve")
    x = solution.primal
    B = index_map.blocks
    net = index_map.network
    T, N = index_map.T, net.n_buses

    def take(name):
        return x[B[name]]

    p_gen = take("p_g")
    p_g = np.zeros((T, N))
    for k, g in enumerate(net.generators):
        p_g[:, g.bus] += p_gen[:, k]
    theta = take("theta") if "theta" in B else np.zeros((T, N))
    d = DispatchSolution(theta=theta, flow=take("f"), p_g=p_g, p_s=take("p_s"), p_c=take("p_c"),
                         p_d=take("p_d"), p_ls=take("p_ls"), p_ex=take("p_ex"), u=take("u"),
                         objective_c=0.0, objective_reg=0.0, lam=index_map.lam, p_gen=p_gen,
                         labels=net.labels)
    d.objective_c = system_cost(d, net)
    d.objective_reg = d.objective_c + regularizer(d, index_map.lam)
    if check and abs(d.objective_reg - solution.objective) > OBJ_TOL * max(1.0, abs(solution.objective)):
        raise ExtractionError(f"recomputed objective {d.objective_reg} disagrees with solver "
                              f"objective {solution.objective}")
    return d


def system_cost(d: DispatchSolution, network: Network) -> float:
    """Generation cost plus unit-cost load shedding and excess power."""
    cost = np.array([g.cost_coeff for g in network.generators])
    gen = float((d.p_gen @ cost).sum()) if d.p_gen is not None and cost.size else 0.0
    return gen + float(d.p_ls.sum() + d.p_ex.sum())


def regularizer(d: DispatchSolution, lam: Lambda) -> float:
    return lam.lambda_c * float(d.p_c.sum()) + lam.lambda_d * float(d.p_d.sum())


def dispatch_to_vector(d: DispatchSolution, index_map: IndexMap) -> np.ndarray:
    """Inverse of :func:`extract_dispatch` for models built by :func:`build_opf`."""
    B = index_map.blocks
    n = 1 + max(int(v.max()) for v in B.values() if v.size)
    x = np.zeros(n)
    if "theta" in B:
        x[B["theta"]] = d.theta
    x[B["f"]] = d.flow
    if d.p_gen is None:
        raise ValueError("dispatch lacks per-generator output")
    x[B["p_g"]] = d.p_gen
    for k in ("p_c", "p_d", "p_s", "p_ls", "p_ex", "u"):
        x[B[k]] = getattr(d, k)
    return x


def balance_residual(d: DispatchSolution, network: Network, demand: DemandScenario) -> np.ndarray:
    """Left minus right side of the nodal balance, (T, N)."""
    M = network.incidence()
    net_out = d.flow @ M.T
    return net_out - (d.p_g - demand.values - d.p_c + d.p_d + d.p_ls - d.p_ex)


def soc_residual(d: DispatchSolution, network: Network) -> np.ndarray:
    cfg = network.battery_config
    prev = np.vstack([np.full((1, network.n_buses), cfg.e0), d.p_s[:-1]])
    prev[0, ~np.array([b.has_battery for b in network.buses])] = 0.0
    res = d.p_s - prev - cfg.eta_c * d.p_c + d.p_d / cfg.eta_d
    return res


def solve_opf(network: Network, demand: DemandScenario, lam: Lambda = ZERO,
              variant: ModelVariant = ModelVariant(Variant.REG_MIP), *, gap_tol: float = 1e-9,
              time_limit: float | None = None, tie_break: str | None = None
              ) -> tuple[Solution, DispatchSolution | None, IndexMap]:
    """Build, solve and extract in one call.

    ``tie_break="min_flow"`` re-solves with the objective held at its optimum
    and total absolute line flow minimized, so surplus and shortfall stay at
    the bus where they arise when the optimum is not unique.
    """
    model, imap = build_opf(network, demand, lam, variant)
    if variant.binary_u:
        sol = solve_mip(model, gap_tol=gap_tol, time_limit=time_limit)
    else:
        sol = solve_lp(model, time_limit=time_limit)
    if sol.status is not Status.OPTIMAL:
        return sol, None, imap
    if tie_break == "min_flow":
        sol = _min_flow(model, imap, sol)
    elif tie_break is not None:
        raise ValueError(f"unknown tie_break {tie_break!r}")
    return sol, extract_dispatch(sol, imap), imap


def _min_flow(model: LinearModel, imap: IndexMap, sol: Solution) -> Solution:
    m2 = model.copy()
    z = sol.objective
    obj = m2.objective_vector()
    nz = np.flatnonzero(obj)
    m2.add_row((nz, obj[nz]), LE, z + 1e-10 * max(1.0, abs(z)))
    m2.obj = [0.0] * m2.num_vars
    if imap.variant.binary_u:
        u = imap.blocks["u"].ravel()
        for j in u:
            v = round(sol.primal[j])
            m2.set_bounds(j, v, v)
        m2.binaries = set()
    for j in imap.blocks["f"].ravel():
        a = m2.add_var(0.0, INF, 1.0)
        m2.add_row({a: 1.0, int(j): -1.0}, GE, 0.0)
        m2.add_row({a: 1.0, int(j): 1.0}, GE, 0.0)
    s2 = solve_lp(m2)
    if s2.status is not Status.OPTIMAL:
        return sol
    x = s2.primal[: model.num_vars]
    return Solution(Status.OPTIMAL, model.evaluate(x), x, bound=sol.bound,
                    iterations=sol.iterations + s2.iterations, nodes=sol.nodes, history=sol.history)
