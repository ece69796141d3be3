"""Penalty selection, LP tightness checks and structural checks for the penalized battery model."""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _repair
from .grid import DemandScenario, Network
from .lp import LE, LPSolver, Status, solve_lp, solve_mip
from .opf import (OBJ_TOL, DispatchSolution, Lambda, ModelVariant, Variant, ZERO, balance_residual,
                  build_opf, extract_dispatch, regularizer, soc_residual, solve_opf, system_cost)

PRODUCT_TOL = 1e-9
FEAS_TOL = 1e-6
MAX_PATTERNS = 2 ** 20


class PreconditionError(ValueError):
    pass


class EnumerationTooLarge(ValueError):
    pass


@dataclass
class GapReport:
    z_mip: float
    z_lp: float
    abs_gap: float
    rel_gap: float
    zero_gap_condition_met: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class StructureReport:
    max_pc_pls: float
    max_pd_pex: float
    condition_strict: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class StructureCheck:
    """Outcome of :func:`verify_structure`."""

    returned: StructureReport  # products on the solver's optimum
    final: StructureReport  # after the exchange repair, if one was needed
    repaired: bool
    objective: float
    repaired_objective: float
    holds: bool  # a tight optimum satisfying the product bounds exists
    solver_suboptimal: bool  # the repair found a strictly better point

    def to_json(self) -> str:
        out = asdict(self)
        return json.dumps(out)


@dataclass
class ExactnessRecord:
    delta: float
    min_lambda_g: float
    exact: bool
    z_ori: float
    second_best: float
    optimal_patterns: list[tuple[int, ...]] = field(default_factory=list)
    reg_u_in_optimal: bool | None = None
    patterns_checked: int = 0


# -- closed forms ----------------------------------------------------------------

def zero_gap_lambda_ok(lam: Lambda, eta_c: float, eta_d: float, tol: float = 1e-12) -> bool:
    """Penalty large enough that relaxing the charge/discharge switch loses nothing."""
    rt = eta_c * eta_d
    return lam.lambda_c + rt * lam.lambda_d >= 1.0 - rt - tol


def strict_condition(lam: Lambda, eta_c: float, eta_d: float, tol: float = 1e-12) -> bool:
    rt = eta_c * eta_d
    return lam.lambda_c + rt * lam.lambda_d > 1.0 - rt + tol


def best_worst_case_lambda(ec_max: float, ed_max: float, eta_c: float, eta_d: float) -> Lambda:
    """Smallest zero-gap penalty with equal worst-case charge and discharge cost."""
    if ec_max <= 0 or ed_max <= 0:
        raise ValueError("rate limits must be positive")
    rt = eta_c * eta_d
    den = ed_max + rt * ec_max
    return Lambda((ed_max - rt * ed_max) / den, (ec_max - rt * ec_max) / den)


def worst_case_gap_bound(horizon: int, n_batteries: int, ec_max: float, ed_max: float, lam: Lambda) -> float:
    """Upper bound on how much system cost the penalized optimum can give up."""
    if horizon < 1 or n_batteries < 1:
        raise ValueError("horizon and battery count must be >= 1")
    return horizon * n_batteries * max(ec_max * lam.lambda_c, ed_max * lam.lambda_d)


# -- integralization ----------------------------------------------------------------

def dispatch_violation(d: DispatchSolution, network: Network, demand: DemandScenario) -> float:
    """Largest violation of balance, storage recursion and variable bounds."""
    cfg = network.battery_config
    bat = np.array([b.has_battery for b in network.buses])
    viol = float(np.abs(balance_residual(d, network, demand)).max(initial=0.0))
    viol = max(viol, float(np.abs(soc_residual(d, network)[:, bat]).max(initial=0.0)))
    for a in (d.p_c, d.p_d, d.p_ls, d.p_ex, d.u):
        viol = max(viol, float(-a.min(initial=0.0)))
    viol = max(viol, float(np.abs(d.p_c[:, ~bat]).max(initial=0.0)),
               float(np.abs(d.p_d[:, ~bat]).max(initial=0.0)))
    if bat.any():
        ps = d.p_s[:, bat]
        u = d.u[:, bat]
        viol = max(viol, float((cfg.e_min - ps).max(initial=0.0)), float((ps - cfg.e_max).max(initial=0.0)),
                   float((d.p_c[:, bat] - cfg.ec_max * u).max(initial=0.0)),
                   float((cfg.ec_min * u - d.p_c[:, bat]).max(initial=0.0)),
                   float((d.p_d[:, bat] - cfg.ed_max * (1 - u)).max(initial=0.0)),
                   float((cfg.ed_min * (1 - u) - d.p_d[:, bat]).max(initial=0.0)),
                   float((u - 1).max(initial=0.0)))
    cap = np.array([ln.capacity for ln in network.lines])
    if cap.size:
        viol = max(viol, float((np.abs(d.flow) - cap).max(initial=0.0)))
    if d.p_gen is not None and network.generators:
        gmin = np.array([g.g_min for g in network.generators])
        gmax = np.array([g.g_max for g in network.generators])
        viol = max(viol, float((gmin - d.p_gen).max(initial=0.0)), float((d.p_gen - gmax).max(initial=0.0)))
    return viol


def integralize(dispatch: DispatchSolution, network: Network, demand: DemandScenario | None = None,
                eta_c: float | None = None, eta_d: float | None = None) -> DispatchSolution:
    """Turn a relaxed dispatch into one that never charges and discharges together.

    Net storage flow is kept, so angles, flows, generation and state of charge
    are untouched; the cancelled part of the round trip is moved into the
    shedding/surplus slacks. With zero minimum rates and a zero-gap penalty
    the penalized cost does not increase.
    """
    cfg = network.battery_config
    if cfg.ec_min > 0 or cfg.ed_min > 0:
        raise PreconditionError("integralization needs zero minimum charge and discharge rates")
    eta_c = cfg.eta_c if eta_c is None else eta_c
    eta_d = cfg.eta_d if eta_d is None else eta_d
    if demand is not None:
        v = dispatch_violation(dispatch, network, demand)
        if v > FEAS_TOL:
            raise ValueError(f"input dispatch is infeasible (violation {v:.3g})")
    rt = eta_c * eta_d
    pc, pd, pls, pex = dispatch.p_c, dispatch.p_d, dispatch.p_ls, dispatch.p_ex
    new_pc = np.maximum(pc - pd / rt, 0.0)
    new_pd = np.maximum(pd - rt * pc, 0.0)
    net = -pc + pd + pls - pex + new_pc - new_pd
    out = dispatch.copy()
    out.p_c = new_pc
    out.p_d = new_pd
    out.p_ls = np.maximum(net, 0.0)
    out.p_ex = np.maximum(-net, 0.0)
    out.u = (new_pc > 0).astype(float)
    out.objective_c = system_cost(out, network)
    out.objective_reg = out.objective_c + regularizer(out, dispatch.lam)
    return out


# -- structure ---------------------------------------------------------------------

def check_structure(dispatch: DispatchSolution, lam: Lambda, eta_c: float, eta_d: float) -> StructureReport:
    return StructureReport(
        max_pc_pls=float(max((dispatch.p_c * dispatch.p_ls).max(initial=0.0), 0.0)) + 0.0,
        max_pd_pex=float(max((dispatch.p_d * dispatch.p_ex).max(initial=0.0), 0.0)) + 0.0,
        condition_strict=strict_condition(lam, eta_c, eta_d),
    )


def verify_structure(network: Network, demand: DemandScenario, lam: Lambda,
                     include_ohms_law: bool = True, dispatch: DispatchSolution | None = None) -> StructureCheck:
    """Check the product bounds on a penalized MIP optimum.

    When the returned optimum violates a bound, the exchange repair is applied;
    if the repaired point is feasible, no more expensive and satisfies the
    bounds, the violation was an alternate optimum and the property holds.
    A strictly cheaper repaired point means the solve was not optimal.
    """
    cfg = network.battery_config
    if cfg.ec_min > 0 or cfg.ed_min > 0:
        raise PreconditionError("structure results need zero minimum rates")
    if dispatch is None:
        sol, dispatch, _ = solve_opf(network, demand, lam, ModelVariant(Variant.REG_MIP, include_ohms_law),
                                     gap_tol=1e-9)
        if dispatch is None:
            raise RuntimeError(f"penalized model solve failed: {sol.status.value}")
    first = check_structure(dispatch, lam, cfg.eta_c, cfg.eta_d)
    need_d = first.condition_strict and first.max_pd_pex > PRODUCT_TOL
    if first.max_pc_pls <= PRODUCT_TOL and not need_d:
        return StructureCheck(first, first, False, dispatch.objective_reg, dispatch.objective_reg, True, False)
    fixed = _repair.repair(dispatch, cfg, network.battery_buses, fix_surplus=first.condition_strict)
    fixed.objective_c = system_cost(fixed, network)
    fixed.objective_reg = fixed.objective_c + regularizer(fixed, lam)
    final = check_structure(fixed, lam, cfg.eta_c, cfg.eta_d)
    feasible = dispatch_violation(fixed, network, demand) <= FEAS_TOL
    not_worse = fixed.objective_reg <= dispatch.objective_reg + OBJ_TOL
    ok_products = final.max_pc_pls <= PRODUCT_TOL and (not final.condition_strict or final.max_pd_pex <= PRODUCT_TOL)
    better = fixed.objective_reg < dispatch.objective_reg - OBJ_TOL
    return StructureCheck(first, final, True, dispatch.objective_reg, fixed.objective_reg,
                          feasible and not_worse and ok_products, better and feasible)


# -- gap and equivalence checks ------------------------------------------------------------

def gap_report(network: Network, demand: DemandScenario, lam: Lambda, include_ohms_law: bool = True,
               gap_tol: float = 1e-9) -> GapReport:
    mip, _ = build_opf(network, demand, lam, ModelVariant(Variant.REG_MIP, include_ohms_law))
    lp, _ = build_opf(network, demand, lam, ModelVariant(Variant.REG_LP, include_ohms_law))
    s_mip = solve_mip(mip, gap_tol=gap_tol)
    s_lp = solve_lp(lp)
    if not (s_mip.optimal and s_lp.optimal):
        raise RuntimeError(f"solve failed: MIP {s_mip.status.value}, LP {s_lp.status.value}")
    cfg = network.battery_config
    gap = s_mip.objective - s_lp.objective
    return GapReport(s_mip.objective, s_lp.objective, gap, gap / max(abs(s_mip.objective), 1e-9),
                     zero_gap_lambda_ok(lam, cfg.eta_c, cfg.eta_d) and cfg.ec_min == 0 and cfg.ed_min == 0)


def no_battery_values(network: Network, demand: DemandScenario, lam: Lambda = Lambda(1.0, 1.0),
                      include_ohms_law: bool = True) -> tuple[float, float]:
    s_reg, _, _ = solve_opf(network, demand, lam, ModelVariant(Variant.REG_MIP, include_ohms_law))
    s_nb, _, _ = solve_opf(network, demand, lam, ModelVariant(Variant.NO_BATTERY, include_ohms_law))
    if not (s_reg.optimal and s_nb.optimal):
        raise RuntimeError(f"solve failed: {s_reg.status.value}, {s_nb.status.value}")
    return s_reg.objective, s_nb.objective


def no_battery_equivalence(network: Network, demand: DemandScenario, lam: Lambda = Lambda(1.0, 1.0),
                           include_ohms_law: bool = True) -> bool:
    """With penalties of at least one per unit, the battery never pays for itself."""
    z_reg, z_nb = no_battery_values(network, demand, lam, include_ohms_law)
    return abs(z_reg - z_nb) <= OBJ_TOL


def check_exactness_bruteforce(network: Network, demand: DemandScenario, lam: Lambda,
                               include_ohms_law: bool = True, tol: float = OBJ_TOL) -> ExactnessRecord:
    """Enumerate every charge/discharge pattern to test the exactness certificate.

    Computes the original optimum, the gap ``delta`` to the best pattern that
    is not optimal, and the smallest penalty cost over original optima. The
    certificate holds when that penalty cost is below ``delta``; in that case
    the penalized MIP's pattern is also checked to be among the optimal ones.
    """
    bat = network.battery_buses
    T = demand.horizon
    K = T * len(bat)
    if 2 ** K > MAX_PATTERNS:
        raise EnumerationTooLarge(f"{2 ** K} patterns exceed the cap of {MAX_PATTERNS}")
    model, imap = build_opf(network, demand, ZERO, ModelVariant(Variant.REG_LP, include_ohms_law))
    solver = LPSolver(model)
    lb0, ub0 = model.bounds()
    ucols = np.array([imap.blocks["u"][t, i] for t in range(T) for i in bat], dtype=np.int64)

    values = []
    basis = None
    for pattern in itertools.product((0.0, 1.0), repeat=K):
        lb, ub = lb0.copy(), ub0.copy()
        lb[ucols] = ub[ucols] = pattern
        s = solver.solve(lb, ub, warm_start=basis)
        if s.optimal:
            basis = s.basis
            values.append(s.objective)
        else:
            values.append(np.inf)
    values = np.array(values)
    patterns = list(itertools.product((0, 1), repeat=K))
    z_ori = float(values.min())
    if not np.isfinite(z_ori):
        raise RuntimeError("no charge/discharge pattern is feasible")
    opt = values <= z_ori + tol
    rest = values[~opt]
    second = float(rest.min()) if rest.size else np.inf
    delta = abs(second - z_ori)

    # min penalty over optimal dispatches: keep cost at the optimum, minimize penalty
    pen_model = model.copy()
    obj = pen_model.objective_vector()
    nz = np.flatnonzero(obj)
    pen_model.add_row((nz, obj[nz]), LE, z_ori + 1e-9 * max(1.0, abs(z_ori)))
    pen_obj = np.zeros(pen_model.num_vars)
    pen_obj[imap.blocks["p_c"].ravel()] = lam.lambda_c
    pen_obj[imap.blocks["p_d"].ravel()] = lam.lambda_d
    pen_model.obj = pen_obj.tolist()
    pen_solver = LPSolver(pen_model)
    plb0, pub0 = pen_model.bounds()
    min_g = np.inf
    for k in np.flatnonzero(opt):
        lb, ub = plb0.copy(), pub0.copy()
        lb[ucols] = ub[ucols] = patterns[k]
        s = pen_solver.solve(lb, ub)
        if s.optimal:
            min_g = min(min_g, s.objective)
    exact = bool(min_g < delta)
    rec = ExactnessRecord(delta, float(min_g), exact, z_ori, second,
                          [patterns[k] for k in np.flatnonzero(opt)], None, len(patterns))
    if exact:
        s_reg, d_reg, _ = solve_opf(network, demand, lam, ModelVariant(Variant.REG_MIP, include_ohms_law),
                                    gap_tol=1e-9)
        u_hat = tuple(int(round(d_reg.u[t, i])) for t in range(T) for i in bat)
        # a pattern with no activity at some slot can be reported either way; judge by value
        lb, ub = lb0.copy(), ub0.copy()
        lb[ucols] = ub[ucols] = u_hat
        s = solver.solve(lb, ub)
        rec.reg_u_in_optimal = bool(s.optimal and s.objective <= z_ori + tol)
    return rec


# -- sweeps ----------------------------------------------------------------------------

@dataclass
class SweepRow:
    lam: float  # charge penalty; equals the discharge penalty on uniform grids
    z_mip: float
    z_lp: float
    gap: float
    c_of_p: float  # system cost of the penalized optimum
    reg_objective: float
    theoretical_bound: float
    empirical_gap: float  # c_of_p minus the original optimum
    lam_d: float = 0.0


def lambda_sweep(network: Network, demand: DemandScenario, grid, include_ohms_law: bool = True,
                 gap_tol: float = 1e-9) -> tuple[float, list[SweepRow]]:
    """Penalized MIP and LP optima over ``grid``.

    Grid entries are numbers (same penalty both ways) or :class:`Lambda`
    pairs. Returns the original optimum and one row per entry.
    """
    cfg = network.battery_config
    z_star, _, _ = solve_opf(network, demand, ZERO, ModelVariant(Variant.BATTERY_MIP, include_ohms_law),
                             gap_tol=gap_tol)
    if not z_star.optimal:
        raise RuntimeError(f"original model solve failed: {z_star.status.value}")
    nb = max(len(network.battery_buses), 1)
    rows = []
    for v in grid:
        lam = v if isinstance(v, Lambda) else Lambda(float(v), float(v))
        s_mip, d_mip, _ = solve_opf(network, demand, lam, ModelVariant(Variant.REG_MIP, include_ohms_law),
                                    gap_tol=gap_tol)
        s_lp, _, _ = solve_opf(network, demand, lam, ModelVariant(Variant.REG_LP, include_ohms_law))
        if d_mip is None or not s_lp.optimal:
            raise RuntimeError(f"sweep solve failed at lambda={lam.as_tuple()}")
        bound = worst_case_gap_bound(demand.horizon, nb, cfg.ec_max, cfg.ed_max, lam)
        rows.append(SweepRow(lam.lambda_c, s_mip.objective, s_lp.objective, s_mip.objective - s_lp.objective,
                             d_mip.objective_c, d_mip.objective_reg, bound, d_mip.objective_c - z_star.objective,
                             lam.lambda_d))
    return z_star.objective, rows
