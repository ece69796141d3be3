"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Instance families are generated once per module from fixed seeds so the
zero-gap and worst-case-bound criteria look at the same 200 instances.
"""
from __future__ import annotations

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from storageopf import fixtures as F
from storageopf.grid import BatteryConfig, generate_demand, parse_matpower, scale_battery, select_battery_buses
from storageopf.opf import Lambda, ModelVariant, Variant, ZERO, solve_opf
from storageopf.regularization import (best_worst_case_lambda, check_exactness_bruteforce, check_structure,
                                       dispatch_violation, integralize, lambda_sweep, no_battery_values,
                                       worst_case_gap_bound)
from storageopf.trilevel import (Attack, Placement, brute_force_trilevel, dualize_third_level,
                                 solve_trilevel, third_level_value, worst_attack, worst_attack_bruteforce)
from storageopf.lp import solve_lp

TOL = 1e-6
CASE14 = Path(__file__).parent / "data" / "case14.m"


def _best_lambda(net):
    c = net.battery_config
    return best_worst_case_lambda(c.ec_max, c.ed_max, c.eta_c, c.eta_d)


def _solve(net, dem, lam, tag, ohms=False, **kw):
    sol, d, _ = solve_opf(net, dem, lam, ModelVariant(tag, ohms), **kw)
    assert d is not None, sol.status
    return d


# -- 1-4: small fixtures ----------------------------------------------------------------

def test_criterion_01_min_rate_counterexample(acceptance_report):
    t0 = time.perf_counter()
    net, dem = F.min_rate_counterexample(0.5)
    lam = Lambda(0.6, 0.6)
    z_mip = _solve(net, dem, lam, Variant.REG_MIP).objective_reg
    z_lp = _solve(net, dem, lam, Variant.REG_LP).objective_reg
    dt = time.perf_counter() - t0
    ok = abs(z_mip - 3.0) <= TOL and abs(z_lp - 2.7) <= TOL and z_mip - z_lp > TOL and dt < 1.0
    acceptance_report(1, ok, f"penalized MIP {z_mip:.6f} (3.0), LP {z_lp:.6f} (2.7), {dt:.2f}s")
    assert ok


def test_criterion_02_underpenalized_counterexample(acceptance_report):
    t0 = time.perf_counter()
    net, dem = F.underpenalized_counterexample()
    z_mip = _solve(net, dem, ZERO, Variant.REG_MIP).objective_reg
    z_lp = _solve(net, dem, ZERO, Variant.REG_LP).objective_reg
    dt = time.perf_counter() - t0
    ok = abs(z_mip - 4.0) <= TOL and abs(z_lp - 3.5) <= TOL and dt < 1.0
    acceptance_report(2, ok, f"MIP {z_mip:.6f} (4.0), LP {z_lp:.6f} (3.5), {dt:.2f}s")
    assert ok


def test_criterion_03_discharge_into_surplus(acceptance_report):
    t0 = time.perf_counter()
    net, dem = F.discharge_with_excess_case()
    d0 = _solve(net, dem, ZERO, Variant.BATTERY_MIP, tie_break="min_flow")
    lam = Lambda(0.99, 0.99)
    d1 = _solve(net, dem, lam, Variant.REG_MIP)
    rep = check_structure(d1, lam, net.battery_config.eta_c, net.battery_config.eta_d)
    dt = time.perf_counter() - t0
    pd, pex = d0.p_d[0, 1], d0.p_ex[0, 1]
    ok = abs(pd - 0.03) <= TOL and abs(pex - 0.03) <= TOL and rep.max_pd_pex <= 1e-9 and dt < 1.0
    acceptance_report(3, ok, f"lambda=0: discharge {pd:.6f}, surplus {pex:.6f} at (t1, bus 2); "
                             f"lambda=0.99: max discharge*surplus {rep.max_pd_pex:.2e}, {dt:.2f}s")
    assert ok


def test_criterion_04_exactness_certificate(acceptance_report):
    t0 = time.perf_counter()
    net, dem = F.exactness_case()
    lam = _best_lambda(net)
    rec = check_exactness_bruteforce(net, dem, lam, include_ohms_law=False)
    dt = time.perf_counter() - t0
    ok = (abs(rec.z_ori - 4.2) <= TOL and abs(rec.delta - 1.8) <= TOL
          and abs(rec.min_lambda_g - 0.18895) <= 5e-6 and rec.exact and rec.reg_u_in_optimal and dt < 5.0)
    acceptance_report(4, ok, f"z_ori {rec.z_ori:.6f}, delta {rec.delta:.6f}, min penalty {rec.min_lambda_g:.6f}, "
                             f"exact={rec.exact}, penalized pattern optimal={rec.reg_u_in_optimal}, {dt:.2f}s")
    assert ok


# -- 5-6: 200 random instances -----------------------------------------------------------

@pytest.fixture(scope="module")
def random_runs():
    """Per instance: penalized MIP/LP values, integralized LP point and original optimum."""
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    rows = []
    for n in range(200):
        net, dem = F.random_instance(rng, n_buses=(2, 6), horizon=(1, 6), round_trip=(0.7, 1.0))
        ohms = bool(n % 2)
        lam = _best_lambda(net)
        d_mip = _solve(net, dem, lam, Variant.REG_MIP, ohms)
        d_lp = _solve(net, dem, lam, Variant.REG_LP, ohms)
        d_ori = _solve(net, dem, ZERO, Variant.BATTERY_MIP, ohms)
        fixed = integralize(d_lp, net, dem)
        rows.append(dict(net=net, dem=dem, lam=lam, mip=d_mip, lp=d_lp, ori=d_ori, fixed=fixed,
                         viol=dispatch_violation(fixed, net, dem),
                         both=float((fixed.p_c * fixed.p_d).max(initial=0.0))))
    return rows, time.perf_counter() - t0


def test_criterion_05_zero_gap_suite(random_runs, acceptance_report):
    rows, dt = random_runs
    gaps = [abs(r["mip"].objective_reg - r["lp"].objective_reg) for r in rows]
    bad_fix = [i for i, r in enumerate(rows)
               if r["viol"] > TOL or r["both"] > 1e-12 or r["fixed"].objective_reg > r["lp"].objective_reg + 1e-9]
    ok = max(gaps) <= TOL and not bad_fix and dt < 120
    acceptance_report(5, ok, f"{len(rows)} instances: max |MIP-LP| {max(gaps):.2e}, integralization failures "
                             f"{len(bad_fix)}, {dt:.1f}s")
    assert ok, bad_fix


def test_criterion_06_worst_case_bound(random_runs, acceptance_report):
    rows, dt0 = random_runs
    t0 = time.perf_counter()
    slack = []
    for r in rows:
        c = r["net"].battery_config
        bound = worst_case_gap_bound(r["dem"].horizon, len(r["net"].battery_buses), c.ec_max, c.ed_max, r["lam"])
        slack.append(bound + TOL - (r["mip"].objective_c - r["ori"].objective_c))
    sweep_bad = 0
    grid = [i / 20 for i in range(21)]
    for eta in F.SWEEP_ETAS:
        net, dem = F.gap_sweep_case(eta)
        _, sweep = lambda_sweep(net, dem, [*grid, _best_lambda(net)], include_ohms_law=False)
        sweep_bad += sum(1 for s in sweep if s.empirical_gap > s.theoretical_bound + TOL)
    dt = dt0 + time.perf_counter() - t0
    ok = min(slack) >= 0 and sweep_bad == 0 and dt < 180
    acceptance_report(6, ok, f"min slack to the bound {min(slack):.3e}; sweep points above the bound "
                             f"{sweep_bad}; {dt:.1f}s")
    assert ok


# -- 7: large penalty means no battery ---------------------------------------------------

def test_criterion_07_no_battery_equivalence(acceptance_report):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    diffs = []
    for n in range(50):
        net, dem = F.random_instance(rng)
        z_reg, z_nb = no_battery_values(net, dem, Lambda(1.0, 1.0), include_ohms_law=bool(n % 2))
        diffs.append(abs(z_reg - z_nb))
    dt = time.perf_counter() - t0
    ok = max(diffs) <= TOL and dt < 30
    acceptance_report(7, ok, f"50 instances: max |z_reg - z_nb| {max(diffs):.2e}, {dt:.1f}s")
    assert ok


# -- 8-9: attack level and siting ---------------------------------------------------------

def _small_net(rng, max_buses=5, max_lines=6, max_t=4):
    while True:
        net, dem = F.random_instance(rng, n_buses=(2, max_buses), horizon=(1, max_t))
        if net.n_lines <= max_lines:
            return net, dem


def test_criterion_08_duality_and_envelope(acceptance_report):
    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    dual_err, attack_err = [], []
    for n in range(50):
        net, dem = _small_net(rng)
        lam = _best_lambda(net)
        x = Placement(tuple(int(v) for v in rng.integers(0, 2, net.n_buses)), net.n_buses)
        y = Attack(tuple(int(v) for v in rng.integers(0, 2, net.n_lines)), net.n_lines)
        primal = third_level_value(net, dem, x, y, lam)
        dual = solve_lp(dualize_third_level(net, dem, x, lam, y=y)[0]).objective
        dual_err.append(abs(primal - dual))
        k = int(rng.integers(0, 3))
        _, v_mc, _ = worst_attack(net, dem, x, k, lam)
        _, v_bf = worst_attack_bruteforce(net, dem, x, k, lam)
        attack_err.append(abs(v_mc - v_bf))
    dt = time.perf_counter() - t0
    ok = max(dual_err) <= TOL and max(attack_err) <= TOL and dt < 120
    acceptance_report(8, ok, f"50 instances: max |dual-primal| {max(dual_err):.2e}, max |envelope MILP - "
                             f"enumeration| {max(attack_err):.2e}, {dt:.1f}s")
    assert ok


def test_criterion_09_trilevel_oracle(acceptance_report):
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    bad, gaps = [], []
    for n in range(20):
        net, dem = _small_net(rng)
        b, k = int(rng.integers(0, 3)), int(rng.integers(0, 3))
        res = solve_trilevel(net, dem, b, k, _best_lambda(net))
        z_opt, _ = brute_force_trilevel(net, dem, b, k)
        gaps.append(res.trilevel_gap_reg)
        if not (res.z_lp_lb - TOL <= z_opt <= res.z_reg_ub + TOL) or res.trilevel_gap_reg > 0.005:
            bad.append((n, res.z_lp_lb, z_opt, res.z_reg_ub, res.trilevel_gap_reg))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 600
    acceptance_report(9, ok, f"20 nets: sandwich/stop-gap failures {len(bad)}, worst penalized-run gap "
                             f"{max(gaps):.4%}, {dt:.1f}s")
    assert ok, bad


# -- 10: desk-scale stand-in for the large-network tables ---------------------------------

@pytest.mark.slow
def test_criterion_10_case14_gap_pipeline(acceptance_report):
    """Soft check: reported as a warning, never a failure."""
    t0 = time.perf_counter()
    base = parse_matpower(CASE14.read_text(), name="case14")
    buses = select_battery_buses(base, 3)
    means = {}
    throughput = 0.0
    for eta in (0.85, 0.9, 0.95):
        net = base.with_batteries(buses, scale_battery(BatteryConfig.medium_network(eta), base.n_buses))
        lam = _best_lambda(net)
        gaps = []
        # system-wide shaping pushes the peak past total capacity, so storage is actually used
        for dem in generate_demand(net, sigma_hat=0.05, seed=10, count=40, mode="system"):
            d_star = _solve(net, dem, ZERO, Variant.BATTERY_MIP, True)
            c_hat = _solve(net, dem, lam, Variant.REG_MIP, True).objective_c
            gaps.append((c_hat - d_star.objective_c) / max(abs(d_star.objective_c), 1e-9))
            throughput += float(d_star.p_c.sum() + d_star.p_d.sum())
        means[eta] = round(float(np.mean(gaps)), 12) + 0.0
    dt = time.perf_counter() - t0
    ok = all(v <= 0.005 for v in means.values())
    detail = ", ".join(f"eta={k}: {v:.4%}" for k, v in means.items())
    acceptance_report(10, ok, f"IEEE 14, 40 scenarios, mean optimality gap {detail}; battery throughput "
                              f"{throughput:.1f} p.u.; {dt:.1f}s", soft=True)
    if not ok:
        warnings.warn(f"mean optimality gap above 0.5%: {detail}")
