"""Simplex, branch-and-bound and LP writer, checked against scipy/HiGHS as an independent route."""
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from storageopf.lp import (EQ, GE, INF, LE, LinearModel, LPSolver, ModelError, Status, export_lp_format,
                           relative_gap, solve_lp, solve_mip)


def random_model(rng, n_max=10, m_max=8, binaries=False):
    n, m = int(rng.integers(1, n_max + 1)), int(rng.integers(1, m_max + 1))
    A = rng.integers(-3, 4, (m, n)).astype(float)
    b = rng.integers(-5, 10, m).astype(float)
    c = rng.integers(-4, 5, n).astype(float)
    lb = rng.choice([0.0, -1.0, -INF], n)
    ub = rng.choice([1.0, 3.0, INF], n)
    senses = rng.choice([LE, GE, EQ], m, p=[0.5, 0.3, 0.2])
    integ = np.zeros(n)
    model = LinearModel()
    for j in range(n):
        is_bin = binaries and rng.random() < 0.5
        if is_bin:
            lb[j], ub[j], integ[j] = 0.0, 1.0, 1
        model.add_var(lb[j], ub[j], c[j], binary=is_bin)
    for i in range(m):
        model.add_row({j: A[i, j] for j in range(n) if A[i, j]}, senses[i], b[i])
    lo = np.where(senses == LE, -np.inf, b)
    hi = np.where(senses == GE, np.inf, b)
    return model, (c, A, lo, hi, lb, ub, integ)


def oracle(data):
    """Status and value from HiGHS via scipy; unbounded is told apart from infeasible by a feasibility solve."""
    c, A, lo, hi, lb, ub, integ = data
    r = milp(c, constraints=LinearConstraint(A, lo, hi), bounds=Bounds(lb, ub), integrality=integ)
    if r.status == 0:
        return Status.OPTIMAL, r.fun
    feas = milp(np.zeros_like(c), constraints=LinearConstraint(A, lo, hi), bounds=Bounds(lb, ub), integrality=integ)
    return (Status.UNBOUNDED if feas.status == 0 else Status.INFEASIBLE), None


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2 ** 32 - 1))
def test_simplex_matches_highs(seed):
    model, data = random_model(np.random.default_rng(seed))
    s = solve_lp(model)
    status, value = oracle(data)
    assert s.status == status
    if status == Status.OPTIMAL:
        assert s.objective == pytest.approx(value, abs=1e-6)
        assert model.max_violation(s.primal) < 1e-7


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_lp_duality_identity(seed):
    # objective = duals . row activity + reduced costs . x at any optimal basis
    model, _ = random_model(np.random.default_rng(seed))
    s = solve_lp(model)
    if s.optimal:
        act = model.row_activity(s.primal)
        assert s.dual @ act + s.reduced_costs @ s.primal == pytest.approx(s.objective, abs=1e-6)


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2 ** 32 - 1))
def test_branch_and_bound_matches_highs(seed):
    model, data = random_model(np.random.default_rng(seed), binaries=True)
    s = solve_mip(model, gap_tol=1e-9)
    status, value = oracle(data)
    if status == Status.OPTIMAL:
        assert s.status == Status.OPTIMAL
        assert s.objective == pytest.approx(value, abs=1e-6)
        x = s.primal[sorted(model.binaries)]
        assert np.all(np.minimum(np.abs(x), np.abs(x - 1)) <= 1e-6)
    elif status == Status.INFEASIBLE:
        assert s.status == Status.INFEASIBLE


def test_dual_signs_are_rhs_sensitivities():
    # min x + 2y, x + y >= 2, x <= 1.5: moving the first rhs by 1 costs 2 at the optimum
    m = LinearModel()
    x = m.add_var(0, 1.5, 1.0)
    y = m.add_var(0, INF, 2.0)
    m.add_row({x: 1, y: 1}, GE, 2.0)
    s = solve_lp(m)
    assert s.objective == pytest.approx(0.5 * 2 + 1.5)
    assert s.dual[0] == pytest.approx(2.0)
    r = linprog([1, 2], A_ub=[[-1, -1]], b_ub=[-2], bounds=[(0, 1.5), (0, None)], method="highs")
    assert -r.ineqlin.marginals[0] == pytest.approx(s.dual[0])


def test_max_sense_and_constant():
    m = LinearModel("max")
    x = m.add_var(0, 4, 3.0)
    m.obj_constant = 1.5
    m.add_row({x: 2}, LE, 5)
    s = solve_lp(m)
    assert s.objective == pytest.approx(3 * 2.5 + 1.5)


def test_infeasible_and_unbounded():
    m = LinearModel()
    x = m.add_var(0, 1)
    m.add_row({x: 1}, GE, 2)
    assert solve_lp(m).status == Status.INFEASIBLE
    m = LinearModel()
    x = m.add_var(-INF, INF, -1.0)
    y = m.add_var(0, INF)
    m.add_row({x: 1, y: -1}, LE, 0)
    assert solve_lp(m).status == Status.UNBOUNDED


def test_model_without_rows():
    m = LinearModel()
    m.add_var(-2, 3, 1.0)
    m.add_var(-2, 3, -1.0)
    s = solve_lp(m)
    assert s.objective == pytest.approx(-5)


def test_warm_start_after_bound_change(rng):
    for _ in range(30):
        model, data = random_model(rng)
        solver = LPSolver(model)
        s = solver.solve()
        if not s.optimal:
            continue
        lb, ub = model.bounds()
        j = int(rng.integers(model.num_vars))
        ub2 = ub.copy()
        ub2[j] = max(lb[j], min(ub[j], s.primal[j] - 0.5)) if math.isfinite(lb[j]) else s.primal[j] - 0.5
        warm = solver.solve(lb, ub2, warm_start=s.basis)
        cold = solve_lp(model, lb=lb, ub=ub2)
        assert warm.status == cold.status
        if cold.optimal:
            assert warm.objective == pytest.approx(cold.objective, abs=1e-7)


def test_degenerate_cycling_example():
    # classic Beale cycling LP; Bland fallback must still terminate
    m = LinearModel()
    x = [m.add_var(0, INF, c) for c in (-0.75, 150, -0.02, 6)]
    m.add_row({x[0]: 0.25, x[1]: -60, x[2]: -0.04, x[3]: 9}, LE, 0)
    m.add_row({x[0]: 0.5, x[1]: -90, x[2]: -0.02, x[3]: 3}, LE, 0)
    m.add_row({x[2]: 1}, LE, 1)
    s = solve_lp(m)
    assert s.objective == pytest.approx(-0.05)


def test_mip_time_limit_reports_bounds(rng):
    # knapsack with many equal ratios: stopped immediately, must not claim optimality
    m = LinearModel("max")
    xs = [m.add_var(0, 1, 10 + i % 3, binary=True) for i in range(30)]
    m.add_row({x: 7 + i % 3 for i, x in enumerate(xs)}, LE, 100.5)
    s = solve_mip(m, time_limit=0.0)
    assert s.status == Status.TIME_LIMIT
    assert s.primal is None and s.bound == INF
    s = solve_mip(m, time_limit=0.05)
    assert s.status in (Status.TIME_LIMIT, Status.OPTIMAL)
    if s.primal is not None:
        assert s.bound >= s.objective - 1e-9
        assert m.max_violation(s.primal) <= 1e-9


def test_mip_history_monotone(rng):
    model, _ = random_model(rng, n_max=12, m_max=8, binaries=True)
    s = solve_mip(model)
    # entries are (bound, incumbent) in a minimization model
    lb = [h[0] for h in s.history]
    ub = [h[1] for h in s.history]
    assert all(a >= b - 1e-9 for a, b in zip(ub, ub[1:]))
    assert all(a <= b + 1e-9 for a, b in zip(lb, lb[1:]))
    assert all(a <= b + 1e-9 for a, b in zip(lb, ub))


def test_model_validation():
    m = LinearModel()
    with pytest.raises(ModelError):
        m.add_var(2, 1)
    with pytest.raises(ModelError):
        m.add_row({3: 1.0}, LE, 0)
    with pytest.raises(ModelError):
        LinearModel("maximize")
    x = m.add_var()
    with pytest.raises(ModelError):
        m.add_row({x: 1.0}, "<", 0)


def test_duplicate_row_entries_are_merged():
    m = LinearModel()
    x = m.add_var(0, 10, -1)
    m.add_row(([x, x], [1.0, 1.0]), LE, 4)
    assert solve_lp(m).objective == pytest.approx(-2)


def test_relative_gap():
    assert relative_gap(10, 9) == pytest.approx(0.1)
    assert relative_gap(0, 0) == 0
    assert relative_gap(0, 1e-12) == 0
    assert relative_gap(math.inf, 0) == math.inf


# -- LP format --------------------------------------------------------------------------------

def test_lp_format_layout():
    m = LinearModel("max", "demo")
    x = m.add_var(0, 1, 2.0, binary=True)
    y = m.add_var(-INF, INF, -1.0)
    z = m.add_var(-INF, 3, 0.0)
    w = m.add_var(2, 2, 0.5)
    m.add_row({x: 1, y: 1}, LE, 4)
    m.add_row({y: 1, z: -1}, EQ, 0)
    text = export_lp_format(m)
    for piece in ("Maximize", "Subject To", "Bounds", "Binary", "End", "x1 free", "-inf <= x2 <= 3", "x3 = 2"):
        assert piece in text


def test_lp_format_refuses_products():
    m = LinearModel()
    a = m.add_var(0, 1, binary=True)
    b = m.add_var(0, 2)
    m.add_bilinear(1.0, a, b)
    with pytest.raises(ModelError):
        export_lp_format(m)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_lp_format_read_back_by_highs(tmp_path_factory, seed):
    highspy = pytest.importorskip("highspy")
    model, _ = random_model(np.random.default_rng(seed), binaries=True)
    model.obj_constant = 0.25
    path = tmp_path_factory.mktemp("lp") / "m.lp"
    path.write_text(export_lp_format(model))
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    assert h.readModel(str(path)) == highspy.HighsStatus.kOk
    h.run()
    ours = solve_mip(model, gap_tol=1e-9)
    status = h.getModelStatus()
    if status == highspy.HighsModelStatus.kOptimal:
        assert ours.status == Status.OPTIMAL
        assert ours.objective == pytest.approx(h.getInfo().objective_function_value, abs=1e-6)
    elif status == highspy.HighsModelStatus.kInfeasible:
        assert ours.status == Status.INFEASIBLE


def test_one_variable_dual():
    m = LinearModel()
    x = m.add_var(-INF, INF, 1.0)
    m.add_row({x: 1}, GE, 3)
    s = solve_lp(m)
    assert s.objective == pytest.approx(3) and s.dual[0] == pytest.approx(1)


def test_mip_without_binaries_equals_lp(rng):
    for _ in range(20):
        model, _ = random_model(rng)
        a, b = solve_lp(model), solve_mip(model)
        assert a.status == b.status
        if a.optimal:
            assert a.objective == b.objective


def test_empty_model_exports_and_reads_back(tmp_path):
    highspy = pytest.importorskip("highspy")
    path = tmp_path / "empty.lp"
    path.write_text(export_lp_format(LinearModel()))
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    assert h.readModel(str(path)) == highspy.HighsStatus.kOk
