import math

import numpy as np
import pytest
from scipy.optimize import linprog

from aidc_utils.config import SolverOptions
from aidc_utils.milp_model import MilpModel, SolveStatus
from aidc_utils.simplex import solve_lp, to_standard_form


def test_two_variable_lp():
    model = MilpModel("lp")
    x = model.add_var("x")
    y = model.add_var("y")
    model.add_constraint(x + 2 * y, ">=", 4)
    model.add_constraint(3 * x + y, ">=", 6)
    model.set_objective(x + y)
    sol = solve_lp(model.finalize())
    assert sol.status == SolveStatus.OPTIMAL
    assert sol.objective == pytest.approx(2.8)
    assert sol.x == pytest.approx([1.6, 1.2])
    assert sol.gap == 0.0


def test_equality_row():
    model = MilpModel()
    x = model.add_var("x")
    y = model.add_var("y", 0.0, 2.0)
    model.add_constraint(x + y, "==", 3)
    model.set_objective(x)
    sol = solve_lp(model.finalize())
    assert sol.objective == pytest.approx(1.0)
    assert sol.value(y) == pytest.approx(2.0)


def test_free_variable_with_single_row_bound():
    model = MilpModel()
    x = model.add_var("x", -math.inf, math.inf)
    model.add_constraint(x, ">=", -2)
    model.set_objective(x)
    assert solve_lp(model.finalize()).objective == pytest.approx(-2.0)


def test_objective_constant_is_reported():
    model = MilpModel()
    x = model.add_var("x", 1.0, 4.0)
    model.set_objective(2 * x + 10, "max")
    sol = solve_lp(model.finalize())
    assert sol.objective == pytest.approx(18.0)


def test_unbounded():
    model = MilpModel()
    x = model.add_var("x")
    y = model.add_var("y")
    model.add_constraint(x - y, "<=", 1)
    model.set_objective(-x)
    assert solve_lp(model.finalize()).status == SolveStatus.UNBOUNDED


def test_infeasible_rows():
    model = MilpModel()
    x = model.add_var("x")
    y = model.add_var("y")
    model.add_constraint(x + y, "<=", 1)
    model.add_constraint(x + y, ">=", 2)
    model.set_objective(x)
    sol = solve_lp(model.finalize())
    assert sol.status == SolveStatus.INFEASIBLE
    assert not sol.has_solution


def test_crossing_single_row_bounds_are_caught_early():
    model = MilpModel()
    x = model.add_var("x")
    model.add_constraint(x, ">=", 0.5, name="low")
    model.add_constraint(x, "<=", 0.4, name="high")
    model.set_objective(x)
    form = to_standard_form(model.finalize())
    assert form.infeasible
    assert solve_lp(model).status == SolveStatus.INFEASIBLE


def test_iteration_limit():
    model = MilpModel()
    x = model.add_var("x")
    y = model.add_var("y")
    model.add_constraint(x + 2 * y, ">=", 4)
    model.add_constraint(3 * x + y, ">=", 6)
    model.set_objective(x + y)
    sol = solve_lp(model.finalize(), SolverOptions(max_lp_iterations=1))
    assert sol.status == SolveStatus.LIMIT_REACHED


@pytest.mark.parametrize("seed", range(5))
def test_matches_scipy_linprog(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 5.0, size=(6, 8))
    b = rng.uniform(10.0, 30.0, size=6)
    c = rng.uniform(1.0, 4.0, size=8)
    model = MilpModel(f"rand{seed}")
    xs = [model.add_var(f"x{j}", 0.0, 10.0) for j in range(8)]
    for i in range(6):
        model.add_constraint({xs[j]: A[i, j] for j in range(8)}, "<=", b[i])
    model.set_objective({xs[j]: c[j] for j in range(8)}, "max")
    ours = solve_lp(model.finalize())
    ref = linprog(-c, A_ub=A, b_ub=b, bounds=[(0.0, 10.0)] * 8, method="highs")
    assert ours.status == SolveStatus.OPTIMAL
    assert ours.objective == pytest.approx(-ref.fun, rel=1e-7)
    assert model.max_violation(ours.x) < 1e-6
