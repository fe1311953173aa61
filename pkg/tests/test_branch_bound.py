import numpy as np
import pytest
from scipy.optimize import Bounds, LinearConstraint, milp

from aidc_utils.branch_bound import TooManyIntegersError, brute_force, solve_milp
from aidc_utils.config import SolverOptions
from aidc_utils.milp_model import MilpModel, SolveStatus
from aidc_utils.simplex import LpResult, solve_lp, solve_lp_bounds


def test_knapsack_needs_branching(knapsack):
    assert solve_lp(knapsack).objective == pytest.approx(17.0 / 3.0)
    sol = solve_milp(knapsack)
    assert sol.status == SolveStatus.OPTIMAL
    assert sol.objective == pytest.approx(5.0)
    assert sol.x == pytest.approx([1.0, 0.0, 1.0])
    assert sol.gap == pytest.approx(0.0)


def test_brute_force_agrees(knapsack):
    assert brute_force(knapsack).objective == pytest.approx(solve_milp(knapsack).objective)


def test_general_integer_rounds_down():
    model = MilpModel()
    x = model.add_var("x", 0.0, 10.0, "integer")
    model.add_constraint(x, "<=", 3.5)
    model.set_objective(x, "max")
    assert solve_milp(model.finalize()).objective == pytest.approx(3.0)


def test_integer_infeasible():
    model = MilpModel()
    x = model.add_binary("x")
    model.add_constraint(x, ">=", 0.5)
    model.add_constraint(x, "<=", 0.4)
    model.set_objective(x)
    assert solve_milp(model.finalize()).status == SolveStatus.INFEASIBLE
    assert brute_force(model).status == SolveStatus.INFEASIBLE


def test_pure_lp_goes_straight_to_simplex():
    model = MilpModel()
    x = model.add_var("x", 0.0, 2.5)
    model.set_objective(x, "max")
    sol = solve_milp(model.finalize())
    assert sol.objective == pytest.approx(2.5)
    assert sol.stats.nodes == 0


def test_node_limit(knapsack):
    sol = solve_milp(knapsack, SolverOptions(node_limit=1))
    assert sol.status == SolveStatus.LIMIT_REACHED
    assert sol.bound == pytest.approx(17.0 / 3.0)
    # the dive still finds b alone
    assert sol.objective == pytest.approx(4.0)
    assert sol.x == pytest.approx([0.0, 1.0, 0.0])


def test_brute_force_refuses_large_models():
    model = MilpModel()
    for i in range(21):
        model.add_binary(f"b{i}")
    with pytest.raises(TooManyIntegersError):
        brute_force(model.finalize())


def test_mixed_model_polishes_continuous_part():
    model = MilpModel()
    on = model.add_binary("on")
    p = model.add_var("p", 0.0, 10.0)
    model.add_constraint(p - 10 * on, "<=", 0)
    model.add_constraint(p, ">=", 3)
    model.set_objective(5 * on + p)
    sol = solve_milp(model.finalize())
    assert sol.objective == pytest.approx(8.0)
    assert sol.value(on) == 1.0
    assert sol.value(p) == pytest.approx(3.0)


@pytest.mark.parametrize("seed", range(6))
def test_matches_scipy_milp(seed):
    rng = np.random.default_rng(100 + seed)
    n, m = 6, 4
    A = rng.uniform(0.0, 6.0, size=(m, n)).round(2)
    b = rng.uniform(8.0, 20.0, size=m).round(2)
    c = rng.uniform(1.0, 5.0, size=n).round(2)
    model = MilpModel(f"rand{seed}")
    xs = [model.add_var(f"x{j}", 0.0, 5.0, "integer") for j in range(n)]
    for i in range(m):
        model.add_constraint({xs[j]: A[i, j] for j in range(n)}, "<=", b[i])
    model.set_objective({xs[j]: c[j] for j in range(n)}, "max")
    ours = solve_milp(model.finalize(), SolverOptions(mip_gap=1e-9))
    ref = milp(-c, constraints=LinearConstraint(A, -np.inf, b), integrality=np.ones(n), bounds=Bounds(0, 5))
    assert ours.status == SolveStatus.OPTIMAL
    assert ours.objective == pytest.approx(-ref.fun, abs=1e-6)
    assert model.is_feasible(ours.x)


def test_hint_seeds_the_incumbent(knapsack):
    sol = solve_milp(knapsack, SolverOptions(node_limit=1), hints=[{"b": 0}])
    assert sol.status == SolveStatus.LIMIT_REACHED
    assert sol.objective == pytest.approx(5.0)
    assert sol.x == pytest.approx([1.0, 0.0, 1.0])


def test_unknown_hint_names_are_skipped(knapsack):
    sol = solve_milp(knapsack, SolverOptions(node_limit=1), hints=[{"nope": 1.0}])
    assert sol.objective == pytest.approx(4.0)


def test_infeasible_hint_falls_back_to_the_search(knapsack):
    sol = solve_milp(knapsack, hints=[{"a": 1, "b": 1}])
    assert sol.status == SolveStatus.OPTIMAL
    assert sol.objective == pytest.approx(5.0)


def _fail_when_b_is_off(mocker, knapsack, recover_with_bland):
    real = solve_lp_bounds
    b = knapsack.variable("b").index

    def fake(model, lb, ub, opts, *args):
        if ub[b] == 0 and not (recover_with_bland and opts.bland_after == 1):
            return LpResult(SolveStatus.NUMERICAL, message="singular basis")
        return real(model, lb, ub, opts, *args)

    return mocker.patch("aidc_utils.branch_bound.solve_lp_bounds", side_effect=fake)


def test_numerical_child_is_resolved_with_bland(mocker, knapsack):
    spy = _fail_when_b_is_off(mocker, knapsack, recover_with_bland=True)
    sol = solve_milp(knapsack)
    assert sol.status == SolveStatus.OPTIMAL
    assert sol.objective == pytest.approx(5.0)
    assert any(call.args[3].bland_after == 1 for call in spy.call_args_list)


def test_lost_numerical_child_downgrades_the_status(mocker, knapsack):
    _fail_when_b_is_off(mocker, knapsack, recover_with_bland=False)
    sol = solve_milp(knapsack)
    assert sol.status == SolveStatus.NUMERICAL
    assert sol.has_solution
    assert sol.objective == pytest.approx(4.0)
    # the lost subtree keeps the bound open
    assert sol.bound == pytest.approx(17.0 / 3.0)
    assert sol.gap > 0.0
    assert "failed numerically" in sol.message


def _random_mixed_model(seed):
    rng = np.random.default_rng(500 + seed)
    model = MilpModel(f"mixed{seed}")
    ints = [model.add_var(f"n{j}", 0.0, 2.0, "integer") for j in range(3)] + [model.add_binary("y")]
    conts = [model.add_var(f"z{j}", 0.0, 4.0) for j in range(2)]
    xs = ints + conts
    for i in range(3):
        coefs = rng.uniform(-3.0, 4.0, size=len(xs)).round(2)
        sense = "<=" if i < 2 else ">="
        rhs = float(np.round(rng.uniform(2.0, 9.0), 2))
        model.add_constraint({v: coefs[j] for j, v in enumerate(xs)}, sense, rhs)
    c = rng.uniform(-2.0, 3.0, size=len(xs)).round(2)
    model.set_objective({v: c[j] for j, v in enumerate(xs)}, "max" if seed % 2 else "min")
    return model.finalize()


@pytest.mark.parametrize("seed", range(50))
def test_matches_brute_force_on_mixed_models(seed):
    model = _random_mixed_model(seed)
    ours = solve_milp(model, SolverOptions(mip_gap=1e-9))
    ref = brute_force(model)
    assert ours.status == ref.status
    if ref.status == SolveStatus.OPTIMAL:
        assert ours.objective == pytest.approx(ref.objective, abs=1e-6)
        assert model.is_feasible(ours.x)


def test_infeasible_mixed_model_agrees_with_brute_force():
    model = MilpModel()
    on = model.add_binary("on")
    n = model.add_var("n", 0.0, 3.0, "integer")
    z = model.add_var("z", 0.0, 1.0)
    model.add_constraint(2 * n + z, "==", 2.5)
    model.add_constraint(on + z, ">=", 1.5)
    model.add_constraint(n - 2 * on, ">=", 1.0)
    model.set_objective(n + z + on)
    model.finalize()
    assert solve_milp(model).status == SolveStatus.INFEASIBLE
    assert brute_force(model).status == SolveStatus.INFEASIBLE


def test_unbounded_mixed_model_agrees_with_brute_force():
    model = MilpModel()
    y = model.add_binary("y")
    z = model.add_var("z", 0.0)
    model.add_constraint(z - y, ">=", 0.0)
    model.set_objective(z + y, "max")
    model.finalize()
    assert solve_milp(model).status == SolveStatus.UNBOUNDED
    assert brute_force(model).status == SolveStatus.UNBOUNDED
