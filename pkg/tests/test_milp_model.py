import math

import numpy as np
import pytest

from aidc_utils.milp_model import (
    LinearExpr,
    MilpModel,
    ModelError,
    ObjectiveSense,
    Sense,
    Solution,
    SolveStatus,
    VarType,
)


def test_expression_arithmetic():
    model = MilpModel()
    x = model.add_var("x")
    y = model.add_var("y")
    expr = 2 * x - y + 3
    assert expr.terms == {0: 2.0, 1: -1.0}
    assert expr.constant == 3.0
    assert (expr - expr).terms == {0: 0.0, 1: 0.0}
    assert (-x).terms == {0: -1.0}
    assert (5 - x).value([2.0, 0.0]) == 3.0
    assert LinearExpr.total([x, y, x]).terms == {0: 2.0, 1: 1.0}


def test_constraint_constant_moves_to_rhs():
    model = MilpModel()
    x = model.add_var("x")
    model.add_constraint(x + 2, "<=", 5)
    con = model.constraints[0]
    assert con.rhs == 3.0
    assert con.sense == Sense.LE
    assert con.name == "c0"


def test_binary_bounds_are_clipped():
    model = MilpModel()
    b = model.add_var("b", -3.0, 7.0, VarType.BINARY)
    assert (b.lb, b.ub) == (0.0, 1.0)
    assert model.integer_indices == [0]


@pytest.mark.parametrize(
    "build",
    [
        lambda m: (m.add_var("x"), m.add_var("x")),
        lambda m: m.add_var("x", 2.0, 1.0),
        lambda m: m.add_var("x", math.nan, 1.0),
        lambda m: m.add_var("n", 0.0, math.inf, VarType.INTEGER),
        lambda m: m.add_constraint({5: 1.0}, "<=", 1.0),
        lambda m: m.add_constraint(m.add_var("x"), "~", 1.0),
        lambda m: m.set_objective(m.add_var("x"), "sideways"),
    ],
)
def test_structural_errors(build):
    with pytest.raises(ModelError):
        build(MilpModel())


def test_duplicate_row_name():
    model = MilpModel()
    x = model.add_var("x")
    model.add_constraint(x, "<=", 1, name="r")
    with pytest.raises(ModelError, match="duplicate"):
        model.add_constraint(x, ">=", 0, name="r")


def test_finalized_model_is_frozen(knapsack):
    with pytest.raises(ModelError, match="finalized"):
        knapsack.add_var("d")


def test_derived_models_leave_the_original_alone(knapsack):
    fixed = knapsack.with_bounds({0: (1.0, 1.0)})
    assert fixed.lb[0] == 1.0
    assert knapsack.lb[0] == 0.0
    extra = knapsack.with_constraint(knapsack.variable("b"), "==", 0.0, name="nob")
    assert extra.n_cons == 2
    assert knapsack.n_cons == 1
    relaxed = knapsack.relaxed()
    assert relaxed.integer_indices == []
    assert knapsack.integer_indices == [0, 1, 2]
    flipped = knapsack.with_objective(knapsack.variable("a"), "min")
    assert flipped.sense == ObjectiveSense.MINIMIZE
    assert knapsack.sense == ObjectiveSense.MAXIMIZE


def test_matrix_and_vectors(knapsack):
    assert knapsack.matrix.toarray().tolist() == [[2.0, 3.0, 2.0]]
    assert knapsack.c.tolist() == [3.0, 4.0, 2.0]
    assert knapsack.rhs.tolist() == [4.0]
    assert "3 vars (3 integer)" in knapsack.summary()


def test_feasibility_checks(knapsack):
    assert knapsack.is_feasible([1.0, 0.0, 1.0])
    assert not knapsack.is_feasible([1.0, 1.0, 0.0])
    assert not knapsack.is_feasible([0.5, 0.0, 0.0])
    assert knapsack.max_violation([1.0, 1.0, 1.0]) == pytest.approx(3.0)
    assert knapsack.objective_value([1.0, 0.0, 1.0]) == 5.0


def test_unknown_variable(knapsack):
    with pytest.raises(ModelError, match="unknown variable"):
        knapsack.variable("z")


def test_solution_values():
    model = MilpModel()
    x = model.add_var("x")
    y = model.add_var("y")
    sol = Solution(SolveStatus.OPTIMAL, x=np.array([2.0, 3.0]), objective=5.0)
    assert sol.is_optimal and sol.has_solution
    assert sol.value(x) == 2.0
    assert sol.value(x + 2 * y) == 8.0
    assert sol.value(1) == 3.0
    with pytest.raises(ModelError, match="no solution"):
        Solution(SolveStatus.INFEASIBLE).value(x)
