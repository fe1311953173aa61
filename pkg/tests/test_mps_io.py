import json
import math

import pytest

from aidc_utils.branch_bound import solve_milp
from aidc_utils.milp_model import MilpModel, ObjectiveSense, Sense, VarType
from aidc_utils.mps_io import MpsFormatError, format_number, read_mps, write_mps

SMALL = """\
* production plan
NAME          PLAN
ROWS
 N  COST
 L  LIM1
 G  LIM2
 E  MYEQN
COLUMNS
    MARKER                 'MARKER'                 'INTORG'
    X1        COST         1.0   LIM1         1.0
    X1        LIM2         1.0
    MARKER                 'MARKER'                 'INTEND'
    X2        COST         2.0   LIM1         1.0
    X2        MYEQN       -1.0
    X3        COST        -1.0   MYEQN        1.0
RHS
    RHS       LIM1         4.0   LIM2         1.0
    RHS       MYEQN        7.0
BOUNDS
 UP BND       X1           4.0
 LO BND       X2          -1.0
 UP BND       X2           1.0
ENDATA
"""


def _mixed_model() -> MilpModel:
    model = MilpModel("mixed")
    on = model.add_binary("on")
    n = model.add_var("n", -2.0, 6.0, VarType.INTEGER)
    p = model.add_var("p", 0.0, 10.0)
    f = model.add_var("f", -math.inf, math.inf)
    m = model.add_var("m", -math.inf, 3.0)
    k = model.add_var("k", 2.5, 2.5)
    model.add_constraint(p - 10 * on, "<=", 0, name="link")
    model.add_constraint(n + p + f, ">=", 1, name="need")
    model.add_constraint(f - m + k, "==", 4, name="bal")
    model.set_objective(3 * on + n + 0.5 * p + 7, "min")
    return model.finalize()


def test_sections_and_markers():
    text, names = write_mps(_mixed_model())
    lines = text.splitlines()
    assert lines[0].startswith("NAME")
    assert lines[1:3] == ["OBJSENSE", "    MIN"]
    assert lines[-1] == "ENDATA"
    assert text.count("'INTORG'") == 1
    assert text.count("'INTEND'") == 1
    assert " BV BND       on" in lines
    assert any(line.startswith(" LI BND       n") for line in lines)
    assert any(line.startswith(" FR BND       f") for line in lines)
    assert any(line.startswith(" MI BND       m") for line in lines)
    assert any(line.startswith(" FX BND       k") for line in lines)
    assert names["columns"]["on"] == "on"


def test_objective_constant_is_a_negated_rhs():
    text, _ = write_mps(_mixed_model())
    rhs_lines = [line for line in text.splitlines() if line.split()[:2] == ["RHS", "OBJ"]]
    assert len(rhs_lines) == 1
    assert float(rhs_lines[0].split()[2]) == -7.0


def test_written_model_reads_back_with_the_same_optimum():
    model = _mixed_model()
    text, _ = write_mps(model)
    again = read_mps(text)
    assert again.n_vars == model.n_vars
    assert again.n_cons == model.n_cons
    assert again.integer_indices == model.integer_indices
    assert again.objective_constant == 7.0
    assert solve_milp(again).objective == pytest.approx(solve_milp(model).objective)


def test_long_names_are_mapped(tmp_path):
    model = MilpModel("rt_window")
    x = model.add_var("charge_power_0")
    model.add_constraint(x, "<=", 5, name="soc limit")
    model.set_objective(x, "max")
    path = tmp_path / "debug" / "window.mps"
    text, names = write_mps(model.finalize(), path)
    assert names["columns"]["charge_power_0"] == "C0000001"
    assert names["rows"]["soc limit"] == "R0000001"
    assert "charge_power_0" not in text
    mapping = json.loads((tmp_path / "debug" / "window.mps.map.json").read_text())
    assert mapping == names
    assert path.read_text() == text


def test_row_named_obj_forces_mapping():
    model = MilpModel()
    x = model.add_var("x")
    model.add_constraint(x, "<=", 1, name="OBJ")
    model.set_objective(x)
    _, names = write_mps(model.finalize())
    assert names["rows"]["OBJ"] == "R0000001"


def test_read_small_file(tmp_path):
    path = tmp_path / "plan.mps"
    path.write_text(SMALL)
    model = read_mps(path)
    assert model.name == "PLAN"
    assert model.sense == ObjectiveSense.MINIMIZE
    assert [c.sense for c in model.constraints] == [Sense.LE, Sense.GE, Sense.EQ]
    x1 = model.variable("X1")
    assert x1.vtype == VarType.INTEGER
    assert (x1.lb, x1.ub) == (0.0, 4.0)
    assert (model.variable("X2").lb, model.variable("X2").ub) == (-1.0, 1.0)
    sol = solve_milp(model)
    # X3 = 7 + X2, so the objective is X1 + X2 - 7 with X1 >= 1 and X2 >= -1
    assert sol.objective == pytest.approx(-7.0)


def test_marker_integer_without_bound_is_binary():
    text = SMALL.replace(" UP BND       X1           4.0\n", "")
    assert read_mps(text).variable("X1").vtype == VarType.BINARY


@pytest.mark.parametrize(
    ("needle", "replacement", "message", "line"),
    [
        ("RHS\n", "RANGES\n", "RANGES", 16),
        ("BOUNDS\n", "BOUNDZ\n", "unknown section", 19),
        ("    X2        MYEQN       -1.0\n", "    X2        NOPE        -1.0\n", "unknown row", 14),
        (" L  LIM1\n", " Q  LIM1\n", "unknown row type", 5),
        ("    RHS       MYEQN        7.0\n", "    RHS       MYEQN        seven\n", "bad number", 18),
        (" UP BND       X2           1.0\n", " XX BND       X2           1.0\n", "malformed XX bound", 22),
    ],
)
def test_reader_errors_carry_line_numbers(needle, replacement, message, line):
    with pytest.raises(MpsFormatError, match=message) as excinfo:
        read_mps(SMALL.replace(needle, replacement))
    assert excinfo.value.line == line


@pytest.mark.parametrize("value", [0.0, 1.0, -7.0, 0.1, 1e-12, 123456.789, 2.0 / 3.0, -1e20])
def test_format_number_fits_the_field(value):
    text = format_number(value)
    assert len(text) <= 12
    assert float(text) == pytest.approx(value, rel=1e-10)
