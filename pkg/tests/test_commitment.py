import numpy as np
import pytest

from aidc_utils.commitment import (
    CommitmentError,
    CommitmentProblem,
    build_scenario_milp,
    commit,
    load_commitment,
    max_deliverable,
    save_commitment,
)
from aidc_utils.grid_limits import PccLimitSeries
from aidc_utils.scenarios import LimitScenario


def _problem(plant, scenarios, checkpoint, ambient, solver, **kwargs):
    return CommitmentProblem(
        scenarios=scenarios,
        plant=plant,
        t_amb=ambient,
        checkpoint=checkpoint,
        pwl_breakpoints=3,
        solver=solver,
        **kwargs,
    )


def test_open_limits_commit_the_whole_day(toy_plant, open_limits, checkpoint, ambient, fast_solver):
    result = commit(_problem(toy_plant, [open_limits], checkpoint, ambient, fast_solver))
    assert result.w_da_slots == pytest.approx(4.0, rel=1e-6)
    assert result.w_da_star == pytest.approx(4.0 * toy_plant.slot_workload, rel=1e-6)
    assert result.scenario_ids == ["series0"]
    assert len(result.schedules[0]) == 4


def test_binding_scenario_sets_the_commitment(toy_plant, open_limits, congested_limits, checkpoint, ambient,
                                              fast_solver):
    scenarios = [
        LimitScenario(open_limits, "2026-01-05", seed=1, member=0),
        LimitScenario(congested_limits, "2026-01-06", seed=2, member=1),
    ]
    result = commit(_problem(toy_plant, scenarios, checkpoint, ambient, fast_solver))
    assert result.binding == 1
    assert result.w_da_slots == pytest.approx(2.0, rel=1e-6)
    assert result.w_max[0] == pytest.approx(4.0 * toy_plant.slot_workload, rel=1e-6)
    assert result.scenario_ids == ["2026-01-05/1", "2026-01-06/2"]
    for points in result.schedules:
        assert sum(pt.s for pt in points) >= 2.0 - 1e-6
    assert result.schedules[1][2].mu == 0


def test_battery_lifts_the_commitment(bridging_plant, congested_limits, checkpoint, ambient, fast_solver):
    result = commit(_problem(bridging_plant, [congested_limits], checkpoint, ambient, fast_solver))
    assert result.w_da_slots == pytest.approx(4.0, rel=1e-6)
    assert result.schedules[0][2].p_dis > 0


def test_export_only_slot_is_met_by_the_battery(toy_plant, congested_limits, checkpoint, ambient, fast_solver):
    export_only = PccLimitSeries(
        congested_limits.p_lo,
        np.array([100.0, 100.0, -5.0, 100.0]),
        r_grid=1000.0,
        collapsed=congested_limits.collapsed,
    )
    result = commit(_problem(toy_plant, [export_only], checkpoint, ambient, fast_solver))
    slot = result.schedules[0][2]
    assert slot.mu == 0
    assert slot.p_dis - slot.p_ch >= 5.0 - 1e-6



def test_joint_mode_matches_decomposed(toy_plant, open_limits, congested_limits, checkpoint, ambient, fast_solver):
    scenarios = [open_limits, congested_limits]
    decomposed = commit(_problem(toy_plant, scenarios, checkpoint, ambient, fast_solver))
    joint = commit(_problem(toy_plant, scenarios, checkpoint, ambient, fast_solver, mode="joint"))
    assert joint.mode == "joint"
    # without a deviation penalty the shared W reaches the binding scenario's maximum
    assert joint.w_da_slots == pytest.approx(decomposed.w_da_slots, rel=1e-6)
    assert joint.w_da_slots == pytest.approx(2.0, rel=1e-6)
    assert joint.w_max == pytest.approx(decomposed.w_max)
    assert joint.pwl_modes == [joint.pwl_modes[0]] * 2


@pytest.mark.parametrize("penalty", [0.5, 50.0])
def test_joint_penalty_never_exceeds_decomposed(toy_plant, open_limits, congested_limits, checkpoint, ambient,
                                                fast_solver, penalty):
    scenarios = [open_limits, congested_limits]
    decomposed = commit(_problem(toy_plant, scenarios, checkpoint, ambient, fast_solver))
    joint = commit(_problem(toy_plant, scenarios, checkpoint, ambient, fast_solver, mode="joint",
                            penalty_lambda=penalty))
    assert 0.0 <= joint.w_da_slots <= decomposed.w_da_slots * (1 + 1e-6)
    for points in joint.schedules:
        assert sum(pt.s for pt in points) >= joint.w_da_slots - 1e-6



def test_max_deliverable(toy_plant, congested_limits, checkpoint, ambient, fast_solver):
    w = max_deliverable(congested_limits, toy_plant, ambient, checkpoint, pwl_k=3, solver=fast_solver)
    assert w == pytest.approx(2.0 * toy_plant.slot_workload, rel=1e-6)


def test_scenario_milp_keeps_the_battery_cyclic(toy_plant, open_limits, checkpoint, ambient):
    built = build_scenario_milp(open_limits, toy_plant, ambient, checkpoint, pwl_k=3)
    assert built.model.variable("W").ub == 4.0
    cyclic = [c for c in built.model.constraints if c.name == "cyclic"]
    assert len(cyclic) == 1
    with pytest.raises(CommitmentError, match="target"):
        build_scenario_milp(open_limits, toy_plant, ambient, checkpoint, objective="min-deviation")


def test_problem_validation(toy_plant, open_limits, checkpoint, ambient):
    with pytest.raises(CommitmentError, match="empty"):
        CommitmentProblem([], toy_plant, ambient, checkpoint)
    with pytest.raises(CommitmentError, match="mode"):
        CommitmentProblem([open_limits], toy_plant, ambient, checkpoint, mode="greedy")
    with pytest.raises(CommitmentError, match="penalty"):
        CommitmentProblem([open_limits], toy_plant, ambient, checkpoint, penalty_lambda=-1.0)


def test_horizon_mismatch(toy_plant, checkpoint, ambient):
    short = PccLimitSeries.constant(3, -100.0, 100.0)
    with pytest.raises(CommitmentError, match="inconsistent horizon"):
        commit(CommitmentProblem([short], toy_plant, ambient, checkpoint))


def test_save_and_load(toy_plant, open_limits, checkpoint, ambient, fast_solver, tmp_path):
    result = commit(_problem(toy_plant, [open_limits], checkpoint, ambient, fast_solver))
    path = save_commitment(result, tmp_path / "commitment")
    assert path.name == "commitment.json"
    assert (tmp_path / "commitment" / "schedule_0000.csv").exists()
    back = load_commitment(tmp_path / "commitment")
    assert back.w_da_star == result.w_da_star
    assert [pt.mu for pt in back.schedules[0]] == [pt.mu for pt in result.schedules[0]]
    assert back.summary()["n_scenarios"] == 1


def test_load_missing_commitment(tmp_path):
    with pytest.raises(CommitmentError, match="cannot read"):
        load_commitment(tmp_path)
