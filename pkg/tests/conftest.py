"""Shared fixtures: a small plant, hand-made limit envelopes and the bundled fixture experiment."""

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from aidc_utils.config import (
    BessConfig,
    ComputeConfig,
    HorizonConfig,
    PlantConfig,
    SolverOptions,
    ThermalConfig,
    load_experiment_config,
)
from aidc_utils.grid_limits import PccLimitSeries, load_case
from aidc_utils.milp_model import MilpModel
from aidc_utils.model_core import CheckpointPattern

FIXTURE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "fixture_day.yaml"

TOY_SERVERS = 100_000  # 23.35 MW at full throughput
TOY_SLOTS = 4


@pytest.fixture
def toy_plant() -> PlantConfig:
    """Four 15-minute slots, no thermal band, a 10 MW / 20 MWh battery."""
    return PlantConfig(
        compute=ComputeConfig(n_server=TOY_SERVERS),
        thermal=ThermalConfig(enabled=False, q_cool_max=1.0),
        bess=BessConfig(p_max=10.0, e_min=2.0, e_max=20.0, e_init=10.0, c_deg=0.0),
        horizon=HorizonConfig(slots=TOY_SLOTS, dt_hours=0.25, checkpoint_period=2),
    )


@pytest.fixture
def bridging_plant(toy_plant) -> PlantConfig:
    """Same plant with a battery strong enough to carry the cluster through one collapsed slot."""
    return replace(toy_plant, bess=replace(toy_plant.bess, p_max=30.0))


@pytest.fixture
def thermal_plant(toy_plant) -> PlantConfig:
    """Toy plant with the indoor temperature band enforced."""
    return replace(toy_plant, thermal=ThermalConfig(t_in_init=24.0, q_cool_max=60.0))


@pytest.fixture
def checkpoint() -> CheckpointPattern:
    return CheckpointPattern.periodic(2, TOY_SLOTS)


@pytest.fixture
def ambient() -> list:
    return [25.0] * TOY_SLOTS


@pytest.fixture
def open_limits() -> PccLimitSeries:
    return PccLimitSeries.constant(TOY_SLOTS, -100.0, 100.0, r_grid=1000.0)


@pytest.fixture
def congested_limits() -> PccLimitSeries:
    """Import limit collapses to zero in slot 2."""
    return PccLimitSeries(
        np.full(TOY_SLOTS, -100.0),
        np.array([100.0, 100.0, 0.0, 100.0]),
        r_grid=1000.0,
        collapsed=np.array([False, False, True, False]),
    )


@pytest.fixture
def fast_solver() -> SolverOptions:
    return SolverOptions(node_limit=5000, time_limit=60.0)


@pytest.fixture
def case3():
    return load_case("case3")


@pytest.fixture
def congestion_case():
    return load_case("case3_congestion")


@pytest.fixture
def fixture_config(tmp_path):
    """CI fixture experiment shrunk for tests, writing under tmp_path."""
    return load_experiment_config(
        str(FIXTURE_CONFIG),
        {
            "run_root": str(tmp_path / "runs"),
            "scenarios.n_raw": 4,
            "scenarios.alpha": 0.5,
            "commitment.pwl_breakpoints": 5,
            "dispatch.horizon": 4,
            "solver.node_limit": 2000,
            "rt_solver.node_limit": 500,
        },
    )


@pytest.fixture
def knapsack():
    """max 3a + 4b + 2c s.t. 2a + 3b + 2c <= 4, binary; optimum 5 at a = c = 1, LP bound 17/3."""
    model = MilpModel("knap")
    a, b, c = (model.add_binary(n) for n in "abc")
    model.add_constraint(2 * a + 3 * b + 2 * c, "<=", 4.0, name="cap")
    model.set_objective(3 * a + 4 * b + 2 * c, "max")
    return model.finalize()
