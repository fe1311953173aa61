import pytest
import yaml

from aidc_utils.config import (
    BessConfig,
    ComputeConfig,
    ConfigError,
    DEFAULT_N_SERVER,
    ExperimentConfig,
    GridConfig,
    HorizonConfig,
    PlantConfig,
    ScenarioConfig,
    apply_overrides,
    config_hash,
    config_keys,
    dump_experiment_config,
    experiment_config_from_dict,
    load_experiment_config,
)

from .conftest import FIXTURE_CONFIG


def test_per_server_power_at_full_throughput():
    assert ComputeConfig().server_watts(1.0) == pytest.approx(233.5)


def test_fleet_size_derived_from_capacity():
    assert ComputeConfig.from_capacity(250.0).n_server == DEFAULT_N_SERVER
    assert PlantConfig().n_server_from_capacity() == DEFAULT_N_SERVER


@pytest.mark.parametrize(
    "kwargs",
    [
        {"s_min": 0.0},
        {"s_min": 1.0},
        {"eta_ipcs": 1.2},
        {"alpha2": -1.0},
        {"alpha0": 0.0},
        {"alpha0": -5.0},
        {"n_server": 0},
    ],
)
def test_compute_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        ComputeConfig(**kwargs)


def test_bess_bounds_must_be_ordered():
    with pytest.raises(ValueError, match="SoC bounds"):
        BessConfig(e_min=50.0, e_init=40.0)


def test_scaled_energy_keeps_the_floor():
    bess = BessConfig(e_min=40.0, e_max=400.0, e_init=200.0)
    half = bess.scaled_energy(0.5)
    assert half.e_min == 40.0
    assert half.e_max == pytest.approx(220.0)
    assert half.e_init == pytest.approx(120.0)
    empty = bess.without_storage()
    assert empty.e_max == empty.e_min == empty.e_init == 40.0


def test_ramp_limit_scales_with_slot_length():
    grid = GridConfig(r_grid=150.0)
    assert grid.ramp_per_slot(0.25) == pytest.approx(150.0)
    assert grid.ramp_per_slot(1.0) == pytest.approx(600.0)


def test_slot_workload():
    plant = PlantConfig(
        compute=ComputeConfig(n_server=1, r_peak=20800.0), horizon=HorizonConfig(slots=4, dt_hours=0.25)
    )
    assert 4 * plant.slot_workload == pytest.approx(7.488e7)


def test_horizon_must_divide_the_day():
    with pytest.raises(ValueError, match="divide"):
        ExperimentConfig(horizon=HorizonConfig(slots=7, dt_hours=24.0 / 7))
    with pytest.raises(ValueError, match="dt_hours"):
        ExperimentConfig(horizon=HorizonConfig(slots=24, dt_hours=0.25))


def test_day_zero_has_no_history():
    with pytest.raises(ValueError, match="history"):
        ExperimentConfig(days=[0])


def test_csv_paths_come_together(tmp_path):
    price = tmp_path / "price.csv"
    price.write_text("timestamp,price\n")
    with pytest.raises(ValueError, match="together"):
        ExperimentConfig(price_csv=str(price))


def test_bundled_case_names_need_no_file():
    cfg = ExperimentConfig(grid=GridConfig(case_path="case3"))
    assert cfg.grid.case_path == "case3"
    with pytest.raises(ValueError, match="does not exist"):
        ExperimentConfig(grid=GridConfig(case_path="no_such_case.m"))


def test_scenario_alpha_range():
    with pytest.raises(ValueError):
        ScenarioConfig(alpha=1.0)


def test_load_fixture_config():
    cfg = load_experiment_config(str(FIXTURE_CONFIG))
    assert cfg.name == "fixture_day"
    assert cfg.horizon.slots == 24
    assert cfg.grid.case_path == "case3_congestion"
    assert cfg.scenarios.n_raw == 10
    assert cfg.uses_synthetic


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("bess:\n  e_maxx: 10\n")
    with pytest.raises(ConfigError, match="e_maxx"):
        load_experiment_config(str(path))
    with pytest.raises(ConfigError, match="top-level"):
        experiment_config_from_dict({"bogus": 1})


def test_invalid_value_becomes_config_error():
    with pytest.raises(ConfigError, match="r_grid"):
        experiment_config_from_dict({"grid": {"r_grid": -1}})


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_experiment_config(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("bess: [unclosed\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_experiment_config(str(bad))


def test_relative_case_path_resolved_against_config(tmp_path):
    (tmp_path / "mycase.m").write_text((FIXTURE_CONFIG.parent.parent / "aidc_utils" / "data" / "case3.m").read_text())
    path = tmp_path / "exp.yaml"
    path.write_text("grid:\n  case_path: mycase.m\n")
    cfg = load_experiment_config(str(path))
    assert cfg.grid.case_path == str((tmp_path / "mycase.m").resolve())


def test_overrides_parse_yaml_scalars():
    cfg = apply_overrides(ExperimentConfig(), {"bess.e_max": "600", "days": "[6, 7]", "dispatch.debug_mps": "true"})
    assert cfg.bess.e_max == 600
    assert cfg.days == [6, 7]
    assert cfg.dispatch.debug_mps is True


def test_override_accepts_dashes():
    cfg = apply_overrides(ExperimentConfig(), {"grid.line-scale": 1.25})
    assert cfg.grid.line_scale == 1.25


@pytest.mark.parametrize("key", ["bess.nope", "nope", "bess", "a.b.c"])
def test_unknown_override_key(key):
    with pytest.raises(ConfigError, match="unknown config key"):
        apply_overrides(ExperimentConfig(), {key: 1})


def test_config_hash_tracks_content():
    base = ExperimentConfig()
    assert config_hash(base) == config_hash(ExperimentConfig())
    assert config_hash(base) != config_hash(apply_overrides(base, {"seed": 1}))


def test_dump_reloads_to_the_same_config(tmp_path):
    cfg = apply_overrides(ExperimentConfig(), {"bess.e_max": 500})
    path = tmp_path / "dumped.yaml"
    dump_experiment_config(cfg, str(path))
    assert yaml.safe_load(path.read_text())["bess"]["e_max"] == 500
    assert config_hash(load_experiment_config(str(path))) == config_hash(cfg)


def test_config_keys_cover_every_block():
    keys = config_keys()
    assert "seed" in keys
    assert "bess.e_max" in keys
    assert "rt_solver.node_limit" in keys
    assert "bess" not in keys


def test_idle_power_must_be_positive():
    with pytest.raises(ValueError, match="alpha0"):
        ComputeConfig(alpha0=0.0)
    with pytest.raises(ConfigError, match="alpha0"):
        apply_overrides(ExperimentConfig(), {"compute.alpha0": 0})
