"""Configuration management for battery-assisted AIDC grid operation."""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

# Constants
ALPHA0_W = 1052.7
ALPHA1_W = -2288.6
ALPHA2_W = 1469.4
DEFAULT_P_IT_CAP_MW = 250.0
DEFAULT_N_SERVER = 1_070_663
DEFAULT_R_PEAK = 20800.0
SLOTS_PER_DAY = 96
BASE_INTERVAL_H = 0.25
SECONDS_PER_HOUR = 3600.0

PWL_MODES = ("convex", "exact")
COMMIT_MODES = ("decomposed", "joint")
PRICE_FORECASTS = ("perfect", "persistence")
TERMINAL_VALUES = ("mean-price", "none")
REALIZATIONS = ("network", "scenario")
BUNDLED_CASE_NAMES = ("case3", "case3_congestion")
DEFAULT_CASE = "case3_congestion"


class ConfigError(ValueError):
    """Raised when an experiment configuration cannot be loaded or validated."""


@dataclass(frozen=True)
class ComputeConfig:
    """Homogeneous computing cluster and its power-throughput law."""

    n_server: int = DEFAULT_N_SERVER
    r_peak: float = DEFAULT_R_PEAK
    s_min: float = 0.755
    alpha0: float = ALPHA0_W
    alpha1: float = ALPHA1_W
    alpha2: float = ALPHA2_W
    eta_ipcs: float = 0.95
    p_it_cap: float = DEFAULT_P_IT_CAP_MW

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.n_server < 1:
            raise ValueError("n_server must be at least 1")
        if self.r_peak <= 0:
            raise ValueError("r_peak must be positive")
        if not 0.0 < self.s_min < 1.0:
            raise ValueError(f"s_min must lie in (0, 1), got {self.s_min}")
        if not 0.0 < self.eta_ipcs <= 1.0:
            raise ValueError(f"eta_ipcs must lie in (0, 1], got {self.eta_ipcs}")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive (idle server power)")
        if self.alpha2 <= 0:
            raise ValueError("alpha2 must be positive (strictly convex power law)")
        if self.min_server_watts() <= 0:
            raise ValueError("per-server power must stay positive on [s_min, 1]")
        if self.p_it_cap <= 0:
            raise ValueError("p_it_cap must be positive")

    def server_watts(self, s: float) -> float:
        return self.alpha0 + self.alpha1 * s + self.alpha2 * s * s

    def min_server_watts(self) -> float:
        candidates = [self.s_min, 1.0]
        vertex = -self.alpha1 / (2.0 * self.alpha2)
        if self.s_min < vertex < 1.0:
            candidates.append(vertex)
        return min(self.server_watts(s) for s in candidates)

    @classmethod
    def from_capacity(cls, p_it_cap: float = DEFAULT_P_IT_CAP_MW, **overrides) -> "ComputeConfig":
        """Derive n_server from the aggregate IT capacity at full throughput."""
        alpha0 = overrides.get("alpha0", ALPHA0_W)
        alpha1 = overrides.get("alpha1", ALPHA1_W)
        alpha2 = overrides.get("alpha2", ALPHA2_W)
        n_server = math.floor(p_it_cap * 1e6 / (alpha0 + alpha1 + alpha2))
        return cls(n_server=n_server, p_it_cap=p_it_cap, **overrides)


@dataclass(frozen=True)
class ThermalConfig:
    """Lumped RC thermal model of the data hall and its chiller plant."""

    c_th: float = 120.0
    r_th: float = 0.2
    t_min: float = 18.0
    t_max: float = 26.0
    q_cool_max: float = 250.0
    eir_nom: float = 1.0 / 4.05
    t_in_init: float = 26.0
    enabled: bool = True
    eir_valid_min: float = -10.0
    eir_valid_max: float = 45.0

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.c_th <= 0 or self.r_th <= 0:
            raise ValueError("c_th and r_th must be positive")
        if self.t_min >= self.t_max:
            raise ValueError(f"t_min ({self.t_min}) must be below t_max ({self.t_max})")
        if self.q_cool_max <= 0:
            raise ValueError("q_cool_max must be positive")
        if self.eir_nom <= 0:
            raise ValueError("eir_nom must be positive")
        if self.enabled and not self.t_min <= self.t_in_init <= self.t_max:
            raise ValueError("t_in_init must lie inside the indoor temperature band")


@dataclass(frozen=True)
class BessConfig:
    """Co-located battery energy storage system."""

    p_max: float = 400.0
    eta_ch: float = 0.95
    eta_dis: float = 0.95
    e_min: float = 40.0
    e_max: float = 400.0
    e_init: float = 200.0
    c_deg: float = 30.0

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")
        for name in ("eta_ch", "eta_dis"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if not 0.0 <= self.e_min <= self.e_init <= self.e_max:
            raise ValueError(
                f"SoC bounds must satisfy 0 <= e_min <= e_init <= e_max, got "
                f"{self.e_min}, {self.e_init}, {self.e_max}"
            )
        if self.c_deg < 0:
            raise ValueError("c_deg must be non-negative")

    def scaled_energy(self, factor: float) -> "BessConfig":
        """Scale usable energy (e_max - e_min), moving e_init proportionally."""
        if factor < 0:
            raise ValueError("energy scale factor must be non-negative")
        return replace(
            self,
            e_max=self.e_min + factor * (self.e_max - self.e_min),
            e_init=self.e_min + factor * (self.e_init - self.e_min),
        )

    def without_storage(self) -> "BessConfig":
        return self.scaled_energy(0.0)


@dataclass(frozen=True)
class HorizonConfig:
    """Scheduling horizon: slot count, slot length and checkpoint spacing."""

    slots: int = SLOTS_PER_DAY
    dt_hours: float = BASE_INTERVAL_H
    checkpoint_period: int = 4

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.slots < 1:
            raise ValueError("slots must be at least 1")
        if self.dt_hours <= 0:
            raise ValueError("dt_hours must be positive")
        if self.checkpoint_period < 1:
            raise ValueError("checkpoint_period must be at least 1")

    @property
    def dt_seconds(self) -> float:
        return self.dt_hours * SECONDS_PER_HOUR


@dataclass(frozen=True)
class PlantConfig:
    """Everything the per-slot physics needs: compute, thermal, storage, horizon."""

    compute: ComputeConfig = field(default_factory=ComputeConfig)
    thermal: ThermalConfig = field(default_factory=ThermalConfig)
    bess: BessConfig = field(default_factory=BessConfig)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)

    @property
    def dt_hours(self) -> float:
        return self.horizon.dt_hours

    @property
    def slot_workload(self) -> float:
        """Workload units processed by one slot at full throughput (s=1, mu=1)."""
        return self.compute.n_server * self.compute.r_peak * self.horizon.dt_seconds

    def n_server_from_capacity(self) -> int:
        """Fleet size implied by the aggregate IT capacity at full throughput."""
        c = self.compute
        return math.floor(c.p_it_cap * 1e6 / (c.alpha0 + c.alpha1 + c.alpha2))


@dataclass(frozen=True)
class GridConfig:
    """Transmission case and PCC interconnection terms."""

    case_path: Optional[str] = None
    loc_bus: Optional[int] = None
    import_cap: float = 1000.0
    export_floor: float = -1000.0
    r_grid: float = 150.0  # MW per 15-min interval
    line_scale: float = 1.0
    demand_reference: Optional[float] = None

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.export_floor > self.import_cap:
            raise ValueError("export_floor must not exceed import_cap")
        if self.r_grid <= 0:
            raise ValueError("r_grid must be positive")
        if self.line_scale <= 0:
            raise ValueError("line_scale must be positive")
        if self.demand_reference is not None and self.demand_reference <= 0:
            raise ValueError("demand_reference must be positive")

    def ramp_per_slot(self, dt_hours: float) -> float:
        return self.r_grid * dt_hours / BASE_INTERVAL_H


@dataclass(frozen=True)
class ScenarioConfig:
    """Analog-ensemble surrogate and coverage filter settings."""

    n_raw: int = 200
    alpha: float = 0.1
    k_neighbors: int = 5
    ar_coef: float = 0.9
    noise_std: float = 0.03
    one_sided: bool = False
    workers: int = 1

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.n_raw < 2:
            raise ValueError("n_raw must be at least 2")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")
        if not -1.0 < self.ar_coef < 1.0:
            raise ValueError("ar_coef must lie in (-1, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class CommitmentConfig:
    """Day-ahead commitment settings."""

    mode: str = "decomposed"
    penalty_lambda: float = 0.0
    pwl_breakpoints: int = 9
    pwl_mode: str = "convex"
    workers: int = 1

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.mode not in COMMIT_MODES:
            raise ValueError(f"mode must be one of {COMMIT_MODES}, got {self.mode!r}")
        if self.pwl_mode not in PWL_MODES:
            raise ValueError(f"pwl_mode must be one of {PWL_MODES}, got {self.pwl_mode!r}")
        if self.penalty_lambda < 0:
            raise ValueError("penalty_lambda must be non-negative")
        if self.pwl_breakpoints < 2:
            raise ValueError("pwl_breakpoints must be at least 2")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class DispatchConfig:
    """Real-time receding-horizon controller settings."""

    horizon: int = 20
    m_rt: float = 1e6
    penalty_margin: float = 1e3
    price_forecast: str = "perfect"
    soc_terminal_value: str = "mean-price"
    debug_mps: bool = False

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.m_rt <= 0 or self.penalty_margin <= 0:
            raise ValueError("m_rt and penalty_margin must be positive")
        if self.price_forecast not in PRICE_FORECASTS:
            raise ValueError(f"price_forecast must be one of {PRICE_FORECASTS}")
        if self.soc_terminal_value not in TERMINAL_VALUES:
            raise ValueError(f"soc_terminal_value must be one of {TERMINAL_VALUES}")


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and limits for the LP/MILP kernel."""

    feasibility_tol: float = 1e-7
    integrality_tol: float = 1e-6
    mip_gap: float = 1e-6
    optimality_tol: float = 1e-9
    pivot_tol: float = 1e-9
    node_limit: int = 20000
    time_limit: float = 300.0
    max_lp_iterations: int = 200000
    refactor_interval: int = 50
    bland_after: int = 200

    def __post_init__(self):
        """Validate configuration after initialization."""
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"solver option {f.name} must be positive")


@dataclass(frozen=True)
class SyntheticSeriesSpec:
    """Seeded sinusoid-plus-noise generator for price, temperature and demand."""

    days: int = 8
    start: str = "2026-01-05"
    seed: int = 7
    price_base: float = 90.0
    price_amplitude: float = 70.0
    price_noise: float = 8.0
    temp_base: float = 23.0
    temp_amplitude: float = 3.0
    temp_noise: float = 0.3
    demand_base: float = 9000.0
    demand_amplitude: float = 1300.0
    demand_noise: float = 60.0

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.days < 1:
            raise ValueError("synthetic series needs at least one day")
        if min(self.price_noise, self.temp_noise, self.demand_noise) < 0:
            raise ValueError("noise levels must be non-negative")
        if self.demand_base <= self.demand_amplitude:
            raise ValueError("demand_base must exceed demand_amplitude")


@dataclass(frozen=True)
class SweepAxes:
    """Cross-product axes of a design sweep."""

    line_scales: List[float] = field(default_factory=lambda: [1.0])
    bess_scales: List[float] = field(default_factory=lambda: [1.0])
    checkpoint_periods: List[int] = field(default_factory=lambda: [4])
    workers: int = 1

    def __post_init__(self):
        """Validate configuration after initialization."""
        if not self.line_scales or not self.bess_scales or not self.checkpoint_periods:
            raise ValueError("sweep axes must be non-empty")
        if any(k <= 0 for k in self.line_scales):
            raise ValueError("line scales must be positive")
        if any(b < 0 for b in self.bess_scales):
            raise ValueError("BESS energy scales must be non-negative")
        if any(p < 1 for p in self.checkpoint_periods):
            raise ValueError("checkpoint periods must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete experiment: data sources, every module config, sweep axes, days and seed."""

    name: str = "experiment"
    price_csv: Optional[str] = None
    temperature_csv: Optional[str] = None
    demand_csv: Optional[str] = None
    synthetic: SyntheticSeriesSpec = field(default_factory=SyntheticSeriesSpec)
    compute: ComputeConfig = field(default_factory=ComputeConfig)
    thermal: ThermalConfig = field(default_factory=ThermalConfig)
    bess: BessConfig = field(default_factory=BessConfig)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    scenarios: ScenarioConfig = field(default_factory=ScenarioConfig)
    commitment: CommitmentConfig = field(default_factory=CommitmentConfig)
    dispatch: DispatchConfig = field(default_factory=DispatchConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    rt_solver: SolverOptions = field(default_factory=lambda: SolverOptions(node_limit=5000, time_limit=60.0))
    sweep: SweepAxes = field(default_factory=SweepAxes)
    days: List[int] = field(default_factory=lambda: [7])
    seed: int = 2026
    run_root: str = "runs"
    realization: str = "network"
    realization_scenario: int = 0

    def __post_init__(self):
        """Validate configuration after initialization."""
        if not self.name or any(ch in self.name for ch in "/\\ "):
            raise ValueError(f"experiment name must be a plain token, got {self.name!r}")
        paths = [self.price_csv, self.temperature_csv, self.demand_csv]
        if any(paths) and not all(paths):
            raise ValueError("price, temperature and demand CSVs must be given together")
        case = None if self.grid.case_path in BUNDLED_CASE_NAMES else self.grid.case_path
        for path in [*paths, case]:
            if path and not Path(path).is_file():
                raise ValueError(f"referenced file does not exist: {path}")
        if not self.days:
            raise ValueError("day list must be non-empty")
        if any(d < 1 for d in self.days):
            raise ValueError("days are 0-based and need at least one history day before them")
        if self.realization not in REALIZATIONS:
            raise ValueError(f"realization must be one of {REALIZATIONS}")
        if SLOTS_PER_DAY % self.horizon.slots != 0:
            raise ValueError(f"horizon.slots must divide {SLOTS_PER_DAY}")
        expected_dt = 24.0 / self.horizon.slots
        if not math.isclose(self.horizon.dt_hours, expected_dt):
            raise ValueError(f"horizon.dt_hours must be {expected_dt} for {self.horizon.slots} slots per day")

    @property
    def plant(self) -> PlantConfig:
        return PlantConfig(compute=self.compute, thermal=self.thermal, bess=self.bess, horizon=self.horizon)

    @property
    def uses_synthetic(self) -> bool:
        return self.price_csv is None


BLOCK_TYPES = {
    "synthetic": SyntheticSeriesSpec,
    "compute": ComputeConfig,
    "thermal": ThermalConfig,
    "bess": BessConfig,
    "horizon": HorizonConfig,
    "grid": GridConfig,
    "scenarios": ScenarioConfig,
    "commitment": CommitmentConfig,
    "dispatch": DispatchConfig,
    "solver": SolverOptions,
    "rt_solver": SolverOptions,
    "sweep": SweepAxes,
}


def _build_block(block: str, values: Mapping[str, Any]):
    cls = BLOCK_TYPES[block]
    if not isinstance(values, Mapping):
        raise ConfigError(f"config block '{block}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{block}': {', '.join(sorted(unknown))}")
    return cls(**values)


def experiment_config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    """Build an ExperimentConfig from a nested mapping (as read from YAML).

    Raises:
        ConfigError: on unknown keys or any invariant violation
    """
    data = dict(data or {})
    top_level = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - top_level
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    try:
        kwargs: Dict[str, Any] = {}
        for key, value in data.items():
            kwargs[key] = _build_block(key, value) if key in BLOCK_TYPES else value
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e


def experiment_config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return asdict(cfg)


def dump_experiment_config(cfg: ExperimentConfig, path: Optional[str] = None) -> str:
    """Serialize a config to YAML, optionally writing it to path."""
    text = yaml.safe_dump(experiment_config_to_dict(cfg), sort_keys=True, default_flow_style=False)
    if path:
        Path(path).write_text(text, encoding="utf-8")
    return text


def load_experiment_config(path: str, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    Load an experiment config file and apply dotted-key overrides.

    Args:
        path: YAML file with one mapping per config block
        overrides: {"bess.e_max": 400, "seed": 3, ...}

    Returns:
        Validated ExperimentConfig
    """
    try:
        with open(path, encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    base_dir = Path(path).resolve().parent
    for key in ("price_csv", "temperature_csv", "demand_csv"):
        if data.get(key):
            data[key] = str((base_dir / data[key]).resolve()) if not Path(data[key]).is_absolute() else data[key]
    grid = data.get("grid") or {}
    case_path = grid.get("case_path") if isinstance(grid, dict) else None
    if case_path and case_path not in BUNDLED_CASE_NAMES and not Path(case_path).is_absolute():
        grid["case_path"] = str((base_dir / grid["case_path"]).resolve())
    return apply_overrides(experiment_config_from_dict(data), overrides or {})


def apply_overrides(cfg: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    """Apply {"block.key": value} overrides; values given as strings are parsed as YAML scalars."""
    if not overrides:
        return cfg
    data = experiment_config_to_dict(cfg)
    for dotted, raw in overrides.items():
        value = yaml.safe_load(raw) if isinstance(raw, str) else raw
        parts = dotted.replace("-", "_").split(".")
        if len(parts) == 1:
            if parts[0] not in data or parts[0] in BLOCK_TYPES:
                raise ConfigError(f"unknown config key: {dotted}")
            data[parts[0]] = value
        elif len(parts) == 2 and parts[0] in BLOCK_TYPES:
            block, key = parts
            if key not in data[block]:
                raise ConfigError(f"unknown config key: {dotted}")
            data[block][key] = value
        else:
            raise ConfigError(f"unknown config key: {dotted}")
    return experiment_config_from_dict(data)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form of the configuration."""
    canonical = json.dumps(experiment_config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def config_keys() -> List[str]:
    """Every dotted config key, used to generate CLI flags."""
    keys = [f.name for f in fields(ExperimentConfig) if f.name not in BLOCK_TYPES]
    for block, cls in BLOCK_TYPES.items():
        keys.extend(f"{block}.{f.name}" for f in fields(cls))
    return keys
