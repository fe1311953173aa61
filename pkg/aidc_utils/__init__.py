"""
AIDC Grid Operation Framework

Battery-assisted, grid-aware operation of an AI data center: PCC limits from a DC network
model, limit-scenario ensembles, day-ahead workload commitment and receding-horizon
real-time dispatch, all solved by a bundled MILP kernel.
"""

__version__ = "0.1.0"
__author__ = "AIDC Grid Operation Team"

from .branch_bound import brute_force, solve_milp
from .commitment import CommitmentProblem, CommitmentResult, commit, max_deliverable
from .config import ExperimentConfig, PlantConfig, SolverOptions, load_experiment_config
from .dispatch import DayMetrics, RtInputs, simulate_day
from .grid_limits import NetworkCase, PccLimitSeries, derive_pcc_limits, load_case
from .milp_model import MilpModel, SolveStatus
from .model_core import CheckpointPattern, OperatingPoint, SystemState, validate_trajectory
from .pipeline import audit, report, run_day, run_experiment, sweep
from .run_directory import RunDirectory, StageError
from .scenarios import ScenarioSet, filter_coverage, generate_ensemble
from .series import SeriesBundle, ingest_series

__all__ = [
    "CheckpointPattern",
    "CommitmentProblem",
    "CommitmentResult",
    "DayMetrics",
    "ExperimentConfig",
    "MilpModel",
    "NetworkCase",
    "OperatingPoint",
    "PccLimitSeries",
    "PlantConfig",
    "RtInputs",
    "RunDirectory",
    "ScenarioSet",
    "SeriesBundle",
    "SolveStatus",
    "SolverOptions",
    "StageError",
    "SystemState",
    "audit",
    "brute_force",
    "commit",
    "derive_pcc_limits",
    "filter_coverage",
    "generate_ensemble",
    "ingest_series",
    "load_case",
    "load_experiment_config",
    "max_deliverable",
    "report",
    "run_day",
    "run_experiment",
    "simulate_day",
    "solve_milp",
    "sweep",
    "validate_trajectory",
]
