"""
Day-ahead workload commitment over the retained limit scenarios.

The committed level W_DA* is the largest workload every retained scenario can deliver.
In the default decomposed mode it is found as min over scenarios of the per-scenario
maximum, then each scenario is re-solved for the schedule closest to the efficiency
anchor that still delivers W_DA*. The joint mode solves all scenarios in one model with
a shared W and the deviation penalty weighted by penalty_lambda.

Workload inside the models is measured in full-throughput slot equivalents (one slot of
the whole fleet at s=1, i.e. n_server * r_peak * dt seconds); results are reported in
workload units.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import COMMIT_MODES, PWL_MODES, ExperimentConfig, PlantConfig, SolverOptions
from .formulation import AidcBlock, PwlSolve, integer_hint, solve_pwl
from .grid_limits import PccLimitSeries
from .milp_model import LinearExpr, MilpModel, Sense, SolveStats, SolveStatus, Variable
from .model_core import (
    CheckpointPattern,
    OperatingPoint,
    SystemState,
    efficient_throughput,
    simulate_states,
    validate_trajectory,
)
from .scenarios import LimitScenario

logger = logging.getLogger(__name__)

COMMITMENT_FILE = "commitment.json"
TARGET_BACKOFF = 1e-9
DELIVERABILITY_TOL = 1e-6
OBJECTIVES = ("max-workload", "min-deviation")
SCHEDULE_COLUMNS = ["slot", "mu", "s", "q_cool", "p_ch", "p_dis", "beta", "p_it"]


class CommitmentError(ValueError):
    """Raised on an inconsistent commitment problem or an unusable solver outcome."""


def _limits_of(sc: Union[LimitScenario, PccLimitSeries]) -> PccLimitSeries:
    return sc.limits if isinstance(sc, LimitScenario) else sc


@dataclass
class CommitmentProblem:
    """Everything the day-ahead stage needs."""

    scenarios: Sequence[Union[LimitScenario, PccLimitSeries]]
    plant: PlantConfig
    t_amb: Sequence[float]
    checkpoint: CheckpointPattern
    s_anchor: Optional[float] = None
    penalty_lambda: float = 0.0
    pwl_breakpoints: int = 9
    mode: str = "decomposed"
    pwl_mode: str = "convex"
    initial_state: Optional[SystemState] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    workers: int = 1

    def __post_init__(self):
        """Validate the problem."""
        if not self.scenarios:
            raise CommitmentError("the retained scenario set is empty")
        if self.penalty_lambda < 0:
            raise CommitmentError("penalty_lambda must be non-negative")
        if self.pwl_breakpoints < 2:
            raise CommitmentError("at least two PWL breakpoints are required")
        if self.mode not in COMMIT_MODES:
            raise CommitmentError(f"mode must be one of {COMMIT_MODES}, got {self.mode!r}")
        if self.pwl_mode not in PWL_MODES:
            raise CommitmentError(f"pwl_mode must be one of {PWL_MODES}, got {self.pwl_mode!r}")
        if self.s_anchor is None:
            self.s_anchor = efficient_throughput(self.plant.compute)
        if self.initial_state is None:
            self.initial_state = SystemState.initial(self.plant)

    @classmethod
    def from_config(
        cls,
        cfg: ExperimentConfig,
        scenarios: Sequence[Union[LimitScenario, PccLimitSeries]],
        t_amb: Sequence[float],
        checkpoint: Optional[CheckpointPattern] = None,
    ) -> "CommitmentProblem":
        plant = cfg.plant
        return cls(
            scenarios=list(scenarios),
            plant=plant,
            t_amb=list(t_amb),
            checkpoint=checkpoint or CheckpointPattern.periodic(plant.horizon.checkpoint_period, plant.horizon.slots),
            penalty_lambda=cfg.commitment.penalty_lambda,
            pwl_breakpoints=cfg.commitment.pwl_breakpoints,
            mode=cfg.commitment.mode,
            pwl_mode=cfg.commitment.pwl_mode,
            solver=cfg.solver,
            workers=cfg.commitment.workers,
        )


@dataclass
class ScenarioMilp:
    model: MilpModel
    block: AidcBlock
    w_var: Variable


def _check_horizon(limits: PccLimitSeries, plant: PlantConfig, t_amb: Sequence[float], ckpt: CheckpointPattern):
    slots = plant.horizon.slots
    if len(limits) != slots or len(t_amb) != slots or len(ckpt) != slots:
        raise CommitmentError(
            f"inconsistent horizon: {slots} configured slots, {len(limits)} limit slots, "
            f"{len(t_amb)} temperatures, {len(ckpt)} checkpoint slots"
        )


def build_scenario_milp(
    sc: Union[LimitScenario, PccLimitSeries],
    plant: PlantConfig,
    t_amb: Sequence[float],
    checkpoint: CheckpointPattern,
    objective: str = "max-workload",
    target: Optional[float] = None,
    s_anchor: Optional[float] = None,
    pwl_k: int = 9,
    pwl_mode: str = "convex",
    initial_state: Optional[SystemState] = None,
    name: str = "da",
) -> ScenarioMilp:
    """
    Build the single-scenario day-ahead model.

    Args:
        sc: limit scenario (or bare limit series)
        plant: plant configuration
        t_amb: ambient temperature per slot
        checkpoint: checkpoint pattern
        objective: "max-workload" (maximize W) or "min-deviation" (deliver target, minimize |s - s*|)
        target: workload to deliver in slot equivalents, required for min-deviation
        s_anchor: efficiency anchor, defaults to the most efficient throughput
        pwl_k: breakpoint count
        pwl_mode: "convex" or "exact"
        initial_state: state at the start of the day
        name: model name

    Returns:
        ScenarioMilp with the model, the slot block and the workload variable W

    Raises:
        CommitmentError: on an inconsistent horizon or a missing target
    """
    limits = _limits_of(sc)
    _check_horizon(limits, plant, t_amb, checkpoint)
    if objective not in OBJECTIVES:
        raise CommitmentError(f"objective must be one of {OBJECTIVES}")
    if objective == "min-deviation" and target is None:
        raise CommitmentError("min-deviation needs a workload target")
    anchor = efficient_throughput(plant.compute) if s_anchor is None else s_anchor
    state = initial_state or SystemState.initial(plant)

    model = MilpModel(name)
    block = AidcBlock(model, plant, limits, t_amb, checkpoint.delta, state, pwl_k, pwl_mode, s_anchor=anchor)
    slots = float(len(limits))
    if objective == "min-deviation":
        w_var = model.add_var("W", min(max(target, 0.0), slots), slots)
    else:
        w_var = model.add_var("W", 0.0, slots)
    model.add_constraint(w_var - block.workload(), Sense.LE, 0.0, "deliver")
    block.add_cyclic_soc(state.e_bess)
    if objective == "max-workload":
        model.set_objective(w_var, "max")
    else:
        model.set_objective(block.deviation(), "min")
    return ScenarioMilp(model.finalize(), block, w_var)


@dataclass(frozen=True)
class _ScenarioTask:
    index: int
    limits: PccLimitSeries
    plant: PlantConfig
    t_amb: Tuple[float, ...]
    checkpoint: CheckpointPattern
    objective: str
    target: Optional[float]
    s_anchor: float
    pwl_k: int
    pwl_mode: str
    initial_state: SystemState
    solver: SolverOptions
    hints: Tuple[Dict[str, float], ...] = ()


@dataclass
class _ScenarioOutcome:
    index: int
    status: SolveStatus
    w_slots: Optional[float]
    points: Optional[List[OperatingPoint]]
    stats: SolveStats
    pwl_mode: str
    message: str = ""
    integers: Dict[str, float] = field(default_factory=dict)


def _solve_scenario(task: _ScenarioTask) -> _ScenarioOutcome:
    def build(mode: str):
        built = build_scenario_milp(
            task.limits, task.plant, task.t_amb, task.checkpoint, task.objective, task.target,
            task.s_anchor, task.pwl_k, mode, task.initial_state, name=f"da{task.index}",
        )
        return built.model, [built.block]

    result: PwlSolve = solve_pwl(build, task.solver, task.pwl_mode, task.hints)
    sol = result.solution
    if not sol.has_solution:
        return _ScenarioOutcome(task.index, sol.status, None, None, sol.stats, result.mode, sol.message)
    block = result.blocks[0]
    points = block.extract(sol.x)
    w_slots = float(sum(pt.s for pt in points))
    integers = integer_hint(result.model, sol.x)
    return _ScenarioOutcome(task.index, sol.status, w_slots, points, sol.stats, result.mode, sol.message, integers)


def _run_tasks(tasks: List[_ScenarioTask], workers: int) -> List[_ScenarioOutcome]:
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_solve_scenario, tasks))
    return [_solve_scenario(task) for task in tasks]


def _usable(outcome: _ScenarioOutcome, what: str) -> _ScenarioOutcome:
    if outcome.points is None:
        raise CommitmentError(
            f"scenario {outcome.index} {what}: solver returned {outcome.status.value} {outcome.message}"
        )
    if outcome.status != SolveStatus.OPTIMAL:
        logger.warning(f"Scenario {outcome.index} {what} stopped at {outcome.status.value}; using the incumbent")
    return outcome


def max_deliverable(
    sc: Union[LimitScenario, PccLimitSeries],
    plant: PlantConfig,
    t_amb: Sequence[float],
    checkpoint: CheckpointPattern,
    pwl_k: int = 9,
    pwl_mode: str = "convex",
    solver: Optional[SolverOptions] = None,
    initial_state: Optional[SystemState] = None,
) -> float:
    """
    Largest workload (units) the scenario can deliver over the day.

    Raises:
        CommitmentError: when the solver finds no feasible schedule
    """
    task = _ScenarioTask(
        index=0,
        limits=_limits_of(sc),
        plant=plant,
        t_amb=tuple(t_amb),
        checkpoint=checkpoint,
        objective="max-workload",
        target=None,
        s_anchor=efficient_throughput(plant.compute),
        pwl_k=pwl_k,
        pwl_mode=pwl_mode,
        initial_state=initial_state or SystemState.initial(plant),
        solver=solver or SolverOptions(),
    )
    _check_horizon(task.limits, plant, t_amb, checkpoint)
    outcome = _usable(_solve_scenario(task), "max-workload")
    return outcome.w_slots * plant.slot_workload


@dataclass
class CommitmentResult:
    """Committed workload, the per-scenario schedules and diagnostics."""

    w_da_star: float  # workload units
    w_da_slots: float  # full-throughput slot equivalents
    schedules: List[List[OperatingPoint]]
    w_max: List[float]  # workload units per scenario
    binding: int
    mode: str
    slot_workload: float
    pwl_modes: List[str] = field(default_factory=list)
    scenario_ids: List[str] = field(default_factory=list)
    stats: SolveStats = field(default_factory=SolveStats)

    def summary(self) -> dict:
        return {
            "w_da_star": self.w_da_star,
            "w_da_slots": self.w_da_slots,
            "w_max": list(self.w_max),
            "binding_scenario": self.binding,
            "mode": self.mode,
            "n_scenarios": len(self.schedules),
            "nodes": self.stats.nodes,
            "lp_iterations": self.stats.lp_iterations,
        }


def _validate_schedule(
    index: int, points: List[OperatingPoint], limits: PccLimitSeries, problem: CommitmentProblem, w_slots: float
) -> None:
    states = simulate_states(problem.initial_state, points, problem.t_amb, problem.plant)
    report = validate_trajectory(
        states, points, limits, problem.checkpoint, problem.plant, problem.t_amb,
        check_cyclic=True, pwl_k=problem.pwl_breakpoints,
    )
    if not report.ok:
        raise CommitmentError(f"schedule of scenario {index} violates {report.summary()}")
    delivered = sum(pt.s for pt in points)
    if delivered < w_slots * (1.0 - DELIVERABILITY_TOL) - 1e-12:
        raise CommitmentError(f"schedule of scenario {index} delivers {delivered:.9g} < committed {w_slots:.9g} slots")


def _task(
    problem: CommitmentProblem,
    index: int,
    objective: str,
    target: Optional[float],
    hints: Tuple[Dict[str, float], ...] = (),
) -> _ScenarioTask:
    return _ScenarioTask(
        index=index,
        limits=_limits_of(problem.scenarios[index]),
        plant=problem.plant,
        t_amb=tuple(problem.t_amb),
        checkpoint=problem.checkpoint,
        objective=objective,
        target=target,
        s_anchor=problem.s_anchor,
        pwl_k=problem.pwl_breakpoints,
        pwl_mode=problem.pwl_mode,
        initial_state=problem.initial_state,
        solver=problem.solver,
        hints=hints,
    )


def _joint(
    problem: CommitmentProblem, maxima: Sequence[_ScenarioOutcome]
) -> Tuple[float, List[List[OperatingPoint]], SolveStats, str]:
    plant = problem.plant

    def build(mode: str):
        model = MilpModel("da_joint")
        w_var = model.add_var("W", 0.0, float(plant.horizon.slots))
        blocks = []
        for i, sc in enumerate(problem.scenarios):
            block = AidcBlock(
                model, plant, _limits_of(sc), problem.t_amb, problem.checkpoint.delta, problem.initial_state,
                problem.pwl_breakpoints, mode, s_anchor=problem.s_anchor, prefix=f"s{i}_",
            )
            model.add_constraint(w_var - block.workload(), Sense.LE, 0.0, f"deliver{i}")
            block.add_cyclic_soc(problem.initial_state.e_bess)
            blocks.append(block)
        objective = LinearExpr.of(w_var)
        for block in blocks:
            objective.add(block.deviation(), -problem.penalty_lambda)
        model.set_objective(objective, "max")
        return model.finalize(), blocks

    # each scenario's max-workload binaries are jointly feasible with W = 0
    seed = {f"s{o.index}_{name}": value for o in maxima for name, value in o.integers.items()}
    result = solve_pwl(build, problem.solver, problem.pwl_mode, [seed])
    sol = result.solution
    if not sol.has_solution:
        raise CommitmentError(f"joint commitment model: solver returned {sol.status.value} {sol.message}")
    if sol.status != SolveStatus.OPTIMAL:
        logger.warning(f"Joint commitment stopped at {sol.status.value}; using the incumbent")
    schedules = [block.extract(sol.x) for block in result.blocks]
    w_slots = min(sum(pt.s for pt in points) for points in schedules)
    w_slots = min(w_slots, float(sol.x[result.model.variable("W").index]))
    return w_slots, schedules, sol.stats, result.mode


def commit(problem: CommitmentProblem) -> CommitmentResult:
    """
    Compute the day-ahead committed workload and one schedule per retained scenario.

    Args:
        problem: scenarios, plant, ambient series, checkpoints and solver settings

    Returns:
        CommitmentResult; every schedule is validated and delivers W_DA*

    Raises:
        CommitmentError: on an empty scenario set, an inconsistent horizon or an infeasible scenario
    """
    for sc in problem.scenarios:
        _check_horizon(_limits_of(sc), problem.plant, problem.t_amb, problem.checkpoint)
    n = len(problem.scenarios)
    slot_workload = problem.plant.slot_workload
    logger.info(
        f"Committing over {n} scenarios ({problem.mode} mode, K={problem.pwl_breakpoints}, {problem.pwl_mode} PWL)"
    )

    max_tasks = [_task(problem, i, "max-workload", None) for i in range(n)]
    maxima = [_usable(o, "max-workload") for o in _run_tasks(max_tasks, problem.workers)]
    w_max = np.array([o.w_slots for o in maxima])
    binding = int(np.argmin(w_max))
    stats = SolveStats()
    for o in maxima:
        stats = stats.merge(o.stats)

    if problem.mode == "decomposed":
        w_slots = float(w_max[binding])
        target = w_slots * (1.0 - TARGET_BACKOFF)
        logger.info(
            f"W_DA* = {w_slots * slot_workload:.6g} units ({w_slots:.6g} slot equivalents), binding scenario {binding}"
        )
        # the max-workload binaries already deliver the target
        tasks = [_task(problem, i, "min-deviation", target, (maxima[i].integers,)) for i in range(n)]
        outcomes = [_usable(o, "min-deviation") for o in _run_tasks(tasks, problem.workers)]
        schedules = [o.points for o in outcomes]
        pwl_modes = [o.pwl_mode for o in outcomes]
        for o in outcomes:
            stats = stats.merge(o.stats)
    else:
        w_slots, schedules, joint_stats, mode_used = _joint(problem, maxima)
        stats = stats.merge(joint_stats)
        pwl_modes = [mode_used] * n
        logger.info(f"Joint W_DA* = {w_slots * slot_workload:.6g} units (lambda={problem.penalty_lambda})")

    for i, points in enumerate(schedules):
        _validate_schedule(i, points, _limits_of(problem.scenarios[i]), problem, w_slots)

    ids = [sc.provenance if isinstance(sc, LimitScenario) else f"series{i}" for i, sc in enumerate(problem.scenarios)]
    return CommitmentResult(
        w_da_star=w_slots * slot_workload,
        w_da_slots=w_slots,
        schedules=schedules,
        w_max=[float(w) * slot_workload for w in w_max],
        binding=binding,
        mode=problem.mode,
        slot_workload=slot_workload,
        pwl_modes=pwl_modes,
        scenario_ids=ids,
        stats=stats,
    )


def schedule_to_frame(points: Sequence[OperatingPoint]) -> pd.DataFrame:
    rows = [
        {"slot": t, "mu": pt.mu, "s": pt.s, "q_cool": pt.q_cool, "p_ch": pt.p_ch, "p_dis": pt.p_dis,
         "beta": pt.beta, "p_it": pt.p_it}
        for t, pt in enumerate(points)
    ]
    return pd.DataFrame(rows, columns=SCHEDULE_COLUMNS)


def schedule_from_frame(frame: pd.DataFrame) -> List[OperatingPoint]:
    missing = set(SCHEDULE_COLUMNS) - set(frame.columns)
    if missing:
        raise CommitmentError(f"schedule is missing columns {sorted(missing)}")
    frame = frame.sort_values("slot")
    return [
        OperatingPoint(
            mu=int(row.mu), s=float(row.s), q_cool=float(row.q_cool), p_ch=float(row.p_ch),
            p_dis=float(row.p_dis), beta=int(row.beta), p_it=None if pd.isna(row.p_it) else float(row.p_it),
        )
        for row in frame.itertuples(index=False)
    ]


def save_commitment(result: CommitmentResult, directory: Union[str, Path]) -> Path:
    """Write commitment.json and one schedule CSV per scenario; returns the JSON path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, points in enumerate(result.schedules):
        filename = f"schedule_{i:04d}.csv"
        schedule_to_frame(points).to_csv(out / filename, index=False)
        files.append(filename)
    payload = {
        "w_da_star": result.w_da_star,
        "w_da_slots": result.w_da_slots,
        "slot_workload": result.slot_workload,
        "w_max": result.w_max,
        "binding_scenario": result.binding,
        "mode": result.mode,
        "pwl_modes": result.pwl_modes,
        "scenario_ids": result.scenario_ids,
        "schedules": files,
        "stats": {
            "nodes": result.stats.nodes,
            "lp_iterations": result.stats.lp_iterations,
            "max_depth": result.stats.max_depth,
            "duality_drift": result.stats.duality_drift,
        },
    }
    path = out / COMMITMENT_FILE
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_commitment(path: Union[str, Path]) -> CommitmentResult:
    """Read a commitment written by save_commitment (directory or commitment.json path)."""
    path = Path(path)
    if path.is_dir():
        path = path / COMMITMENT_FILE
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CommitmentError(f"cannot read commitment {path}: {e}") from e
    schedules = [schedule_from_frame(pd.read_csv(path.parent / name)) for name in payload["schedules"]]
    stats = payload.get("stats", {})
    return CommitmentResult(
        w_da_star=float(payload["w_da_star"]),
        w_da_slots=float(payload["w_da_slots"]),
        schedules=schedules,
        w_max=[float(w) for w in payload["w_max"]],
        binding=int(payload["binding_scenario"]),
        mode=payload["mode"],
        slot_workload=float(payload["slot_workload"]),
        pwl_modes=list(payload.get("pwl_modes", [])),
        scenario_ids=list(payload.get("scenario_ids", [])),
        stats=SolveStats(
            nodes=stats.get("nodes", 0),
            lp_iterations=stats.get("lp_iterations", 0),
            max_depth=stats.get("max_depth", 0),
            duality_drift=stats.get("duality_drift", 0),
        ),
    )
