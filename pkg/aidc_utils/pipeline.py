"""
End-to-end grid-aware operation: limits, scenarios, commitment and real-time dispatch of
one or more days, design sweeps, reports and audits of persisted runs.

Layout of a day directory:

    config.yaml                  resolved experiment configuration
    series/day.csv               the day's price, temperature and demand at horizon resolution
    limits/network.csv           limits derived from the day's own demand
    limits/injections.csv        background nodal injections behind them
    scenarios/                   ensemble members and manifest.json
    commitment/                  commitment.json and one schedule per retained scenario
    dispatch/record.csv          applied actions and states, one row per slot
    metrics.json                 commitment summary, day metrics and provenance
    report/                      plot-ready tables, regenerated by report()
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy
import yaml

from . import __version__
from .commitment import CommitmentProblem, CommitmentResult, commit, load_commitment, save_commitment
from .config import DEFAULT_CASE, ExperimentConfig, config_hash, dump_experiment_config
from .dispatch import BatchMetrics, DayMetrics, DispatchRecord, RtInputs, metrics, simulate_day
from .grid_limits import InjectionSeries, NetworkCase, NetworkError, PccLimitSeries, derive_pcc_limits, load_case
from .model_core import CheckpointPattern
from .run_directory import RunDirectory
from .scenarios import ScenarioSet, demand_reference, filter_coverage, generate_ensemble, load_scenario_set
from .scenarios import save_scenario_set
from .series import DaySeries, SeriesBundle, ingest_series

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.yaml"
DAY_SERIES_FILE = "series/day.csv"
NETWORK_LIMITS_FILE = "limits/network.csv"
INJECTIONS_FILE = "limits/injections.csv"
SCENARIO_DIR = "scenarios"
COMMITMENT_DIR = "commitment"
RECORD_FILE = "dispatch/record.csv"
MPS_DIR = "dispatch/mps"
METRICS_FILE = "metrics.json"
SUMMARY_FILE = "summary.json"
SWEEP_TABLE_FILE = "sweep_table.csv"
REPORT_DIR = "report"
REPORT_TABLES = ("limits.csv", "exchange.csv", "soc.csv", "temperature.csv", "remaining.csv")
AUDIT_REL_TOL = 1e-6
AUDIT_ABS_TOL = 1e-6

SWEEP_COLUMNS = [
    "cell", "line_scale", "bess_scale", "checkpoint_period", "day", "w_da_star", "delivered",
    "under_delivery", "over_delivery", "energy_cost", "discharge_total", "discharge_collapsed",
    "discharge_locked_collapsed", "cooling_energy", "bess_throughput", "flagged_steps",
]


class PipelineError(RuntimeError):
    """Raised when a run directory is incomplete for the requested operation."""


@dataclass
class DayReport:
    """Outcome of one simulated day."""

    day: int
    day_id: str
    realization: str
    n_raw: int
    n_retained: int
    covered: bool  # the realized envelope contains at least one retained scenario
    commitment: Dict[str, Any]
    metrics: Dict[str, Any]
    provenance: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RunReport:
    """Day reports, batch metrics, sweep rows and provenance of one invocation."""

    name: str
    days: List[DayReport] = field(default_factory=list)
    batch: Dict[str, Any] = field(default_factory=dict)
    sweep: List[Dict[str, Any]] = field(default_factory=list)
    provenance: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "days": [d.to_dict() for d in self.days],
            "batch": self.batch,
            "sweep": self.sweep,
            "provenance": self.provenance,
        }


# =============================================================================
# STAGES
# =============================================================================


def day_seed(seed: int, day: int) -> int:
    """Ensemble seed of one day, derived from the experiment seed."""
    return int(np.random.SeedSequence([seed, day]).generate_state(1)[0])


def provenance(cfg: ExperimentConfig, day: Optional[int] = None) -> Dict[str, Any]:
    """Config hash, seeds and library versions; no paths and no timestamps."""
    info: Dict[str, Any] = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "versions": {
            "aidc_utils": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "pyyaml": yaml.__version__,
        },
    }
    if day is not None:
        info["day_seed"] = day_seed(cfg.seed, day)
    return info


def checkpoint_of(cfg: ExperimentConfig) -> CheckpointPattern:
    return CheckpointPattern.periodic(cfg.horizon.checkpoint_period, cfg.horizon.slots)


def prepare_case(cfg: ExperimentConfig) -> NetworkCase:
    """
    Network case of an experiment with the location bus set and line limits scaled.

    Raises:
        NetworkError: when neither the config nor the case file names the location bus
    """
    case = load_case(cfg.grid.case_path or DEFAULT_CASE)
    if cfg.grid.loc_bus is not None:
        case = case.with_loc(cfg.grid.loc_bus)
    if case.loc is None:
        raise NetworkError("no AIDC location bus: set grid.loc_bus or mpc.aidc_bus in the case file")
    return case.scaled(cfg.grid.line_scale) if cfg.grid.line_scale != 1.0 else case


def _day_frame(ds: DaySeries) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "slot": np.arange(ds.slots),
            "hour": ds.hour,
            "price": ds.price,
            "temperature": ds.temperature,
            "demand": ds.demand,
        }
    )


def _require_absent(run: RunDirectory, relative: str) -> None:
    if run.exists(relative):
        raise FileExistsError(f"run directories are append-only, {run.file(relative)} already exists")


def stage_limits(cfg: ExperimentConfig, day: int, run: RunDirectory, bundle: Optional[SeriesBundle] = None):
    """Persist the day's series and derive its network limits from the day's own demand."""
    bundle = bundle or ingest_series(cfg)
    slots = cfg.horizon.slots
    ds = bundle.day(day, slots)
    history = bundle.analog_days(day, slots)
    case = prepare_case(cfg)
    injections = InjectionSeries.from_demand(case, ds.demand, demand_reference(history, cfg.grid))
    limits = derive_pcc_limits(
        case,
        injections,
        cfg.grid.import_cap,
        cfg.grid.export_floor,
        cfg.grid.ramp_per_slot(cfg.horizon.dt_hours),
    )
    run.write_frame(DAY_SERIES_FILE, _day_frame(ds))
    run.write_frame(INJECTIONS_FILE, injections.to_frame())
    run.write_frame(NETWORK_LIMITS_FILE, limits.to_frame())
    logger.info(
        f"Day {day} ({ds.day_id}): import limit {limits.p_hi.min():.1f}..{limits.p_hi.max():.1f} MW, "
        f"{int(limits.collapsed.sum())} collapsed slots"
    )
    return limits


def stage_scenarios(
    cfg: ExperimentConfig, day: int, run: RunDirectory, bundle: Optional[SeriesBundle] = None
) -> ScenarioSet:
    """Generate, filter and persist the day's limit ensemble."""
    _require_absent(run, SCENARIO_DIR)
    bundle = bundle or ingest_series(cfg)
    slots = cfg.horizon.slots
    raw = generate_ensemble(
        bundle.analog_days(day, slots),
        bundle.day(day, slots).features(),
        prepare_case(cfg),
        cfg.scenarios.n_raw,
        day_seed(cfg.seed, day),
        cfg.scenarios,
        cfg.grid,
        cfg.horizon.dt_hours,
    )
    retained = filter_coverage(raw, cfg.scenarios.alpha, cfg.scenarios.one_sided)
    save_scenario_set(retained, run.file(SCENARIO_DIR))
    return retained


def stage_commit(cfg: ExperimentConfig, run: RunDirectory) -> CommitmentResult:
    """Commit over the persisted retained scenarios."""
    _require_absent(run, COMMITMENT_DIR)
    frame = run.read_frame(DAY_SERIES_FILE)
    scenario_set = load_scenario_set(run.file(SCENARIO_DIR))
    problem = CommitmentProblem.from_config(
        cfg, scenario_set.retained_scenarios(), frame["temperature"].to_numpy(float), checkpoint_of(cfg)
    )
    result = commit(problem)
    save_commitment(result, run.file(COMMITMENT_DIR))
    return result


def realized_limits(cfg: ExperimentConfig, run: RunDirectory) -> Tuple[PccLimitSeries, str]:
    """
    Limits the day is simulated under, and a label saying where they came from.

    Raises:
        PipelineError: when the configured retained scenario does not exist
    """
    if cfg.realization == "network":
        limits = PccLimitSeries.read_csv(
            run.file(NETWORK_LIMITS_FILE),
            r_grid=cfg.grid.ramp_per_slot(cfg.horizon.dt_hours),
            import_cap=cfg.grid.import_cap,
            export_floor=cfg.grid.export_floor,
        )
        return limits, "network"
    retained = load_scenario_set(run.file(SCENARIO_DIR)).retained_scenarios()
    index = cfg.realization_scenario
    if not 0 <= index < len(retained):
        raise PipelineError(f"realization scenario {index} outside the {len(retained)} retained scenarios")
    return retained[index].limits, f"scenario:{retained[index].provenance}"


def stage_dispatch(cfg: ExperimentConfig, run: RunDirectory) -> Tuple[DispatchRecord, DayMetrics, str]:
    """Deliver the persisted commitment under the realized limits and prices."""
    _require_absent(run, RECORD_FILE)
    frame = run.read_frame(DAY_SERIES_FILE)
    result = load_commitment(run.file(COMMITMENT_DIR))
    limits, label = realized_limits(cfg, run)
    debug_dir = None
    if cfg.dispatch.debug_mps:
        debug_dir = run.file(MPS_DIR)
        debug_dir.mkdir(parents=True, exist_ok=True)
    inputs = RtInputs.from_config(
        cfg, limits, frame["price"].to_numpy(float), frame["temperature"].to_numpy(float), checkpoint_of(cfg), debug_dir
    )
    record, day_metrics = simulate_day(result.w_da_star, inputs, cfg.plant)
    run.write_frame(RECORD_FILE, record.to_frame())
    return record, day_metrics, label


# =============================================================================
# RUNS
# =============================================================================


def run_day(
    cfg: ExperimentConfig,
    day: int,
    run: Optional[RunDirectory] = None,
    bundle: Optional[SeriesBundle] = None,
    logging_level: str = "INFO",
) -> DayReport:
    """
    Run every stage of one day and persist the artifacts.

    Args:
        cfg: experiment configuration
        day: 0-based day index; earlier days are the analog history
        run: directory to write into; a fresh {run_root}/{name}/dayNNN is created when omitted
        bundle: pre-loaded series
        logging_level: console level when this call opens the run directory

    Returns:
        DayReport

    Raises:
        StageError: naming the failed stage; the partial directory is kept
    """
    owns = run is None
    run = run or RunDirectory.create(cfg.run_root, cfg.name, f"day{day:03d}", logging_level=logging_level)
    with run if owns else nullcontext(run):
        run.write_text(CONFIG_FILE, dump_experiment_config(cfg))
        with run.stage("series"):
            bundle = bundle or ingest_series(cfg)
            ds = bundle.day(day, cfg.horizon.slots)
        with run.stage("limits"):
            stage_limits(cfg, day, run, bundle)
        with run.stage("scenarios"):
            scenario_set = stage_scenarios(cfg, day, run, bundle)
        with run.stage("commit"):
            result = stage_commit(cfg, run)
        with run.stage("dispatch"):
            record, day_metrics, label = stage_dispatch(cfg, run)

        retained = scenario_set.retained_scenarios()
        report = DayReport(
            day=day,
            day_id=ds.day_id,
            realization=label,
            n_raw=len(scenario_set),
            n_retained=len(retained),
            covered=any(record.limits.contains(sc.limits) for sc in retained),
            commitment=result.summary(),
            metrics=day_metrics.to_dict(),
            provenance=provenance(cfg, day),
        )
        run.write_json(METRICS_FILE, report.to_dict())
    return report


def run_experiment(cfg: ExperimentConfig, logging_level: str = "INFO") -> Tuple[RunReport, Path]:
    """Run every configured day under one fresh run directory and write summary.json."""
    run = RunDirectory.create(cfg.run_root, cfg.name, logging_level=logging_level)
    with run:
        run.write_text(CONFIG_FILE, dump_experiment_config(cfg))
        with run.stage("series"):
            bundle = ingest_series(cfg)
        days = [run_day(cfg, d, run.child(f"day{d:03d}"), bundle) for d in cfg.days]
        batch = BatchMetrics.from_days([DayMetrics(**d.metrics) for d in days])
        report = RunReport(name=cfg.name, days=days, batch=batch.to_dict(), provenance=provenance(cfg))
        run.write_json(SUMMARY_FILE, report.to_dict())
        logger.info(
            f"Experiment {cfg.name}: {len(days)} days, {batch.days_with_under_delivery} with under-delivery"
        )
    return report, run.path


# =============================================================================
# SWEEPS
# =============================================================================


@dataclass(frozen=True)
class _CellTask:
    index: int
    cfg: ExperimentConfig
    path: str
    line_scale: float
    bess_scale: float
    checkpoint_period: int


def cell_config(cfg: ExperimentConfig, line_scale: float, bess_scale: float, period: int) -> ExperimentConfig:
    """Experiment at one sweep point: absolute line scale, relative BESS energy, checkpoint period."""
    return replace(
        cfg,
        grid=replace(cfg.grid, line_scale=line_scale),
        bess=cfg.bess.scaled_energy(bess_scale),
        horizon=replace(cfg.horizon, checkpoint_period=period),
    )


def _run_cell(task: _CellTask) -> List[Dict[str, Any]]:
    cell = RunDirectory(task.path)
    cell.write_text(CONFIG_FILE, dump_experiment_config(task.cfg))
    with cell.stage("series"):
        bundle = ingest_series(task.cfg)
    rows = []
    for d in task.cfg.days:
        report = run_day(task.cfg, d, cell.child(f"day{d:03d}"), bundle)
        m = report.metrics
        rows.append(
            {
                "cell": Path(task.path).name,
                "line_scale": task.line_scale,
                "bess_scale": task.bess_scale,
                "checkpoint_period": task.checkpoint_period,
                "day": d,
                "w_da_star": report.commitment["w_da_star"],
                **{key: m[key] for key in SWEEP_COLUMNS[6:]},
            }
        )
    return rows


def sweep(cfg: ExperimentConfig, logging_level: str = "INFO") -> Tuple[RunReport, Path]:
    """
    Run the cross product of the sweep axes, one independent run directory per cell.

    Returns:
        (RunReport with one sweep row per cell and day, sweep root directory)
    """
    axes = cfg.sweep
    root = RunDirectory.create(cfg.run_root, f"{cfg.name}_sweep", logging_level=logging_level)
    with root:
        root.write_text(CONFIG_FILE, dump_experiment_config(cfg))
        tasks = []
        for kappa in axes.line_scales:
            for scale in axes.bess_scales:
                for period in axes.checkpoint_periods:
                    index = len(tasks)
                    tasks.append(
                        _CellTask(
                            index=index,
                            cfg=cell_config(cfg, kappa, scale, period),
                            path=str(root.file(f"cell{index:03d}")),
                            line_scale=kappa,
                            bess_scale=scale,
                            checkpoint_period=period,
                        )
                    )
        logger.info(f"Sweep {cfg.name}: {len(tasks)} cells x {len(cfg.days)} days, {axes.workers} workers")
        if axes.workers > 1:
            with ProcessPoolExecutor(max_workers=axes.workers) as pool:
                cells = list(pool.map(_run_cell, tasks))
        else:
            cells = [_run_cell(task) for task in tasks]

        rows = [row for cell in cells for row in cell]
        root.write_frame(SWEEP_TABLE_FILE, pd.DataFrame(rows, columns=SWEEP_COLUMNS))
        report = RunReport(name=cfg.name, sweep=rows, provenance=provenance(cfg))
        root.write_json(SUMMARY_FILE, report.to_dict())
    return report, root.path


# =============================================================================
# REPORTS AND AUDITS
# =============================================================================


def _day_dirs(path: Union[str, Path]) -> List[Path]:
    base = Path(path)
    if not base.is_dir():
        raise PipelineError(f"run directory does not exist: {base}")
    return sorted({p.parent for p in base.rglob(METRICS_FILE)})


def _report_day(run: RunDirectory) -> List[Path]:
    summary = run.read_json(METRICS_FILE)
    record = run.read_frame(RECORD_FILE)
    network = run.read_frame(NETWORK_LIMITS_FILE).sort_values("slot").reset_index(drop=True)
    retained = load_scenario_set(run.file(SCENARIO_DIR)).retained_scenarios()
    lo = np.vstack([sc.limits.p_lo for sc in retained])
    hi = np.vstack([sc.limits.p_hi for sc in retained])

    tables = {
        "limits.csv": pd.DataFrame(
            {
                "slot": record["slot"],
                "p_lo": record["p_lo"],
                "p_hi": record["p_hi"],
                "collapsed": record["collapsed"].astype(int),
                "network_p_lo": network["p_lo"],
                "network_p_hi": network["p_hi"],
                "ensemble_p_lo_min": lo.min(axis=0),
                "ensemble_p_lo_max": lo.max(axis=0),
                "ensemble_p_hi_min": hi.min(axis=0),
                "ensemble_p_hi_max": hi.max(axis=0),
            }
        ),
        "exchange.csv": record[["slot", "p_exc", "p_lo", "p_hi", "price"]],
        "soc.csv": record[["slot", "e_bess", "e_bess_next", "p_ch", "p_dis"]],
        "temperature.csv": record[["slot", "t_in", "t_in_next", "t_amb", "q_cool", "p_cool"]],
        "remaining.csv": record[["slot", "r_remaining", "r_next", "workload", "s_shed"]],
    }
    written = [run.write_frame(f"{REPORT_DIR}/{name}", frame, overwrite=True) for name, frame in tables.items()]
    payload = {**summary, "tables": list(REPORT_TABLES)}
    written.append(run.write_json(f"{REPORT_DIR}/{SUMMARY_FILE}", payload, overwrite=True))
    return written


def report(path: Union[str, Path]) -> List[Path]:
    """
    Write the JSON summary and plot-ready tables of every completed day under path.

    Raises:
        PipelineError: when no completed day is found
    """
    days = _day_dirs(path)
    if not days:
        raise PipelineError(f"no completed day under {path}: run the pipeline first")
    written: List[Path] = []
    for directory in days:
        written.extend(_report_day(RunDirectory.open_existing(directory)))
    logger.info(f"Report: {len(written)} files for {len(days)} days under {path}")
    return written


def _close(a: float, b: float) -> bool:
    return math.isclose(float(a), float(b), rel_tol=AUDIT_REL_TOL, abs_tol=AUDIT_ABS_TOL)


def _audit_day(run: RunDirectory) -> List[str]:
    where = str(run.path)
    stored = run.read_json(METRICS_FILE)
    frame = run.read_frame(RECORD_FILE)
    record = DispatchRecord.from_frame(frame)
    mismatches = []
    for key, value in metrics(record).to_dict().items():
        if not _close(value, stored["metrics"][key]):
            mismatches.append(f"{where}: {key} stored {stored['metrics'][key]!r}, re-derived {value!r}")
    result = load_commitment(run.file(COMMITMENT_DIR))
    if not _close(result.w_da_star, stored["commitment"]["w_da_star"]):
        mismatches.append(f"{where}: w_da_star stored {stored['commitment']['w_da_star']!r}, file {result.w_da_star!r}")
    if not _close(record.committed, result.w_da_star):
        mismatches.append(f"{where}: dispatch started from {record.committed!r}, committed {result.w_da_star!r}")
    tol = AUDIT_ABS_TOL
    outside = frame[(frame["p_exc"] < frame["p_lo"] - tol) | (frame["p_exc"] > frame["p_hi"] + tol)]
    mismatches.extend(f"{where}: slot {int(s)} exchange outside its limits" for s in outside["slot"])
    return mismatches


def _audit_sweep(base: Path) -> List[str]:
    table = pd.read_csv(base / SWEEP_TABLE_FILE)
    mismatches = []
    for row in table.itertuples(index=False):
        day_dir = base / str(row.cell) / f"day{int(row.day):03d}"
        stored = RunDirectory.open_existing(day_dir).read_json(METRICS_FILE)
        expected = {"w_da_star": stored["commitment"]["w_da_star"], **stored["metrics"]}
        for key in SWEEP_COLUMNS[5:]:
            if not _close(getattr(row, key), expected[key]):
                mismatches.append(f"{base}: {row.cell} day {row.day} {key} table {getattr(row, key)!r}")
    return mismatches


def _audit_batch(base: Path, days: List[Path]) -> List[str]:
    summary = RunDirectory.open_existing(base).read_json(SUMMARY_FILE)
    if not summary.get("batch"):
        return []
    day_metrics = [DayMetrics(**RunDirectory.open_existing(d).read_json(METRICS_FILE)["metrics"]) for d in days]
    mismatches = []
    for key, value in BatchMetrics.from_days(day_metrics).to_dict().items():
        if not _close(value, summary["batch"][key]):
            mismatches.append(f"{base}: batch {key} stored {summary['batch'][key]!r}, re-derived {value!r}")
    return mismatches


def audit(path: Union[str, Path]) -> List[str]:
    """
    Re-derive every reported number of a run or sweep from its persisted records.

    Returns:
        Mismatch descriptions; empty when the reports are consistent

    Raises:
        PipelineError: when nothing auditable is found under path
    """
    base = Path(path)
    days = _day_dirs(base)
    if not days:
        raise PipelineError(f"no completed day under {base}")
    mismatches: List[str] = []
    for directory in days:
        mismatches.extend(_audit_day(RunDirectory.open_existing(directory)))
    if (base / SWEEP_TABLE_FILE).is_file():
        mismatches.extend(_audit_sweep(base))
    elif (base / SUMMARY_FILE).is_file():
        mismatches.extend(_audit_batch(base, days))
    for line in mismatches:
        logger.warning(f"Audit mismatch: {line}")
    logger.info(f"Audit of {base}: {len(days)} days, {len(mismatches)} mismatches")
    return mismatches
