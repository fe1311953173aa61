#!/usr/bin/env python3
"""
AIDC Operation Tasks
One function per pipeline command, printing progress banners for the console.
"""

import logging
import traceback
from pathlib import Path
from typing import List, Optional

from .config import ExperimentConfig, dump_experiment_config
from .pipeline import (
    CONFIG_FILE,
    PipelineError,
    audit,
    report,
    run_experiment,
    stage_commit,
    stage_dispatch,
    stage_limits,
    stage_scenarios,
    sweep,
)
from .run_directory import RunDirectory

logger = logging.getLogger(__name__)


def _banner(title: str) -> None:
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


def _day_run(cfg: ExperimentConfig, day: int, run_dir: Optional[str], logging_level: str) -> RunDirectory:
    """Existing run directory when given, a fresh {run_root}/{name}/dayNNN otherwise."""
    if run_dir:
        run = RunDirectory.open_existing(run_dir, logging_level)
    else:
        run = RunDirectory.create(cfg.run_root, cfg.name, f"day{day:03d}", logging_level=logging_level)
    if not run.exists(CONFIG_FILE):
        run.write_text(CONFIG_FILE, dump_experiment_config(cfg))
    return run


# =============================================================================
# TASK FUNCTIONS
# =============================================================================


def task_limits(cfg: ExperimentConfig, day: int, run_dir: Optional[str] = None, logging_level: str = "INFO") -> bool:
    """
    Task: Derive the day's PCC limits from its own demand.

    Args:
        cfg: Experiment configuration
        day: 0-based day index
        run_dir: Existing day directory (a fresh one is created when omitted)
        logging_level: Console logging level inside the run

    Returns:
        True if the limits were written
    """
    _banner(f"⚡ Stage: PCC Limits (day {day})")
    run = _day_run(cfg, day, run_dir, logging_level)
    print(f" □ Writing to {run.path}...")
    with run, run.stage("limits"):
        limits = stage_limits(cfg, day, run)
    print(f"   ✓ {len(limits)} slots, import limit {limits.p_hi.min():.1f} .. {limits.p_hi.max():.1f} MW")
    print(f"   ✓ {int(limits.collapsed.sum())} collapsed slots")
    return True


def task_scenarios(
    cfg: ExperimentConfig, day: int, run_dir: Optional[str] = None, logging_level: str = "INFO"
) -> bool:
    """Task: Generate and filter the day's limit ensemble."""
    _banner(f"🎲 Stage: Limit Scenarios (day {day})")
    run = _day_run(cfg, day, run_dir, logging_level)
    print(f" □ Generating {cfg.scenarios.n_raw} members into {run.path}...")
    with run, run.stage("scenarios"):
        scenario_set = stage_scenarios(cfg, day, run)
    print(f"   ✓ Retained {scenario_set.n_retained} of {len(scenario_set)} (alpha={cfg.scenarios.alpha})")
    return True


def task_commit(cfg: ExperimentConfig, run_dir: str, logging_level: str = "INFO") -> bool:
    """Task: Compute the day-ahead commitment over the persisted scenarios."""
    _banner("📋 Stage: Day-Ahead Commitment")
    run = RunDirectory.open_existing(run_dir, logging_level)
    print(f" □ Committing from {run.path}...")
    with run, run.stage("commit"):
        result = stage_commit(cfg, run)
    print(f"   ✓ W_DA* = {result.w_da_star:.6g} units ({result.w_da_slots:.4f} slot equivalents)")
    print(f"   ✓ Binding scenario {result.binding} of {len(result.schedules)}")
    return True


def task_dispatch(cfg: ExperimentConfig, run_dir: str, logging_level: str = "INFO") -> bool:
    """Task: Simulate real-time delivery of the persisted commitment."""
    _banner("🔋 Stage: Real-Time Dispatch")
    run = RunDirectory.open_existing(run_dir, logging_level)
    print(f" □ Dispatching from {run.path} ({cfg.realization} realization)...")
    with run, run.stage("dispatch"):
        _, day, _ = stage_dispatch(cfg, run)
    marker = "✓" if day.under_delivery == 0 else "✗"
    print(f"   {marker} Delivered {day.delivered:.6g} of {day.committed:.6g} units, shed {day.under_delivery:.6g}")
    print(f"   ✓ Energy cost {day.energy_cost:.2f}, BESS throughput {day.bess_throughput:.2f} MWh")
    return True


def task_run_day(cfg: ExperimentConfig, logging_level: str = "INFO") -> bool:
    """Task: Run every stage for each configured day."""
    _banner(f"🚀 Full Pipeline: days {', '.join(map(str, cfg.days))}")
    result, path = run_experiment(cfg, logging_level)
    for day in result.days:
        m = day.metrics
        marker = "✓" if m["under_delivery"] == 0 else "✗"
        print(
            f"   {marker} Day {day.day} ({day.day_id}): W_DA* {day.commitment['w_da_star']:.6g}, "
            f"shed {m['under_delivery']:.6g}, cost {m['energy_cost']:.2f}"
        )
    print(f"\n=== Run written to {path} ===")
    return True


def task_sweep(cfg: ExperimentConfig, logging_level: str = "INFO") -> bool:
    """Task: Run the sweep cross product."""
    axes = cfg.sweep
    n_cells = len(axes.line_scales) * len(axes.bess_scales) * len(axes.checkpoint_periods)
    _banner(f"🗺️  Sweep: {n_cells} cells")
    result, path = sweep(cfg, logging_level)
    for row in result.sweep:
        print(
            f"   ✓ kappa={row['line_scale']:g} bess={row['bess_scale']:g} period={row['checkpoint_period']} "
            f"day {row['day']}: W_DA* {row['w_da_star']:.6g}"
        )
    print(f"\n=== Sweep table written to {path} ===")
    return True


def task_report(path: str) -> bool:
    """Task: Write summaries and plot-ready tables for a completed run."""
    _banner("📊 Report")
    try:
        written: List[Path] = report(path)
    except (PipelineError, FileNotFoundError) as e:
        print(f"   ✗ {e}")
        return False
    print(f"   ✓ {len(written)} files written under {path}")
    return True


def task_audit(path: str) -> bool:
    """
    Task: Re-derive every reported number from the persisted records.

    Returns:
        True if no mismatch was found
    """
    _banner("🔍 Audit")
    try:
        mismatches = audit(path)
    except (PipelineError, FileNotFoundError) as e:
        print(f"   ✗ {e}")
        return False
    except Exception as e:
        print(f"\n✗ Audit failed with exception: {e}")
        traceback.print_exc()
        return False
    if mismatches:
        for line in mismatches:
            print(f"   ✗ {line}")
        return False
    print("   ✓ Every reported number matches the records")
    return True

