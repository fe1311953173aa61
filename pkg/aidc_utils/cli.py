#!/usr/bin/env python3
"""
AIDC Grid Operation CLI Tool
Command-line interface for the day-ahead / real-time operation pipeline.
"""

import argparse
import logging
import sys
from typing import Dict, List, Optional

from . import __version__
from .config import ConfigError, ExperimentConfig, apply_overrides, config_keys, load_experiment_config
from .run_directory import StageError
from .tasks import (
    task_audit,
    task_commit,
    task_dispatch,
    task_limits,
    task_report,
    task_run_day,
    task_scenarios,
    task_sweep,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_INTERRUPTED = 130

COMMANDS = {
    "limits": "Derive the day's PCC limits from its own demand",
    "scenarios": "Generate and filter the day's limit-scenario ensemble",
    "commit": "Compute the day-ahead commitment over the retained scenarios",
    "dispatch": "Simulate real-time delivery of the commitment",
    "run-day": "Run every stage for each configured day",
    "sweep": "Run the line-scale x BESS-energy x checkpoint-period cross product",
    "report": "Write summaries and plot-ready tables for a completed run",
    "audit": "Re-derive every reported number from the persisted records",
}


def flag_for(key: str) -> str:
    """CLI flag of a dotted config key: bess.e_max -> --bess-e-max."""
    return "--" + key.replace(".", "-").replace("_", "-")


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", help="Experiment YAML file (default: built-in defaults)")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="BLOCK.KEY=VALUE",
        help="Override one config key, value parsed as YAML (repeatable)",
    )
    group = parser.add_argument_group("config keys", "One flag per config key; values are parsed as YAML scalars")
    for key in config_keys():
        group.add_argument(flag_for(key), dest=f"cfg:{key}", metavar="VALUE", help=argparse.SUPPRESS)


def create_argument_parser() -> argparse.ArgumentParser:
    """Create and configure argument parser."""
    parser = argparse.ArgumentParser(
        prog="aidc_ops",
        description="AIDC Grid Operation Tool - grid-aware day-ahead commitment and real-time dispatch",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        allow_abbrev=False,
        epilog="""
Commands:
  limits     - Derive PCC limits for a day
  scenarios  - Generate and filter the limit-scenario ensemble
  commit     - Day-ahead commitment over the retained scenarios
  dispatch   - Real-time delivery of the commitment
  run-day    - All stages for every configured day
  sweep      - Cross product of the sweep axes
  report     - Summary and plot-ready tables of a run
  audit      - Re-derive every reported number

Examples:
  # Full pipeline on the bundled fixture
  aidc_ops run-day --config configs/fixture_day.yaml

  # Stage by stage in one run directory
  aidc_ops limits -c configs/fixture_day.yaml --day 7 --run-dir runs/dbg
  aidc_ops scenarios -c configs/fixture_day.yaml --day 7 --run-dir runs/dbg
  aidc_ops commit -c configs/fixture_day.yaml --run-dir runs/dbg
  aidc_ops dispatch -c configs/fixture_day.yaml --run-dir runs/dbg

  # Overrides
  aidc_ops run-day -c configs/fixture_day.yaml --bess-e-max 400 --set grid.line_scale=1.25

  # Sweep, then report and audit it
  aidc_ops sweep -c configs/fixture_day.yaml --sweep-line-scales "[1.0, 1.25, 1.5]"
  aidc_ops report runs/fixture_day_sweep
  aidc_ops audit runs/fixture_day_sweep
        """,
    )

    # Logging level
    parser.add_argument(
        "-l",
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="WARNING",
        type=str.upper,
        help="Set logging level (default: WARNING)",
    )

    # Version information
    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__}",
    )

    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, help_text in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        if name in ("report", "audit"):
            sub.add_argument("path", help="Run, experiment or sweep directory")
            continue
        _add_config_arguments(sub)
        if name in ("limits", "scenarios"):
            sub.add_argument("--day", type=int, help="0-based day index (default: first configured day)")
            sub.add_argument("--run-dir", help="Existing day directory to write into (default: a fresh one)")
        elif name in ("commit", "dispatch"):
            sub.add_argument("--run-dir", required=True, help="Day directory holding the earlier stages")
        elif name == "run-day":
            sub.add_argument("--day", type=int, action="append", help="Day index, repeatable (default: config days)")
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, str]:
    """
    Gather --set and per-key flag overrides; per-key flags win over --set.

    Raises:
        ConfigError: on a --set item without '='
    """
    overrides: Dict[str, str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects BLOCK.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for dest, value in vars(args).items():
        if dest.startswith("cfg:") and value is not None:
            overrides[dest[4:]] = value
    return overrides


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment config from --config plus overrides; raises ConfigError."""
    overrides = collect_overrides(args)
    if args.config:
        cfg = load_experiment_config(args.config, overrides)
    else:
        cfg = apply_overrides(ExperimentConfig(), overrides)
    if getattr(args, "day", None) is not None and args.command == "run-day":
        cfg = apply_overrides(cfg, {"days": list(args.day)})
    return cfg


def run_command(args: argparse.Namespace) -> bool:
    """Dispatch one parsed command to its task function."""
    if args.command == "report":
        return task_report(args.path)
    if args.command == "audit":
        return task_audit(args.path)

    cfg = build_config(args)
    level = args.log_level
    day = cfg.days[0] if getattr(args, "day", None) is None else args.day
    print("\n" + "=" * 70)
    print("🚀 AIDC Grid Operation Tool")
    print("=" * 70)
    print(f"Experiment: {cfg.name}")
    print(f"Command: {args.command}")
    print("=" * 70)
    if args.command == "limits":
        return task_limits(cfg, day, args.run_dir, level)
    if args.command == "scenarios":
        return task_scenarios(cfg, day, args.run_dir, level)
    if args.command == "commit":
        return task_commit(cfg, args.run_dir, level)
    if args.command == "dispatch":
        return task_dispatch(cfg, args.run_dir, level)
    if args.command == "run-day":
        return task_run_day(cfg, level)
    return task_sweep(cfg, level)


def main(argv: Optional[List[str]] = None) -> None:
    """Main CLI entry point."""
    # Parse command line arguments
    parser = create_argument_parser()
    args = parser.parse_args(argv)

    # Set up logging with specified level
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s - %(levelname)s - %(message)s",
    )

    try:
        success = run_command(args)
        if success:
            print("\n🎉 Command completed successfully!")
        else:
            print("\n⚠️  Command failed - check the output above for details.")
        sys.exit(EXIT_OK if success else EXIT_FAILED)

    except ConfigError as e:
        print(f"\n❌ Configuration error: {e}")
        sys.exit(EXIT_CONFIG)
    except StageError as e:
        print(f"\n❌ Stage '{e.stage}' failed: {e.cause}")
        print("   Partial results and stage_failed.json are kept in the run directory")
        sys.exit(EXIT_STAGE)
    except KeyboardInterrupt:
        print("\n\n👋 Execution interrupted by user")
        sys.exit(EXIT_INTERRUPTED)
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        logging.exception("Unexpected error in main")
        sys.exit(EXIT_FAILED)


if __name__ == "__main__":
    main()
