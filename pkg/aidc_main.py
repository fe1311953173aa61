#!/usr/bin/env python3
"""
Main AIDC Operation Script
Programmatic interface: run the full pipeline for an experiment file, then report and audit it.
"""

import argparse
import logging
import os
import sys

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(__file__))

from aidc_utils.config import ConfigError, load_experiment_config
from aidc_utils.pipeline import run_experiment
from aidc_utils.run_directory import StageError
from aidc_utils.tasks import task_audit, task_report


def create_argument_parser():
    """Create and configure argument parser."""
    parser = argparse.ArgumentParser(
        description="AIDC Grid Operation - run, report and audit an experiment in one go",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Bundled CI-scale fixture
  python aidc_main.py configs/fixture_day.yaml

  # Skip the audit, verbose logs
  python aidc_main.py configs/fixture_day.yaml --no-audit --log-level debug
        """,
    )

    parser.add_argument("config", help="Experiment YAML file")

    parser.add_argument("--no-audit", action="store_true", help="Skip the audit after reporting")

    # Logging level
    parser.add_argument(
        "-l",
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="WARNING",
        type=str.upper,
        help="Set logging level (default: WARNING)",
    )

    return parser


def main():
    """Main script entry point."""
    parser = create_argument_parser()
    args = parser.parse_args()

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s - %(levelname)s - %(message)s",
    )

    try:
        cfg = load_experiment_config(args.config)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}")
        sys.exit(2)

    print("\n" + "=" * 70)
    print("🚀 AIDC Grid Operation")
    print("=" * 70)
    print(f"Experiment: {cfg.name}")
    print(f"Days: {', '.join(map(str, cfg.days))}")
    print("=" * 70)

    try:
        print("\n □ Running every stage...")
        result, run_path = run_experiment(cfg, args.log_level)
        print(f"   ✓ {len(result.days)} days written to {run_path}")
        results = [True]
        results.append(task_report(run_path))
        if not args.no_audit:
            results.append(task_audit(run_path))

        print("\n" + "=" * 70)
        print("📝 EXECUTION SUMMARY")
        print("=" * 70)
        print(f"\nOverall: {sum(results)}/{len(results)} steps completed successfully")
        if all(results):
            print("🎉 All steps completed successfully!")
        else:
            print("⚠️  Some steps failed - check the output above for details.")
        sys.exit(0 if all(results) else 1)

    except StageError as e:
        print(f"\n❌ Stage '{e.stage}' failed: {e.cause}")
        sys.exit(3)
    except KeyboardInterrupt:
        print("\n\n👋 Execution interrupted by user")
        sys.exit(130)
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}")
        logging.exception("Unexpected error in main")
        sys.exit(1)


if __name__ == "__main__":
    main()
