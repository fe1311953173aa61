import pytest

from aidc_utils import __version__
from aidc_utils.cli import (
    EXIT_CONFIG,
    EXIT_FAILED,
    EXIT_INTERRUPTED,
    EXIT_OK,
    EXIT_STAGE,
    build_config,
    collect_overrides,
    create_argument_parser,
    flag_for,
    main,
)
from aidc_utils.config import ConfigError
from aidc_utils.run_directory import StageError

from .conftest import FIXTURE_CONFIG


def _exit_code(argv):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    return excinfo.value.code


def test_flag_for():
    assert flag_for("bess.e_max") == "--bess-e-max"
    assert flag_for("seed") == "--seed"


def test_version(capsys):
    assert _exit_code(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_per_key_flags_win_over_set():
    args = create_argument_parser().parse_args(
        ["run-day", "--set", "bess.e_max=300", "--set", "seed=5", "--bess-e-max", "400"]
    )
    assert collect_overrides(args) == {"bess.e_max": "400", "seed": "5"}


def test_set_without_equals_is_a_config_error():
    args = create_argument_parser().parse_args(["run-day", "--set", "bess.e_max"])
    with pytest.raises(ConfigError, match="BLOCK.KEY=VALUE"):
        collect_overrides(args)


def test_build_config_from_file_with_days():
    args = create_argument_parser().parse_args(
        ["run-day", "-c", str(FIXTURE_CONFIG), "--day", "5", "--day", "6", "--grid-line-scale", "1.25"]
    )
    cfg = build_config(args)
    assert cfg.name == "fixture_day"
    assert cfg.days == [5, 6]
    assert cfg.grid.line_scale == 1.25


def test_commit_requires_a_run_dir(capsys):
    assert _exit_code(["commit"]) == 2
    assert "--run-dir" in capsys.readouterr().err


def test_run_day_dispatches_to_its_task(mocker):
    task = mocker.patch("aidc_utils.cli.task_run_day", return_value=True)
    assert _exit_code(["-l", "debug", "run-day", "-c", str(FIXTURE_CONFIG)]) == EXIT_OK
    cfg, level = task.call_args.args
    assert cfg.days == [7]
    assert level == "DEBUG"


def test_limits_uses_the_first_configured_day(mocker):
    task = mocker.patch("aidc_utils.cli.task_limits", return_value=True)
    assert _exit_code(["limits", "-c", str(FIXTURE_CONFIG), "--run-dir", "runs/x"]) == EXIT_OK
    _, day, run_dir, _ = task.call_args.args
    assert (day, run_dir) == (7, "runs/x")


def test_failed_task_exits_one(mocker):
    mocker.patch("aidc_utils.cli.task_audit", return_value=False)
    assert _exit_code(["audit", "runs/x"]) == EXIT_FAILED


def test_bad_override_exits_two(capsys):
    assert _exit_code(["run-day", "--set", "bess.capacity=3"]) == EXIT_CONFIG
    assert "Configuration error" in capsys.readouterr().out


def test_stage_failure_exits_three(mocker, capsys):
    mocker.patch("aidc_utils.cli.task_sweep", side_effect=StageError("commit", ValueError("infeasible")))
    assert _exit_code(["sweep", "-c", str(FIXTURE_CONFIG)]) == EXIT_STAGE
    assert "Stage 'commit' failed: infeasible" in capsys.readouterr().out


def test_interrupt_exits_130(mocker):
    mocker.patch("aidc_utils.cli.task_report", side_effect=KeyboardInterrupt)
    assert _exit_code(["report", "runs/x"]) == EXIT_INTERRUPTED


def test_unexpected_error_exits_one(mocker):
    mocker.patch("aidc_utils.cli.task_dispatch", side_effect=RuntimeError("disk full"))
    assert _exit_code(["dispatch", "-c", str(FIXTURE_CONFIG), "--run-dir", "runs/x"]) == EXIT_FAILED


def test_audit_of_missing_directory_fails_cleanly(tmp_path, capsys):
    assert _exit_code(["audit", str(tmp_path / "nowhere")]) == EXIT_FAILED
    assert "does not exist" in capsys.readouterr().out
