import json
import logging
import pickle

import pandas as pd
import pytest

from aidc_utils.run_directory import PACKAGE_LOGGER, STAGE_FAILED_FILE, RunDirectory, StageError


def test_existing_directory_gets_a_suffix(tmp_path):
    first = RunDirectory.create(tmp_path, "exp", "day007")
    second = RunDirectory.create(tmp_path, "exp", "day007")
    third = RunDirectory.create(tmp_path, "exp", "day007")
    assert first.path == tmp_path / "exp" / "day007"
    assert second.path.name == "day007-001"
    assert third.path.name == "day007-002"


def test_records_are_append_only(tmp_path):
    run = RunDirectory.create(tmp_path, "exp")
    run.write_json("metrics.json", {"a": 1})
    with pytest.raises(FileExistsError, match="append-only"):
        run.write_json("metrics.json", {"a": 2})
    run.write_json("metrics.json", {"a": 3}, overwrite=True)
    assert run.read_json("metrics.json") == {"a": 3}


def test_frames_and_text(tmp_path):
    run = RunDirectory.create(tmp_path, "exp")
    frame = pd.DataFrame({"slot": [0, 1], "p_exc": [1.5, -2.0]})
    path = run.write_frame("dispatch/record.csv", frame)
    assert path.parent.name == "dispatch"
    pd.testing.assert_frame_equal(run.read_frame("dispatch/record.csv"), frame)
    run.write_text("config.yaml", "name: exp\n")
    assert run.exists("config.yaml")
    with pytest.raises(FileExistsError):
        run.write_text("config.yaml", "name: other\n")


def test_missing_files(tmp_path):
    run = RunDirectory.create(tmp_path, "exp")
    with pytest.raises(FileNotFoundError, match="cannot read"):
        run.read_json("metrics.json")
    with pytest.raises(FileNotFoundError, match="missing run file"):
        run.read_frame("dispatch/record.csv")
    with pytest.raises(FileNotFoundError, match="does not exist"):
        RunDirectory.open_existing(tmp_path / "nowhere")


def test_failed_stage_leaves_a_marker(tmp_path):
    run = RunDirectory.create(tmp_path, "exp")
    run.write_text("config.yaml", "name: exp\n")
    with pytest.raises(StageError) as excinfo, run.stage("limits"):
        raise ValueError("slack bus missing")
    assert excinfo.value.stage == "limits"
    assert isinstance(excinfo.value.cause, ValueError)
    payload = json.loads(run.file(STAGE_FAILED_FILE).read_text())
    assert payload == {"stage": "limits", "error": "ValueError", "message": "slack bus missing"}
    assert run.exists("config.yaml")


def test_inner_stage_error_is_not_rewrapped(tmp_path):
    run = RunDirectory.create(tmp_path, "exp")
    with pytest.raises(StageError) as excinfo, run.stage("outer"), run.stage("inner"):
        raise RuntimeError("boom")
    assert excinfo.value.stage == "inner"


def test_stage_error_survives_pickling():
    err = pickle.loads(pickle.dumps(StageError("commit", ValueError("infeasible"))))
    assert err.stage == "commit"
    assert str(err.cause) == "infeasible"
    assert "stage 'commit' failed" in str(err)


def test_log_file_collects_package_records(tmp_path):
    logger = logging.getLogger(PACKAGE_LOGGER)
    handlers_before = list(logger.handlers)
    run = RunDirectory.create(tmp_path, "exp", logging_level="WARNING")
    with run:
        logging.getLogger("aidc_utils.dispatch").debug("window solved")
        with run.child("day007").stage("dispatch"):
            logging.getLogger("aidc_utils.pipeline").info("dispatching")
    logs = list((run.path / "logs").glob("aidc_*.log"))
    assert len(logs) == 1
    text = logs[0].read_text()
    assert "window solved" in text
    assert "Stage 'dispatch' completed" in text
    assert logger.handlers == handlers_before
