import numpy as np
import pandas as pd
import pytest

from aidc_utils.config import ExperimentConfig, SyntheticSeriesSpec
from aidc_utils.series import (
    SeriesBundle,
    SeriesError,
    ingest_series,
    load_csv_series,
    read_series_csv,
    resample_day,
    synthetic_series,
)


@pytest.fixture
def two_days():
    return synthetic_series(SyntheticSeriesSpec(days=2, seed=3))


@pytest.fixture
def csv_paths(two_days, tmp_path):
    return two_days.to_csv(tmp_path / "series")


def test_synthetic_series_is_seeded():
    a = synthetic_series(SyntheticSeriesSpec(days=2, seed=3))
    b = synthetic_series(SyntheticSeriesSpec(days=2, seed=3))
    c = synthetic_series(SyntheticSeriesSpec(days=2, seed=4))
    pd.testing.assert_frame_equal(a.frame, b.frame)
    assert not np.allclose(a.frame["price"], c.frame["price"])
    assert a.n_days == 2
    assert a.source == "synthetic"


def test_day_view_resamples_and_names_the_day(two_days):
    day = two_days.day(1, slots=24)
    assert day.slots == 24
    assert day.day_id == "2026-01-06"
    assert day.day_of_week == 1
    assert day.hour[0] == pytest.approx(0.375)
    assert day.demand[0] == pytest.approx(two_days.frame["demand"].iloc[96:100].mean())
    with pytest.raises(SeriesError, match="outside"):
        two_days.day(2)


def test_analog_days_stop_before_target(two_days):
    analogs = two_days.analog_days(1)
    assert [a.day_id for a in analogs] == ["2026-01-05"]


def test_resample_day():
    values = np.arange(96, dtype=float)
    assert resample_day(values, 96) == pytest.approx(values)
    assert resample_day(values, 1) == pytest.approx([47.5])
    with pytest.raises(SeriesError, match="divide"):
        resample_day(values, 7)
    with pytest.raises(SeriesError):
        resample_day(values[:10], 1)


def test_csv_files_load_back(two_days, csv_paths):
    bundle = load_csv_series(str(csv_paths["price"]), str(csv_paths["temperature"]), str(csv_paths["demand"]))
    assert bundle.source == "csv"
    np.testing.assert_allclose(bundle.frame.to_numpy(), two_days.frame.to_numpy())


def test_csv_header_must_match(tmp_path):
    path = tmp_path / "price.csv"
    path.write_text("time,price\n2026-01-05 00:00:00,1\n")
    with pytest.raises(SeriesError, match="header"):
        read_series_csv(path, "price")


def test_gap_reports_the_slot(csv_paths, tmp_path):
    frame = pd.read_csv(csv_paths["price"]).drop(index=10)
    path = tmp_path / "gappy.csv"
    frame.to_csv(path, index=False)
    with pytest.raises(SeriesError) as excinfo:
        read_series_csv(path, "price")
    assert excinfo.value.slot == 10


def test_missing_value_reports_the_slot(csv_paths, tmp_path):
    frame = pd.read_csv(csv_paths["demand"])
    frame.loc[5, "demand"] = None
    path = tmp_path / "holes.csv"
    frame.to_csv(path, index=False)
    with pytest.raises(SeriesError, match="slot 5"):
        read_series_csv(path, "demand")


def test_partial_day_is_rejected(csv_paths, tmp_path):
    path = tmp_path / "short.csv"
    pd.read_csv(csv_paths["price"]).iloc[:100].to_csv(path, index=False)
    with pytest.raises(SeriesError, match="short of a whole day"):
        read_series_csv(path, "price")


def test_misaligned_series(csv_paths, tmp_path):
    short = tmp_path / "temperature.csv"
    pd.read_csv(csv_paths["temperature"]).iloc[:96].to_csv(short, index=False)
    with pytest.raises(SeriesError, match="slots"):
        load_csv_series(str(csv_paths["price"]), str(short), str(csv_paths["demand"]))


def test_unreadable_file(tmp_path):
    with pytest.raises(SeriesError, match="cannot read"):
        read_series_csv(tmp_path / "absent.csv", "price")


def test_bundle_rejects_non_positive_demand(two_days):
    frame = two_days.frame.copy()
    frame.iloc[3, frame.columns.get_loc("demand")] = 0.0
    with pytest.raises(SeriesError, match="slot 3"):
        SeriesBundle(frame)


def test_ingest_checks_requested_day():
    assert ingest_series(ExperimentConfig(days=[7])).n_days == 8
    with pytest.raises(SeriesError, match="day 8 requested"):
        ingest_series(ExperimentConfig(days=[8]))
