"""
Price, ambient temperature and system demand series at 15-minute resolution.

Series come either from three user CSVs (``timestamp,<column>``) or from a seeded
sinusoid-plus-noise generator. Missing or misaligned slots are hard errors; nothing is
imputed.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .config import BASE_INTERVAL_H, SLOTS_PER_DAY, ExperimentConfig, SyntheticSeriesSpec
from .scenarios import AnalogDay, FeatureVector

logger = logging.getLogger(__name__)

COLUMNS = ("price", "temperature", "demand")
UNITS = {"price": "AUD/MWh", "temperature": "degC", "demand": "MW"}
SLOT_FREQ = pd.Timedelta(minutes=15)


class SeriesError(ValueError):
    """Raised when an input series is malformed; carries the offending slot when known."""

    def __init__(self, message: str, slot: Optional[int] = None):
        self.slot = slot
        super().__init__(message if slot is None else f"slot {slot}: {message}")


@dataclass(frozen=True)
class DaySeries:
    """One day of the three series, resampled to the experiment horizon."""

    day: int
    price: np.ndarray
    temperature: np.ndarray
    demand: np.ndarray
    hour: np.ndarray
    day_of_week: int
    day_id: str

    @property
    def slots(self) -> int:
        return len(self.price)

    def features(self) -> FeatureVector:
        return FeatureVector(
            price=self.price,
            demand=self.demand,
            temperature=self.temperature,
            hour=self.hour,
            day_of_week=self.day_of_week,
            day_id=self.day_id,
        )

    def analog(self) -> AnalogDay:
        return AnalogDay(features=self.features(), demand=self.demand, day_id=self.day_id)


@dataclass(frozen=True, eq=False)
class SeriesBundle:
    """Three aligned 15-minute series covering whole days."""

    frame: pd.DataFrame  # DatetimeIndex, one column per entry of COLUMNS
    source: str = "csv"

    def __post_init__(self):
        """Check the bundle covers whole aligned days."""
        _check_index(self.frame.index, "series")
        for column in COLUMNS:
            if column not in self.frame:
                raise SeriesError(f"series bundle is missing the '{column}' column")
            values = self.frame[column].to_numpy(dtype=float)
            bad = np.flatnonzero(~np.isfinite(values))
            if len(bad):
                raise SeriesError(f"missing {column} value", slot=int(bad[0]))
        demand = self.frame["demand"].to_numpy(dtype=float)
        if np.any(demand <= 0):
            raise SeriesError("demand must be positive", slot=int(np.argmax(demand <= 0)))

    @property
    def n_days(self) -> int:
        return len(self.frame) // SLOTS_PER_DAY

    def day(self, d: int, slots: int = SLOTS_PER_DAY) -> DaySeries:
        """
        Day d (0-based) resampled to the given number of slots by block means.

        Raises:
            SeriesError: if the day lies outside the series
        """
        if not 0 <= d < self.n_days:
            raise SeriesError(f"day {d} outside the {self.n_days}-day series")
        chunk = self.frame.iloc[d * SLOTS_PER_DAY : (d + 1) * SLOTS_PER_DAY]
        start = chunk.index[0]
        hours = np.arange(SLOTS_PER_DAY) * BASE_INTERVAL_H
        return DaySeries(
            day=d,
            price=resample_day(chunk["price"].to_numpy(dtype=float), slots),
            temperature=resample_day(chunk["temperature"].to_numpy(dtype=float), slots),
            demand=resample_day(chunk["demand"].to_numpy(dtype=float), slots),
            hour=resample_day(hours, slots),
            day_of_week=int(start.dayofweek),
            day_id=start.strftime("%Y-%m-%d"),
        )

    def analog_days(self, before: int, slots: int = SLOTS_PER_DAY) -> List[AnalogDay]:
        """Every day strictly before `before`, as analog candidates."""
        return [self.day(d, slots).analog() for d in range(min(before, self.n_days))]

    def to_csv(self, directory: Union[str, Path]) -> Dict[str, Path]:
        """Write one ``timestamp,<column>`` CSV per series."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for column in COLUMNS:
            path = out / f"{column}.csv"
            frame = self.frame[[column]].copy()
            frame.index.name = "timestamp"
            frame.to_csv(path, date_format="%Y-%m-%d %H:%M:%S")
            paths[column] = path
        return paths


def resample_day(values: np.ndarray, slots: int) -> np.ndarray:
    """Block-mean a 96-slot day down to `slots` slots."""
    values = np.asarray(values, dtype=float)
    if len(values) != SLOTS_PER_DAY:
        raise SeriesError(f"a day has {SLOTS_PER_DAY} base slots, got {len(values)}")
    if slots < 1 or SLOTS_PER_DAY % slots != 0:
        raise SeriesError(f"slot count {slots} does not divide {SLOTS_PER_DAY}")
    return values.reshape(slots, SLOTS_PER_DAY // slots).mean(axis=1)


def _check_index(index: pd.Index, what: str) -> None:
    if not isinstance(index, pd.DatetimeIndex):
        raise SeriesError(f"{what} is not indexed by timestamps")
    if len(index) == 0:
        raise SeriesError(f"{what} is empty")
    first = index[0]
    if first != first.normalize():
        raise SeriesError(f"{what} does not start at midnight ({first})", slot=0)
    steps = np.diff(index.asi8)
    bad = np.flatnonzero(steps != SLOT_FREQ.value)
    if len(bad):
        raise SeriesError(f"{what} is not on a 15-minute grid after {index[bad[0]]}", slot=int(bad[0]) + 1)
    if len(index) % SLOTS_PER_DAY != 0:
        missing = SLOTS_PER_DAY - len(index) % SLOTS_PER_DAY
        raise SeriesError(f"{what} ends {missing} slots short of a whole day", slot=len(index))


def read_series_csv(path: Union[str, Path], column: str) -> pd.Series:
    """
    Read one ``timestamp,<column>`` CSV.

    Args:
        path: CSV file
        column: expected value column name

    Returns:
        float Series on a DatetimeIndex

    Raises:
        SeriesError: unreadable file, wrong header, unparsable timestamps, gaps or missing values
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SeriesError(f"cannot read {path}: {e}") from e
    if list(frame.columns) != ["timestamp", column]:
        raise SeriesError(f"{path} must have the header 'timestamp,{column}', got {','.join(frame.columns)}")
    stamps = pd.to_datetime(frame["timestamp"], errors="coerce")
    if stamps.isna().any():
        raise SeriesError(f"unparsable timestamp in {path}", slot=int(np.argmax(stamps.isna().to_numpy())))
    values = pd.to_numeric(frame[column], errors="coerce")
    if values.isna().any():
        raise SeriesError(f"missing or non-numeric {column} in {path}", slot=int(np.argmax(values.isna().to_numpy())))
    series = pd.Series(values.to_numpy(dtype=float), index=pd.DatetimeIndex(stamps), name=column)
    _check_index(series.index, str(path))
    return series


def load_csv_series(price_csv: str, temperature_csv: str, demand_csv: str) -> SeriesBundle:
    """Read and align the three series; timestamps must agree row by row."""
    series = {
        "price": read_series_csv(price_csv, "price"),
        "temperature": read_series_csv(temperature_csv, "temperature"),
        "demand": read_series_csv(demand_csv, "demand"),
    }
    reference = series["price"].index
    for column, values in series.items():
        if len(values) != len(reference):
            raise SeriesError(
                f"{column} has {len(values)} slots, price has {len(reference)}", slot=min(len(values), len(reference))
            )
        mismatch = np.flatnonzero(values.index.asi8 != reference.asi8)
        if len(mismatch):
            raise SeriesError(f"{column} timestamps are misaligned with price", slot=int(mismatch[0]))
    frame = pd.DataFrame({column: values.to_numpy() for column, values in series.items()}, index=reference)
    logger.info(f"Loaded {len(frame) // SLOTS_PER_DAY} days of price, temperature and demand")
    return SeriesBundle(frame=frame, source="csv")


def synthetic_series(spec: Optional[SyntheticSeriesSpec] = None) -> SeriesBundle:
    """
    Seeded sinusoid-plus-noise series.

    Price peaks in the evening, temperature mid-afternoon and demand early evening. The
    same spec always yields the same values.
    """
    spec = spec or SyntheticSeriesSpec()
    n = spec.days * SLOTS_PER_DAY
    index = pd.date_range(pd.Timestamp(spec.start).normalize(), periods=n, freq=SLOT_FREQ)
    hours = (np.arange(n) % SLOTS_PER_DAY) * BASE_INTERVAL_H
    rng = np.random.default_rng(spec.seed)

    def wave(peak_hour: float) -> np.ndarray:
        return np.cos(2.0 * math.pi * (hours - peak_hour) / 24.0)

    price = spec.price_base + spec.price_amplitude * wave(18.5) + rng.normal(0.0, spec.price_noise, n)
    temperature = spec.temp_base + spec.temp_amplitude * wave(15.0) + rng.normal(0.0, spec.temp_noise, n)
    demand = spec.demand_base + spec.demand_amplitude * wave(18.0) + rng.normal(0.0, spec.demand_noise, n)
    demand = np.maximum(demand, 0.1 * spec.demand_base)
    frame = pd.DataFrame({"price": price, "temperature": temperature, "demand": demand}, index=index)
    logger.debug(f"Synthetic series: {spec.days} days from {spec.start}, seed {spec.seed}")
    return SeriesBundle(frame=frame, source="synthetic")


def ingest_series(cfg: ExperimentConfig) -> SeriesBundle:
    """Series of an experiment: its CSVs when given, the synthetic generator otherwise."""
    if cfg.uses_synthetic:
        bundle = synthetic_series(cfg.synthetic)
    else:
        bundle = load_csv_series(cfg.price_csv, cfg.temperature_csv, cfg.demand_csv)
    last = max(cfg.days)
    if last >= bundle.n_days:
        raise SeriesError(f"day {last} requested but the series covers {bundle.n_days} days")
    return bundle
