import numpy as np
import pytest

from aidc_utils.config import GridConfig, ScenarioConfig, SyntheticSeriesSpec
from aidc_utils.grid_limits import PccLimitSeries
from aidc_utils.scenarios import (
    FeatureVector,
    LimitScenario,
    ScenarioError,
    ScenarioSet,
    ar1_noise,
    demand_reference,
    filter_coverage,
    generate_ensemble,
    load_scenario_set,
    member_seed,
    nearest_analogs,
    save_scenario_set,
    tightness,
    trim_count,
)
from aidc_utils.series import synthetic_series

SLOTS = 24


def _flat_set(p_his, dt=1.0):
    scenarios = tuple(
        LimitScenario(PccLimitSeries.constant(2, -10.0, p_hi), analog_day="2026-01-05", seed=i, member=i)
        for i, p_hi in enumerate(p_his)
    )
    return ScenarioSet(scenarios, [tightness(sc, dt) for sc in scenarios], dt_hours=dt)


@pytest.fixture(scope="module")
def bundle():
    return synthetic_series(SyntheticSeriesSpec(days=8, seed=7))


@pytest.fixture
def history(bundle):
    return bundle.analog_days(7, SLOTS)


@pytest.fixture
def today(bundle):
    return bundle.day(7, SLOTS).features()


def test_tightness_counts_import_headroom_only():
    limits = PccLimitSeries([-5.0, -5.0, -5.0], [10.0, 0.0, 4.0])
    assert tightness(limits, 0.25) == pytest.approx(3.5)


@pytest.mark.parametrize(
    ("n", "alpha", "one_sided", "expected"),
    [
        (10, 0.2, False, (1, 1)),
        (10, 0.2, True, (2, 0)),
        (200, 0.1, False, (10, 10)),
        (10, 0.0, False, (0, 0)),
        (5, 0.5, False, (2, 2)),
        # alpha * N / 2 lands on an integer only up to rounding
        (30, 0.2, False, (3, 3)),
        (30, 0.1, True, (3, 0)),
        (20, 0.1, False, (1, 1)),
        # just past an integer rounds up
        (10, 0.3, False, (2, 2)),
        (7, 0.3, True, (3, 0)),
        (4, 0.49, False, (1, 1)),
    ],
)
def test_trim_count(n, alpha, one_sided, expected):
    assert trim_count(n, alpha, one_sided) == expected


def test_filter_keeps_the_central_members():
    raw = _flat_set([float(v) for v in range(10, 0, -1)])
    kept = filter_coverage(raw, 0.2)
    assert kept.n_retained == 8
    dropped = [sc.member for sc, keep in zip(kept.scenarios, kept.retained) if not keep]
    assert dropped == [0, 9]
    assert kept.alpha == 0.2
    assert raw.n_retained == 10


@pytest.mark.parametrize(("n", "alpha", "retained"), [(30, 0.2, 24), (10, 0.3, 6), (20, 0.1, 18), (3, 0.6, 1)])
def test_filter_retention_at_alpha_boundaries(n, alpha, retained):
    kept = filter_coverage(_flat_set([float(v) for v in range(n)]), alpha)
    assert kept.n_retained == retained


def test_one_sided_filter_drops_tightest():
    kept = filter_coverage(_flat_set([float(v) for v in range(1, 11)]), 0.2, one_sided=True)
    assert [sc.member for sc, keep in zip(kept.scenarios, kept.retained) if not keep] == [0, 1]
    assert kept.one_sided


def test_ties_break_on_member_index():
    raw = _flat_set([5.0, 5.0, 5.0, 5.0])
    kept = filter_coverage(raw, 0.5)
    assert list(kept.retained) == [False, True, True, False]
    assert list(raw.ranks()) == [0, 1, 2, 3]


def test_filter_rejects_degenerate_alpha():
    raw = _flat_set([1.0, 2.0])
    with pytest.raises(ScenarioError, match="no scenario"):
        filter_coverage(raw, 0.99)
    with pytest.raises(ScenarioError):
        filter_coverage(raw, 1.0)


def test_nearest_analogs_are_sorted(history, today):
    ranked = nearest_analogs(history, today, 3)
    assert len(ranked) == 3
    distances = [d for d, _ in ranked]
    assert distances == sorted(distances)
    assert len(nearest_analogs(history, today, 50)) == len(history)


def test_nearest_analogs_need_matching_slots(history):
    short = FeatureVector(price=[1.0], demand=[1.0], temperature=[1.0], hour=[0.0], day_of_week=0)
    with pytest.raises(ScenarioError, match="slots"):
        nearest_analogs(history, short, 3)


def test_ar1_noise_is_seeded():
    a = ar1_noise(np.random.default_rng(1), 50, 0.9, 0.03)
    b = ar1_noise(np.random.default_rng(1), 50, 0.9, 0.03)
    assert np.array_equal(a, b)
    assert not ar1_noise(np.random.default_rng(1), 5, 0.9, 0.0).any()


def test_member_seed_is_stable():
    assert member_seed(2026, 10, 3) == member_seed(2026, 10, 3)
    assert member_seed(2026, 10, 3) != member_seed(2026, 10, 4)


def test_demand_reference_prefers_config(history):
    assert demand_reference(history, GridConfig(demand_reference=9500.0)) == 9500.0
    assert demand_reference(history) == pytest.approx(np.mean([d.demand.mean() for d in history]))


def test_ensemble_is_deterministic(history, today, congestion_case):
    cfg = ScenarioConfig(n_raw=6, k_neighbors=3)
    a = generate_ensemble(history, today, congestion_case, 6, seed=11, cfg=cfg, dt_hours=1.0)
    b = generate_ensemble(history, today, congestion_case, 6, seed=11, cfg=cfg, dt_hours=1.0)
    assert len(a) == 6
    assert a.n_retained == 6
    assert [sc.provenance for sc in a.scenarios] == [sc.provenance for sc in b.scenarios]
    for x, y in zip(a.scenarios, b.scenarios):
        assert np.array_equal(x.limits.p_hi, y.limits.p_hi)
    assert a.scenarios[0].limits.r_grid == pytest.approx(600.0)


def test_parallel_ensemble_matches_serial(history, today, congestion_case):
    serial = generate_ensemble(history, today, congestion_case, 4, seed=5, cfg=ScenarioConfig(n_raw=4), dt_hours=1.0)
    parallel = generate_ensemble(
        history, today, congestion_case, 4, seed=5, cfg=ScenarioConfig(n_raw=4, workers=2), dt_hours=1.0
    )
    np.testing.assert_allclose(serial.scores, parallel.scores)


def test_ensemble_input_errors(history, today, congestion_case):
    with pytest.raises(ScenarioError, match="empty history"):
        generate_ensemble([], today, congestion_case, 4, seed=1)
    with pytest.raises(ScenarioError, match="n_raw"):
        generate_ensemble(history, today, congestion_case, 1, seed=1)


def test_save_and_load(tmp_path):
    raw = filter_coverage(_flat_set([3.0, 1.0, 2.0, 4.0]), 0.5)
    save_scenario_set(raw, tmp_path / "scenarios")
    assert (tmp_path / "scenarios" / "manifest.json").exists()
    assert (tmp_path / "scenarios" / "scenario_0003.csv").exists()
    back = load_scenario_set(tmp_path / "scenarios")
    assert list(back.retained) == list(raw.retained)
    np.testing.assert_allclose(back.scores, raw.scores)
    assert back.alpha == 0.5
    assert back.scenarios[1].limits.p_hi == pytest.approx([1.0, 1.0])


def test_load_without_manifest(tmp_path):
    with pytest.raises(ScenarioError, match="manifest"):
        load_scenario_set(tmp_path)
