"""
Day-ahead ensemble of admissible PCC limit trajectories.

Members are built by picking an analog day among the k nearest historical days
(z-scored feature distance), perturbing its demand profile with multiplicative
AR(1) noise and pushing the result through the limit derivation. The ensemble
is ranked by tightness and trimmed to its central fraction.
"""

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import BASE_INTERVAL_H, GridConfig, ScenarioConfig
from .grid_limits import InjectionSeries, NetworkCase, PccLimitSeries, derive_pcc_limits

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TRIM_EPS = 1e-9


class ScenarioError(ValueError):
    """Raised when an ensemble cannot be generated, filtered or loaded."""


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Observable features of one day, aligned to the day's slots."""

    price: np.ndarray
    demand: np.ndarray
    temperature: np.ndarray
    hour: np.ndarray
    day_of_week: int
    day_id: str = ""

    def __post_init__(self):
        """Coerce profiles to float arrays of equal length."""
        arrays = {}
        for name in ("price", "demand", "temperature", "hour"):
            arrays[name] = np.asarray(getattr(self, name), dtype=float).ravel()
            object.__setattr__(self, name, arrays[name])
        if len({len(a) for a in arrays.values()}) != 1:
            raise ScenarioError("feature profiles must be aligned to the same slots")
        if not 0 <= self.day_of_week <= 6:
            raise ScenarioError(f"day_of_week must lie in 0..6, got {self.day_of_week}")

    @property
    def slots(self) -> int:
        return len(self.price)

    def as_vector(self) -> np.ndarray:
        """Profiles plus the day of week on the unit circle."""
        angle = 2.0 * math.pi * self.day_of_week / 7.0
        return np.concatenate([self.price, self.demand, self.temperature, [math.cos(angle), math.sin(angle)]])


@dataclass(frozen=True, eq=False)
class AnalogDay:
    """A historical day: its features and the system demand profile to perturb."""

    features: FeatureVector
    demand: np.ndarray
    day_id: str

    def __post_init__(self):
        """Check the demand profile matches the feature slots."""
        demand = np.asarray(self.demand, dtype=float).ravel()
        if len(demand) != self.features.slots:
            raise ScenarioError(f"analog day {self.day_id} demand has {len(demand)} slots")
        if np.any(demand <= 0):
            raise ScenarioError(f"analog day {self.day_id} has non-positive demand")
        object.__setattr__(self, "demand", demand)


@dataclass(frozen=True, eq=False)
class LimitScenario:
    """One limit trajectory and where it came from."""

    limits: PccLimitSeries
    analog_day: str
    seed: int
    member: int

    @property
    def provenance(self) -> str:
        return f"{self.analog_day}/{self.seed}"


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Raw ensemble, tightness scores and the retained mask."""

    scenarios: Tuple[LimitScenario, ...]
    scores: np.ndarray
    retained: np.ndarray = field(default=None)
    dt_hours: float = BASE_INTERVAL_H
    seed: Optional[int] = None
    alpha: float = 0.0
    one_sided: bool = False

    def __post_init__(self):
        """Coerce score and mask arrays."""
        scores = np.asarray(self.scores, dtype=float)
        if scores.shape != (len(self.scenarios),):
            raise ScenarioError("one tightness score per scenario is required")
        mask = np.ones(len(scores), dtype=bool) if self.retained is None else np.asarray(self.retained, dtype=bool)
        if mask.shape != scores.shape:
            raise ScenarioError("retained mask must match the scenario count")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "retained", mask)

    def __len__(self) -> int:
        return len(self.scenarios)

    @property
    def n_retained(self) -> int:
        return int(self.retained.sum())

    def retained_scenarios(self) -> List[LimitScenario]:
        return [sc for sc, keep in zip(self.scenarios, self.retained) if keep]

    def retained_scores(self) -> np.ndarray:
        return self.scores[self.retained]

    def ranks(self) -> np.ndarray:
        """0-based tightness rank of every member (0 = tightest)."""
        order = sorted(range(len(self)), key=lambda i: (self.scores[i], self.scenarios[i].member))
        ranks = np.empty(len(self), dtype=int)
        ranks[order] = np.arange(len(self))
        return ranks


def tightness(sc: Union[LimitScenario, PccLimitSeries], dt: float) -> float:
    """Admissible import energy of a trajectory, MWh; smaller is tighter."""
    limits = sc.limits if isinstance(sc, LimitScenario) else sc
    return float(np.sum(np.maximum(limits.p_hi, 0.0)) * dt)


def demand_reference(history: Sequence[AnalogDay], grid: Optional[GridConfig] = None) -> float:
    """Demand level at which the case's nodal injections apply unscaled."""
    if grid is not None and grid.demand_reference is not None:
        return grid.demand_reference
    if not history:
        raise ScenarioError("empty history")
    return float(np.mean([day.demand.mean() for day in history]))


def nearest_analogs(history: Sequence[AnalogDay], today: FeatureVector, k: int) -> List[Tuple[float, AnalogDay]]:
    """
    Rank history days by z-scored feature distance to today.

    Returns:
        Up to k (distance, day) pairs sorted by distance, then day id
    """
    if not history:
        raise ScenarioError("empty history")
    for day in history:
        if day.features.slots != today.slots:
            raise ScenarioError(f"analog day {day.day_id} has {day.features.slots} slots, today has {today.slots}")
    stacked = np.vstack([day.features.as_vector() for day in history])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std < 1e-12] = 1.0
    z_hist = (stacked - mean) / std
    z_today = (today.as_vector() - mean) / std
    distances = np.sqrt(((z_hist - z_today) ** 2).sum(axis=1))
    ranked = sorted(zip(distances.tolist(), history), key=lambda pair: (pair[0], pair[1].day_id))
    return ranked[: max(1, min(k, len(ranked)))]


def ar1_noise(rng: np.random.Generator, slots: int, coef: float, std: float) -> np.ndarray:
    """Stationary AR(1) path with marginal standard deviation std."""
    if std == 0:
        return np.zeros(slots)
    innovation = std * math.sqrt(1.0 - coef * coef)
    path = np.empty(slots)
    path[0] = rng.normal(0.0, std)
    for t in range(1, slots):
        path[t] = coef * path[t - 1] + rng.normal(0.0, innovation)
    return path


def member_seed(seed: int, n_members: int, member: int) -> int:
    """Deterministic per-member sub-seed, identical in serial and parallel runs."""
    child = np.random.SeedSequence(seed).spawn(n_members)[member]
    return int(child.generate_state(1)[0])


@dataclass(frozen=True)
class _MemberTask:
    member: int
    seed: int
    candidates: Tuple[AnalogDay, ...]
    weights: Tuple[float, ...]
    case: NetworkCase
    reference: float
    cap: float
    floor: float
    r_grid: float
    ar_coef: float
    noise_std: float


def _generate_member(task: _MemberTask) -> LimitScenario:
    rng = np.random.default_rng(task.seed)
    pick = int(rng.choice(len(task.candidates), p=np.asarray(task.weights)))
    analog = task.candidates[pick]
    noise = ar1_noise(rng, len(analog.demand), task.ar_coef, task.noise_std)
    demand = analog.demand * np.maximum(1.0 + noise, 0.0)
    injections = InjectionSeries.from_demand(task.case, demand, task.reference)
    limits = derive_pcc_limits(task.case, injections, task.cap, task.floor, task.r_grid)
    return LimitScenario(limits=limits, analog_day=analog.day_id, seed=task.seed, member=task.member)


def generate_ensemble(
    history: Sequence[AnalogDay],
    today: FeatureVector,
    case: NetworkCase,
    n_raw: int,
    seed: int,
    cfg: Optional[ScenarioConfig] = None,
    grid: Optional[GridConfig] = None,
    dt_hours: float = BASE_INTERVAL_H,
) -> ScenarioSet:
    """
    Generate the raw ensemble of limit trajectories for one day.

    Args:
        history: analog days to draw from
        today: the day's observable features
        case: network case with the AIDC location set
        n_raw: ensemble size
        seed: master seed
        cfg: neighbour count, AR(1) settings and worker count
        grid: import cap, export floor, ramp limit and demand reference
        dt_hours: slot length

    Returns:
        ScenarioSet with every member retained and tightness scored

    Raises:
        ScenarioError: on empty history or n_raw < 2
    """
    cfg = cfg or ScenarioConfig()
    grid = grid or GridConfig()
    if not history:
        raise ScenarioError("empty history")
    if n_raw < 2:
        raise ScenarioError("n_raw must be at least 2")

    neighbours = nearest_analogs(history, today, cfg.k_neighbors)
    ranks = np.arange(1, len(neighbours) + 1, dtype=float)
    weights = (1.0 / ranks) / np.sum(1.0 / ranks)
    reference = demand_reference(history, grid)
    logger.info(
        f"Generating {n_raw} limit scenarios from {len(neighbours)} analogs "
        f"({', '.join(day.day_id for _, day in neighbours)}), seed {seed}"
    )
    tasks = [
        _MemberTask(
            member=i,
            seed=member_seed(seed, n_raw, i),
            candidates=tuple(day for _, day in neighbours),
            weights=tuple(weights.tolist()),
            case=case,
            reference=reference,
            cap=grid.import_cap,
            floor=grid.export_floor,
            r_grid=grid.ramp_per_slot(dt_hours),
            ar_coef=cfg.ar_coef,
            noise_std=cfg.noise_std,
        )
        for i in range(n_raw)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            members = list(pool.map(_generate_member, tasks))
    else:
        members = [_generate_member(task) for task in tasks]

    scores = np.array([tightness(sc, dt_hours) for sc in members])
    logger.debug(f"Tightness range {scores.min():.1f} .. {scores.max():.1f} MWh")
    return ScenarioSet(scenarios=tuple(members), scores=scores, dt_hours=dt_hours, seed=seed)


def trim_count(n: int, alpha: float, one_sided: bool = False) -> Tuple[int, int]:
    """Members dropped from the (tight, loose) ends."""
    if one_sided:
        return math.ceil(alpha * n - TRIM_EPS), 0
    per_side = math.ceil(alpha * n / 2.0 - TRIM_EPS)
    return per_side, per_side


def filter_coverage(raw: ScenarioSet, alpha: float, one_sided: bool = False) -> ScenarioSet:
    """
    Keep the central 1 - alpha fraction of the ensemble by tightness.

    Members are sorted by (score, member index); ceil(alpha*N/2) are dropped from each
    end, or ceil(alpha*N) from the tight end in one-sided mode.

    Raises:
        ScenarioError: if alpha is out of range or nothing would be retained
    """
    if not 0.0 <= alpha < 1.0:
        raise ScenarioError(f"alpha must lie in [0, 1), got {alpha}")
    n = len(raw)
    drop_tight, drop_loose = trim_count(n, alpha, one_sided)
    if drop_tight + drop_loose >= n:
        raise ScenarioError(f"alpha={alpha} leaves no scenario out of {n}")
    order = sorted(range(n), key=lambda i: (raw.scores[i], raw.scenarios[i].member))
    keep = np.zeros(n, dtype=bool)
    keep[order[drop_tight : n - drop_loose]] = True
    logger.info(f"Coverage filter alpha={alpha}: retained {int(keep.sum())} of {n} scenarios")
    return replace(raw, retained=keep, alpha=alpha, one_sided=one_sided)


def save_scenario_set(scenario_set: ScenarioSet, directory: Union[str, Path]) -> Path:
    """Write one limit CSV per member plus a JSON manifest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    ranks = scenario_set.ranks()
    members = []
    for sc, score, rank, keep in zip(scenario_set.scenarios, scenario_set.scores, ranks, scenario_set.retained):
        filename = f"scenario_{sc.member:04d}.csv"
        sc.limits.write_csv(out / filename)
        members.append(
            {
                "member": sc.member,
                "file": filename,
                "analog_day": sc.analog_day,
                "seed": sc.seed,
                "tightness_mwh": float(score),
                "rank": int(rank),
                "retained": bool(keep),
            }
        )
    first = scenario_set.scenarios[0].limits if scenario_set.scenarios else None
    manifest = {
        "seed": scenario_set.seed,
        "dt_hours": scenario_set.dt_hours,
        "alpha": scenario_set.alpha,
        "one_sided": scenario_set.one_sided,
        "n_raw": len(scenario_set),
        "n_retained": scenario_set.n_retained,
        "r_grid": first.r_grid if first else None,
        "import_cap": first.import_cap if first else None,
        "export_floor": first.export_floor if first else None,
        "members": members,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_scenario_set(directory: Union[str, Path]) -> ScenarioSet:
    """Read a directory written by save_scenario_set."""
    src = Path(directory)
    try:
        manifest = json.loads((src / MANIFEST_NAME).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioError(f"cannot read scenario manifest in {src}: {e}") from e
    extra = {k: manifest[k] for k in ("r_grid", "import_cap", "export_floor") if manifest.get(k) is not None}
    scenarios, scores, retained = [], [], []
    for entry in manifest["members"]:
        limits = PccLimitSeries.from_frame(pd.read_csv(src / entry["file"]), **extra)
        scenarios.append(LimitScenario(limits, entry["analog_day"], int(entry["seed"]), int(entry["member"])))
        scores.append(entry["tightness_mwh"])
        retained.append(entry["retained"])
    return ScenarioSet(
        scenarios=tuple(scenarios),
        scores=np.array(scores),
        retained=np.array(retained, dtype=bool),
        dt_hours=manifest["dt_hours"],
        seed=manifest.get("seed"),
        alpha=manifest.get("alpha", 0.0),
        one_sided=manifest.get("one_sided", False),
    )
