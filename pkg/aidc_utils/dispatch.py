"""
Real-time receding-horizon delivery of the committed workload.

At every slot tau a window model over [tau, min(tau + H, T)) is solved under the realized
limits and prices, the first slot's decisions are applied and the physical state is
advanced. Under-delivery is the only relaxation: a shed variable per window slot, priced
at the effective penalty, keeps every window feasible.

Slots are 0-based. Remaining workload R is tracked in workload units; inside the window
models it is expressed in full-throughput slot equivalents.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import PRICE_FORECASTS, PWL_MODES, TERMINAL_VALUES, ExperimentConfig, PlantConfig, SolverOptions
from .formulation import AidcBlock, solve_pwl
from .grid_limits import PccLimitSeries
from .milp_model import LinearExpr, MilpModel, Sense, SolveStats, SolveStatus
from .model_core import (
    CheckpointPattern,
    OperatingPoint,
    SystemState,
    advance_state,
    eir,
    it_power,
    validate_trajectory,
    workload_rate,
)
from .mps_io import write_mps

logger = logging.getLogger(__name__)

SHED_TIEBREAK = 1e-6


class DispatchError(ValueError):
    """Raised when the real-time controller cannot produce an admissible action."""


@dataclass
class RtInputs:
    """Realized data and controller settings for one simulated day."""

    limits: PccLimitSeries
    prices: Sequence[float]
    t_amb: Sequence[float]
    checkpoint: CheckpointPattern
    horizon: int = 20
    m_rt: float = 1e6
    penalty_margin: float = 1e3
    price_forecast: str = "perfect"
    soc_terminal_value: str = "mean-price"
    pwl_breakpoints: int = 9
    pwl_mode: str = "convex"
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(node_limit=5000, time_limit=60.0))
    debug_dir: Optional[Path] = None
    e_target: Optional[float] = None

    def __post_init__(self):
        """Validate series lengths and settings."""
        self.prices = np.asarray(self.prices, dtype=float)
        self.t_amb = np.asarray(self.t_amb, dtype=float)
        n = len(self.limits)
        if len(self.prices) != n or len(self.t_amb) != n or len(self.checkpoint) != n:
            raise DispatchError(
                f"realized series differ in length: {n} limit slots, {len(self.prices)} prices, "
                f"{len(self.t_amb)} temperatures, {len(self.checkpoint)} checkpoint slots"
            )
        if self.horizon < 1:
            raise DispatchError("horizon must be at least 1")
        if self.m_rt <= 0 or self.penalty_margin <= 0:
            raise DispatchError("m_rt and penalty_margin must be positive")
        if self.price_forecast not in PRICE_FORECASTS:
            raise DispatchError(f"price_forecast must be one of {PRICE_FORECASTS}")
        if self.soc_terminal_value not in TERMINAL_VALUES:
            raise DispatchError(f"soc_terminal_value must be one of {TERMINAL_VALUES}")
        if self.pwl_mode not in PWL_MODES:
            raise DispatchError(f"pwl_mode must be one of {PWL_MODES}")

    @property
    def slots(self) -> int:
        return len(self.limits)

    @classmethod
    def from_config(
        cls,
        cfg: ExperimentConfig,
        limits: PccLimitSeries,
        prices: Sequence[float],
        t_amb: Sequence[float],
        checkpoint: Optional[CheckpointPattern] = None,
        debug_dir: Optional[Path] = None,
    ) -> "RtInputs":
        horizon = cfg.horizon
        return cls(
            limits=limits,
            prices=prices,
            t_amb=t_amb,
            checkpoint=checkpoint or CheckpointPattern.periodic(horizon.checkpoint_period, horizon.slots),
            horizon=cfg.dispatch.horizon,
            m_rt=cfg.dispatch.m_rt,
            penalty_margin=cfg.dispatch.penalty_margin,
            price_forecast=cfg.dispatch.price_forecast,
            soc_terminal_value=cfg.dispatch.soc_terminal_value,
            pwl_breakpoints=cfg.commitment.pwl_breakpoints,
            pwl_mode=cfg.commitment.pwl_mode,
            solver=cfg.rt_solver,
            debug_dir=debug_dir if cfg.dispatch.debug_mps else None,
        )


def effective_penalty(inputs: RtInputs, plant: PlantConfig) -> float:
    """
    Shortfall penalty per slot equivalent.

    m_rt is raised to penalty_margin times the largest economic objective a window can
    reach (full import or export at the highest absolute price plus full battery cycling).
    """
    dt = plant.dt_hours
    limits = inputs.limits
    exchange = max(abs(limits.import_cap), abs(limits.export_floor))
    price = float(np.max(np.abs(inputs.prices))) if len(inputs.prices) else 0.0
    worst = inputs.horizon * dt * (price * exchange + 2.0 * plant.bess.c_deg * plant.bess.p_max)
    return max(inputs.m_rt, inputs.penalty_margin * worst)


@dataclass
class RtWindow:
    model: MilpModel
    block: AidcBlock
    tau: int
    stop: int
    penalty: float
    r_now_slots: float
    cyclic: bool


def window_prices(tau: int, stop: int, inputs: RtInputs) -> np.ndarray:
    if inputs.price_forecast == "persistence":
        return np.full(stop - tau, inputs.prices[tau])
    return inputs.prices[tau:stop]


def build_rt_window(
    tau: int,
    state: SystemState,
    inputs: RtInputs,
    plant: PlantConfig,
    cyclic: bool = True,
    pwl_mode: Optional[str] = None,
) -> RtWindow:
    """
    Build the window model starting at slot tau.

    Args:
        tau: first slot of the window (0-based)
        state: state at the start of slot tau (T_in, E, mu_prev, previous exchange, remaining workload)
        inputs: realized series and controller settings
        plant: plant configuration
        cyclic: enforce E(T+1) = target on windows that reach the end of the day
        pwl_mode: overrides inputs.pwl_mode

    Returns:
        RtWindow

    Raises:
        DispatchError: if tau is outside the day or the state is not finite
    """
    T = inputs.slots
    if not 0 <= tau < T:
        raise DispatchError(f"slot {tau} outside the day [0, {T})")
    if not (math.isfinite(state.t_in) and math.isfinite(state.e_bess) and math.isfinite(state.r_remaining)):
        raise DispatchError(f"inconsistent state at slot {tau}: {state}")
    stop = min(tau + inputs.horizon, T)
    n = stop - tau
    dt = plant.dt_hours
    mode = pwl_mode or inputs.pwl_mode
    penalty = effective_penalty(inputs, plant)
    r_now = state.r_remaining / plant.slot_workload

    model = MilpModel(f"rt{tau:03d}")
    block = AidcBlock(
        model,
        plant,
        inputs.limits.window(tau, stop),
        inputs.t_amb[tau:stop],
        inputs.checkpoint.window(tau, stop),
        state,
        inputs.pwl_breakpoints,
        mode,
        with_shed=True,
        t0=tau,
    )
    delivered = block.workload() + block.shed_total()
    reaches_end = stop == T
    if reaches_end:
        model.add_constraint(delivered, Sense.GE, r_now, "terminal")
        if cyclic:
            target = inputs.e_target if inputs.e_target is not None else plant.bess.e_init
            block.add_cyclic_soc(target)
    else:
        model.add_constraint(delivered, Sense.GE, r_now - (T - stop), "reach")

    prices = window_prices(tau, stop, inputs)
    objective = LinearExpr()
    for t in range(n):
        slot = block.slots[t]
        objective.add(block.p_exc(t), prices[t] * dt)
        objective.add(slot.p_ch, plant.bess.c_deg * dt)
        objective.add(slot.p_dis, plant.bess.c_deg * dt)
        objective.add(slot.shed, penalty * (1.0 + SHED_TIEBREAK * (n - 1 - t) / n))
    if not reaches_end and inputs.soc_terminal_value == "mean-price":
        later = inputs.prices[tau] if inputs.price_forecast == "persistence" else float(np.mean(inputs.prices[stop:]))
        value = max(later, 0.0) * plant.bess.eta_dis
        objective.add(block.energy_end(), -value)
        objective.constant += value * state.e_bess
    model.set_objective(objective, "min")
    return RtWindow(model.finalize(), block, tau, stop, penalty, r_now, reaches_end and cyclic)


@dataclass
class StepResult:
    tau: int
    point: OperatingPoint
    next_state: SystemState
    s_shed: float  # workload units
    p_exc: float
    flagged: bool
    cyclic_relaxed: bool
    status: SolveStatus
    stats: SolveStats
    pwl_mode: str


def _solve_window(tau: int, state: SystemState, inputs: RtInputs, plant: PlantConfig, cyclic: bool):
    windows: List[RtWindow] = []

    def build(mode: str):
        window = build_rt_window(tau, state, inputs, plant, cyclic=cyclic, pwl_mode=mode)
        windows.append(window)
        return window.model, [window.block]

    result = solve_pwl(build, inputs.solver, inputs.pwl_mode)
    if inputs.debug_dir is not None:
        write_mps(result.model, Path(inputs.debug_dir) / f"rt_{tau:03d}.mps")
    return result, windows[-1]


def step(tau: int, state: SystemState, inputs: RtInputs, plant: PlantConfig) -> StepResult:
    """
    Solve the window at tau, apply its first action and advance the state.

    Raises:
        DispatchError: when no admissible action is found
    """
    result, window = _solve_window(tau, state, inputs, plant, cyclic=True)
    cyclic_relaxed = False
    if not result.solution.has_solution and window.cyclic:
        logger.warning(f"Slot {tau}: window infeasible with the cyclic SoC row, re-solving without it")
        result, window = _solve_window(tau, state, inputs, plant, cyclic=False)
        cyclic_relaxed = True
    sol = result.solution
    if not sol.has_solution:
        raise DispatchError(f"slot {tau}: window solve returned {sol.status.value} {sol.message}")
    flagged = cyclic_relaxed or sol.status != SolveStatus.OPTIMAL
    if sol.status != SolveStatus.OPTIMAL:
        logger.warning(f"Slot {tau}: window solve stopped at {sol.status.value}; applying the incumbent")

    point = result.blocks[0].extract(sol.x)[0]
    planned_shed = result.blocks[0].shed_values(sol.x)[0] * plant.slot_workload
    delivered = workload_rate(point.s, point.mu, plant.compute) * plant.horizon.dt_seconds
    outstanding = max(0.0, state.r_remaining - delivered)
    s_shed = outstanding if tau == inputs.slots - 1 else min(planned_shed, outstanding)
    if s_shed > 0:
        logger.info(f"Slot {tau}: shedding {s_shed:.6g} workload units")
    next_state = advance_state(state, point, float(inputs.t_amb[tau]), plant, s_shed)
    logger.debug(
        f"Slot {tau}: mu={point.mu} s={point.s:.4f} p_exc={next_state.p_exc_prev:.3f} "
        f"E={next_state.e_bess:.3f} R={next_state.r_remaining:.6g}"
    )
    return StepResult(
        tau=tau,
        point=point,
        next_state=next_state,
        s_shed=s_shed,
        p_exc=float(next_state.p_exc_prev),
        flagged=flagged,
        cyclic_relaxed=cyclic_relaxed,
        status=sol.status,
        stats=sol.stats,
        pwl_mode=result.mode,
    )


RECORD_COLUMNS = [
    "slot", "mu", "s", "p_it", "q_cool", "p_cool", "p_ch", "p_dis", "beta", "p_exc",
    "p_lo", "p_hi", "collapsed", "delta", "price", "t_amb", "t_in", "e_bess", "r_remaining",
    "t_in_next", "e_bess_next", "r_next", "workload", "s_shed", "energy_cost", "degradation_cost",
    "flagged", "cyclic_relaxed", "status", "nodes", "lp_iterations", "dt_hours",
]


@dataclass
class DispatchRecord:
    """Applied actions, states and cost terms of one simulated day."""

    points: List[OperatingPoint]
    states: List[SystemState]  # T+1 entries
    p_exc: np.ndarray
    s_shed: np.ndarray
    limits: PccLimitSeries
    prices: np.ndarray
    t_amb: np.ndarray
    delta: Tuple[int, ...]
    dt_hours: float
    c_deg: float
    p_cool: np.ndarray
    flagged: List[bool] = field(default_factory=list)
    cyclic_relaxed: List[bool] = field(default_factory=list)
    statuses: List[str] = field(default_factory=list)
    nodes: List[int] = field(default_factory=list)
    lp_iterations: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def committed(self) -> float:
        return self.states[0].r_remaining if self.states else 0.0

    @property
    def remaining(self) -> np.ndarray:
        return np.array([st.r_remaining for st in self.states])

    @property
    def workload(self) -> np.ndarray:
        """Delivered workload per slot, units (the R bookkeeping residual)."""
        r = self.remaining
        return r[:-1] - r[1:] - self.s_shed

    def to_frame(self) -> pd.DataFrame:
        rows = []
        workload = self.workload
        for t, pt in enumerate(self.points):
            cur, nxt = self.states[t], self.states[t + 1]
            rows.append(
                {
                    "slot": t, "mu": pt.mu, "s": pt.s, "p_it": pt.p_it, "q_cool": pt.q_cool,
                    "p_cool": self.p_cool[t], "p_ch": pt.p_ch, "p_dis": pt.p_dis, "beta": pt.beta,
                    "p_exc": self.p_exc[t], "p_lo": self.limits.p_lo[t], "p_hi": self.limits.p_hi[t],
                    "collapsed": bool(self.limits.collapsed[t]), "delta": self.delta[t],
                    "price": self.prices[t], "t_amb": self.t_amb[t], "t_in": cur.t_in, "e_bess": cur.e_bess,
                    "r_remaining": cur.r_remaining, "t_in_next": nxt.t_in, "e_bess_next": nxt.e_bess,
                    "r_next": nxt.r_remaining, "workload": workload[t], "s_shed": self.s_shed[t],
                    "energy_cost": self.prices[t] * self.p_exc[t] * self.dt_hours,
                    "degradation_cost": self.c_deg * (pt.p_ch + pt.p_dis) * self.dt_hours,
                    "flagged": self.flagged[t] if self.flagged else False,
                    "cyclic_relaxed": self.cyclic_relaxed[t] if self.cyclic_relaxed else False,
                    "status": self.statuses[t] if self.statuses else "",
                    "nodes": self.nodes[t] if self.nodes else 0,
                    "lp_iterations": self.lp_iterations[t] if self.lp_iterations else 0,
                    "dt_hours": self.dt_hours,
                }
            )
        return pd.DataFrame(rows, columns=RECORD_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, r_grid: float = math.inf, c_deg: float = 0.0) -> "DispatchRecord":
        """Rebuild a record from its CSV frame; c_deg is recovered from the cost columns when possible."""
        missing = set(RECORD_COLUMNS) - set(frame.columns)
        if missing:
            raise DispatchError(f"dispatch record is missing columns {sorted(missing)}")
        frame = frame.sort_values("slot").reset_index(drop=True)
        points = [
            OperatingPoint(
                mu=int(r.mu), s=float(r.s), q_cool=float(r.q_cool), p_ch=float(r.p_ch), p_dis=float(r.p_dis),
                beta=int(r.beta), p_it=None if pd.isna(r.p_it) else float(r.p_it),
            )
            for r in frame.itertuples(index=False)
        ]
        states = [
            SystemState(t_in=float(r.t_in), e_bess=float(r.e_bess), r_remaining=float(r.r_remaining))
            for r in frame.itertuples(index=False)
        ]
        if len(frame):
            last = frame.iloc[-1]
            states.append(
                SystemState(
                    t_in=float(last.t_in_next), e_bess=float(last.e_bess_next), r_remaining=float(last.r_next)
                )
            )
        throughput = frame["p_ch"] + frame["p_dis"]
        dt = float(frame["dt_hours"].iloc[0]) if len(frame) else 0.0
        if c_deg == 0.0 and (throughput > 0).any():
            mask = throughput > 0
            c_deg = float((frame.loc[mask, "degradation_cost"] / (throughput[mask] * dt)).iloc[0])
        limits = PccLimitSeries(
            frame["p_lo"].to_numpy(float), frame["p_hi"].to_numpy(float), r_grid=r_grid,
            collapsed=frame["collapsed"].to_numpy(bool),
        )
        return cls(
            points=points,
            states=states,
            p_exc=frame["p_exc"].to_numpy(float),
            s_shed=frame["s_shed"].to_numpy(float),
            limits=limits,
            prices=frame["price"].to_numpy(float),
            t_amb=frame["t_amb"].to_numpy(float),
            delta=tuple(int(d) for d in frame["delta"]),
            dt_hours=dt,
            c_deg=c_deg,
            p_cool=frame["p_cool"].to_numpy(float),
            flagged=[bool(v) for v in frame["flagged"]],
            cyclic_relaxed=[bool(v) for v in frame["cyclic_relaxed"]],
            statuses=[str(v) for v in frame["status"]],
            nodes=[int(v) for v in frame["nodes"]],
            lp_iterations=[int(v) for v in frame["lp_iterations"]],
        )


@dataclass
class DayMetrics:
    committed: float = 0.0
    delivered: float = 0.0  # committed workload actually served (committed - under_delivery)
    delivered_total: float = 0.0  # everything processed, including work beyond the commitment
    under_delivery: float = 0.0
    over_delivery: float = 0.0
    energy_cost: float = 0.0
    export_revenue: float = 0.0
    import_energy: float = 0.0
    export_energy: float = 0.0
    degradation_cost: float = 0.0
    workload_per_currency: float = 0.0
    bess_throughput: float = 0.0
    discharge_total: float = 0.0
    discharge_collapsed: float = 0.0
    discharge_locked_collapsed: float = 0.0
    cooling_energy: float = 0.0
    flagged_steps: int = 0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def limited_slots(limits: PccLimitSeries, plant: PlantConfig) -> np.ndarray:
    """Slots whose import limit cannot carry the cluster even at minimum throughput."""
    floor = it_power(plant.compute.s_min, 1, plant.compute) / plant.compute.eta_ipcs
    return np.flatnonzero(np.asarray(limits.p_hi) < floor)


def metrics(record: DispatchRecord, prices: Optional[Sequence[float]] = None) -> DayMetrics:
    """
    Day-level delivery, cost and battery-role metrics of a dispatch record.

    Args:
        record: complete record of one day
        prices: price series overriding the record's own

    Returns:
        DayMetrics; delivered + under_delivery equals the committed workload
    """
    if len(record) == 0:
        return DayMetrics()
    dt = record.dt_hours
    price = record.prices if prices is None else np.asarray(prices, dtype=float)
    p_exc = np.asarray(record.p_exc, dtype=float)
    p_ch = np.array([pt.p_ch for pt in record.points])
    p_dis = np.array([pt.p_dis for pt in record.points])
    mu = np.array([pt.mu for pt in record.points])

    under = float(np.sum(record.s_shed))
    committed = record.committed
    final = record.states[-1].r_remaining
    delivered_total = float(np.sum(record.workload))
    energy_cost = float(np.sum(price * p_exc * dt))
    collapsed = np.asarray(record.limits.collapsed, dtype=bool)
    mu_prev = np.concatenate([[record.states[0].mu_prev], mu[:-1]])
    locked = collapsed & (mu_prev == 1) & (np.asarray(record.delta) == 0)
    return DayMetrics(
        committed=committed,
        delivered=committed - under,
        delivered_total=delivered_total,
        under_delivery=under,
        over_delivery=max(0.0, -final),
        energy_cost=energy_cost,
        export_revenue=float(np.sum(np.where(p_exc < 0, -price * p_exc * dt, 0.0))),
        import_energy=float(np.sum(np.maximum(p_exc, 0.0)) * dt),
        export_energy=float(np.sum(np.maximum(-p_exc, 0.0)) * dt),
        degradation_cost=float(record.c_deg * np.sum(p_ch + p_dis) * dt),
        workload_per_currency=delivered_total / energy_cost if energy_cost > 0 else 0.0,
        bess_throughput=float(np.sum(p_ch + p_dis) * dt),
        discharge_total=float(np.sum(p_dis) * dt),
        discharge_collapsed=float(np.sum(p_dis[collapsed]) * dt),
        discharge_locked_collapsed=float(np.sum(p_dis[locked]) * dt),
        cooling_energy=float(np.sum(record.p_cool) * dt),
        flagged_steps=int(sum(record.flagged)),
    )


@dataclass
class BatchMetrics:
    n_days: int = 0
    days_with_under_delivery: int = 0
    mean_under_delivery: float = 0.0
    max_under_delivery: float = 0.0
    total_energy_cost: float = 0.0
    total_delivered: float = 0.0
    mean_workload_per_currency: float = 0.0

    @classmethod
    def from_days(cls, days: Sequence[DayMetrics], tol: float = 1e-9) -> "BatchMetrics":
        if not days:
            return cls()
        under = np.array([d.under_delivery for d in days])
        return cls(
            n_days=len(days),
            days_with_under_delivery=int(np.sum(under > tol * np.maximum(1.0, [d.committed for d in days]))),
            mean_under_delivery=float(np.mean(under)),
            max_under_delivery=float(np.max(under)),
            total_energy_cost=float(sum(d.energy_cost for d in days)),
            total_delivered=float(sum(d.delivered_total for d in days)),
            mean_workload_per_currency=float(np.mean([d.workload_per_currency for d in days])),
        )

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def simulate_day(
    w_da: float, inputs: RtInputs, plant: PlantConfig, initial: Optional[SystemState] = None
) -> Tuple[DispatchRecord, DayMetrics]:
    """
    Run the receding-horizon controller over the whole day.

    Args:
        w_da: committed workload (units)
        inputs: realized series and controller settings
        plant: plant configuration
        initial: state at the start of the day (defaults to the configured initial state)

    Returns:
        (DispatchRecord, DayMetrics)

    Raises:
        DispatchError: on a negative commitment, an unsolvable step or a trajectory violation
    """
    if w_da < 0 or not math.isfinite(w_da):
        raise DispatchError(f"committed workload must be finite and non-negative, got {w_da}")
    state = replace(initial or SystemState.initial(plant), r_remaining=float(w_da))
    if inputs.e_target is None:
        inputs = replace(inputs, e_target=state.e_bess)
    penalty = effective_penalty(inputs, plant)
    if penalty > inputs.m_rt:
        logger.warning(f"Under-delivery penalty raised from {inputs.m_rt:.3g} to {penalty:.3g} per slot equivalent")
    logger.info(f"Dispatching {w_da:.6g} workload units over {inputs.slots} slots (H={inputs.horizon})")

    states = [state]
    steps: List[StepResult] = []
    for tau in range(inputs.slots):
        result = step(tau, states[-1], inputs, plant)
        steps.append(result)
        states.append(result.next_state)

    points = [s.point for s in steps]
    relaxed = any(s.cyclic_relaxed for s in steps)
    report = validate_trajectory(
        states, points, inputs.limits, inputs.checkpoint, plant, inputs.t_amb,
        check_cyclic=not relaxed, e_initial=inputs.e_target, pwl_k=inputs.pwl_breakpoints,
    )
    if not report.ok:
        raise DispatchError(f"dispatched trajectory violates {report.summary()}")

    record = DispatchRecord(
        points=points,
        states=states,
        p_exc=np.array([s.p_exc for s in steps]),
        s_shed=np.array([s.s_shed for s in steps]),
        limits=inputs.limits,
        prices=np.asarray(inputs.prices, dtype=float),
        t_amb=np.asarray(inputs.t_amb, dtype=float),
        delta=tuple(inputs.checkpoint.delta),
        dt_hours=plant.dt_hours,
        c_deg=plant.bess.c_deg,
        p_cool=np.array([eir(float(inputs.t_amb[t]), plant.thermal) * pt.q_cool for t, pt in enumerate(points)]),
        flagged=[s.flagged for s in steps],
        cyclic_relaxed=[s.cyclic_relaxed for s in steps],
        statuses=[s.status.value for s in steps],
        nodes=[s.stats.nodes for s in steps],
        lp_iterations=[s.stats.lp_iterations for s in steps],
    )
    day = metrics(record)
    logger.info(
        f"Day done: delivered {day.delivered:.6g}, shed {day.under_delivery:.6g}, "
        f"cost {day.energy_cost:.2f}, {day.flagged_steps} flagged steps"
    )
    return record, day
