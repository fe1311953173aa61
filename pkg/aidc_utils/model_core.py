"""
Per-slot physics of the AI data center (AIDC) and a trajectory validator.

Units: powers in MW, energies in MWh, temperatures in degC, per-server
coefficients in W (converted with 1e-6). Sign convention at the PCC:
positive exchange is import from the grid, negative is export.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config import BessConfig, ComputeConfig, PlantConfig, ThermalConfig

if TYPE_CHECKING:
    from .grid_limits import PccLimitSeries

logger = logging.getLogger(__name__)

# Constants
VALIDATION_TOL = 1e-6
DOMAIN_TOL = 1e-7
W_TO_MW = 1e-6


class DomainError(ValueError):
    """Raised when a physical relation is evaluated outside its admissible domain."""


@dataclass(frozen=True)
class CheckpointPattern:
    """Per-slot checkpoint indicator; a running cluster may only stop where delta is 1."""

    delta: Tuple[int, ...]
    period: Optional[int] = None

    def __post_init__(self):
        """Validate pattern entries."""
        if any(d not in (0, 1) for d in self.delta):
            raise ValueError("checkpoint pattern entries must be 0 or 1")

    @classmethod
    def periodic(cls, period: int, slots: int) -> "CheckpointPattern":
        """Repeating [0, ..., 0, 1] with the 1 on every period-th slot."""
        if period < 1:
            raise ValueError("checkpoint period must be at least 1")
        return cls(delta=tuple(1 if (t + 1) % period == 0 else 0 for t in range(slots)), period=period)

    def __len__(self) -> int:
        return len(self.delta)

    def __getitem__(self, t: int) -> int:
        return self.delta[t]

    def window(self, start: int, stop: int) -> Tuple[int, ...]:
        return self.delta[start:stop]


@dataclass(frozen=True)
class OperatingPoint:
    """One slot's decisions. p_it, when set, is the scheduled IT power (PWL value)."""

    mu: int = 0
    s: float = 0.0
    q_cool: float = 0.0
    p_ch: float = 0.0
    p_dis: float = 0.0
    beta: int = 0
    p_it: Optional[float] = None

    def __post_init__(self):
        """Reject malformed decision values."""
        if self.mu not in (0, 1) or self.beta not in (0, 1):
            raise DomainError("mu and beta must be binary")
        if min(self.q_cool, self.p_ch, self.p_dis) < -DOMAIN_TOL:
            raise DomainError("q_cool, p_ch and p_dis must be non-negative")


@dataclass(frozen=True)
class SystemState:
    """State at the start of a slot."""

    t_in: float
    e_bess: float
    mu_prev: int = 0
    r_remaining: float = 0.0
    p_exc_prev: Optional[float] = None

    @classmethod
    def initial(cls, plant: PlantConfig, r_remaining: float = 0.0) -> "SystemState":
        return cls(t_in=plant.thermal.t_in_init, e_bess=plant.bess.e_init, mu_prev=0, r_remaining=r_remaining)


def _check_throughput(s: float, mu: int, cfg: ComputeConfig) -> None:
    if mu == 0:
        if abs(s) > DOMAIN_TOL:
            raise DomainError(f"inactive cluster must have zero throughput, got s={s}")
    elif mu == 1:
        if not cfg.s_min - DOMAIN_TOL <= s <= 1.0 + DOMAIN_TOL:
            raise DomainError(f"throughput {s} outside calibrated range [{cfg.s_min}, 1]")
    else:
        raise DomainError(f"mu must be binary, got {mu}")


def it_power(s: float, mu: int, cfg: ComputeConfig) -> float:
    """
    Aggregate IT power of the cluster.

    Args:
        s: normalized throughput
        mu: cluster on/off
        cfg: compute configuration

    Returns:
        IT power in MW (exactly 0 when mu=0)

    Raises:
        DomainError: if s is outside the admissible set for mu
    """
    _check_throughput(s, mu, cfg)
    if mu == 0:
        return 0.0
    return cfg.n_server * cfg.server_watts(s) * W_TO_MW


def workload_rate(s: float, mu: int, cfg: ComputeConfig) -> float:
    """Workload units per second processed by the cluster."""
    _check_throughput(s, mu, cfg)
    return cfg.n_server * cfg.r_peak * s * mu


def efficient_throughput(cfg: ComputeConfig) -> float:
    """Throughput maximizing workload per watt, clamped to [s_min, 1]."""
    s_star = math.sqrt(cfg.alpha0 / cfg.alpha2)
    return min(max(s_star, cfg.s_min), 1.0)


@lru_cache(maxsize=256)
def _warn_extrapolation(t_amb_c: float, low: float, high: float) -> None:
    logger.warning(f"EIR correction evaluated at {t_amb_c:.1f} degC, outside [{low}, {high}] degC")


def eir(t_amb_c: float, cfg: ThermalConfig) -> float:
    """Temperature-corrected energy input ratio of the cooling plant."""
    if not cfg.eir_valid_min <= t_amb_c <= cfg.eir_valid_max:
        _warn_extrapolation(round(float(t_amb_c), 1), cfg.eir_valid_min, cfg.eir_valid_max)
    f = 1.8 * t_amb_c + 32.0
    phi = -0.000006 * f * f + 0.004941 * f + 0.58462
    return cfg.eir_nom * phi


def cooling_power(q_cool: float, t_amb_c: float, cfg: ThermalConfig) -> float:
    """Electrical power drawn by the chillers to extract q_cool MW of heat."""
    if not -DOMAIN_TOL <= q_cool <= cfg.q_cool_max + DOMAIN_TOL:
        raise DomainError(f"q_cool={q_cool} outside [0, {cfg.q_cool_max}]")
    return eir(t_amb_c, cfg) * q_cool


def thermal_step(t_in: float, t_amb: float, p_it: float, q_cool: float, cfg: ThermalConfig, dt: float) -> float:
    """Advance indoor temperature by one slot of length dt hours."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    return t_in + (dt / cfg.c_th) * (p_it - (t_in - t_amb) / cfg.r_th - q_cool)


def bess_step(e: float, p_ch: float, p_dis: float, cfg: BessConfig, dt: float) -> float:
    """Advance stored energy by one slot; simultaneous charge and discharge is rejected."""
    if p_ch < -DOMAIN_TOL or p_dis < -DOMAIN_TOL:
        raise DomainError("charge and discharge power must be non-negative")
    if p_ch > DOMAIN_TOL and p_dis > DOMAIN_TOL:
        raise DomainError(f"simultaneous charge ({p_ch}) and discharge ({p_dis})")
    return e + (p_ch * cfg.eta_ch - p_dis / cfg.eta_dis) * dt


def scheduled_it_power(pt: OperatingPoint, cfg: ComputeConfig) -> float:
    if pt.p_it is not None:
        return pt.p_it
    return it_power(pt.s, pt.mu, cfg)


def pcc_exchange(pt: OperatingPoint, t_amb: float, plant: PlantConfig) -> float:
    """Net PCC exchange in MW (positive = import)."""
    p_it = scheduled_it_power(pt, plant.compute)
    return p_it / plant.compute.eta_ipcs + cooling_power(pt.q_cool, t_amb, plant.thermal) + pt.p_ch - pt.p_dis


def advance_state(
    state: SystemState, pt: OperatingPoint, t_amb: float, plant: PlantConfig, s_shed: float = 0.0
) -> SystemState:
    """Apply one slot's decisions to the state (temperature, SoC, remaining workload, mu, exchange)."""
    dt = plant.dt_hours
    p_it = scheduled_it_power(pt, plant.compute)
    delivered = workload_rate(pt.s, pt.mu, plant.compute) * plant.horizon.dt_seconds
    return SystemState(
        t_in=thermal_step(state.t_in, t_amb, p_it, pt.q_cool, plant.thermal, dt),
        e_bess=bess_step(state.e_bess, pt.p_ch, pt.p_dis, plant.bess, dt),
        mu_prev=pt.mu,
        r_remaining=state.r_remaining - delivered - s_shed,
        p_exc_prev=pcc_exchange(pt, t_amb, plant),
    )


def simulate_states(
    initial: SystemState, points: Sequence[OperatingPoint], t_amb: Sequence[float], plant: PlantConfig
) -> List[SystemState]:
    """Forward-simulate a schedule; returns T+1 states including the terminal one."""
    if len(points) != len(t_amb):
        raise DomainError("points and ambient temperature series differ in length")
    states = [initial]
    for pt, temp in zip(points, t_amb):
        states.append(advance_state(states[-1], pt, temp, plant))
    return states


def pwl_breakpoints(cfg: ComputeConfig, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """K uniform throughput breakpoints over [s_min, 1] and per-server watts at each."""
    if k < 2:
        raise ValueError("at least two breakpoints are required")
    s = np.linspace(cfg.s_min, 1.0, k)
    return s, cfg.alpha0 + cfg.alpha1 * s + cfg.alpha2 * s * s


def pwl_error_bound(cfg: ComputeConfig, k: int) -> float:
    """Worst-case chord-above-curve error of the K-point interpolant, W per server."""
    ds = (1.0 - cfg.s_min) / (k - 1)
    return cfg.alpha2 * ds * ds / 4.0


@dataclass(frozen=True)
class Violation:
    slot: int
    constraint: str
    residual: float


@dataclass(frozen=True)
class ViolationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def constraints(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for v in self.violations:
            counts[v.constraint] = counts.get(v.constraint, 0) + 1
        return counts

    def summary(self) -> str:
        if self.ok:
            return "no violations"
        return ", ".join(f"{name} x{count}" for name, count in sorted(self.constraints().items()))


def validate_trajectory(
    states: Sequence[SystemState],
    points: Sequence[OperatingPoint],
    limits: "PccLimitSeries",
    ckpt: CheckpointPattern,
    plant: PlantConfig,
    t_amb: Sequence[float],
    *,
    check_cyclic: bool = True,
    e_initial: Optional[float] = None,
    pwl_k: Optional[int] = None,
    tol: float = VALIDATION_TOL,
) -> ViolationReport:
    """
    Check a trajectory against every hard constraint of the plant and the PCC.

    Args:
        states: state at the start of each slot (T entries) or including the terminal state (T+1)
        points: applied decisions (T entries)
        limits: PCC envelope and ramp limit
        ckpt: checkpoint pattern
        plant: plant configuration
        t_amb: ambient temperature per slot
        check_cyclic: require E(T+1) = E(1)
        e_initial: SoC target for the cyclic check (defaults to states[0].e_bess)
        pwl_k: breakpoint count used to schedule p_it, enables the interpolation-error bound
        tol: absolute tolerance on every bound

    Returns:
        ViolationReport listing (slot, constraint, residual); empty when feasible

    Raises:
        DomainError: on length mismatch
    """
    n = len(points)
    if len(states) not in (n, n + 1) or len(limits) != n or len(ckpt) != n or len(t_amb) != n:
        raise DomainError(
            f"length mismatch: {len(states)} states, {n} points, {len(limits)} limit slots, "
            f"{len(ckpt)} checkpoint slots, {len(t_amb)} temperatures"
        )
    compute, thermal, bess = plant.compute, plant.thermal, plant.bess
    dt = plant.dt_hours
    found: List[Violation] = []

    def flag(slot: int, name: str, residual: float) -> None:
        found.append(Violation(slot, name, float(residual)))

    all_states = list(states)
    if len(all_states) == n and n > 0:
        last, pt = all_states[-1], points[-1]
        p_it = pt.p_it if pt.p_it is not None else compute.n_server * compute.server_watts(pt.s) * W_TO_MW * pt.mu
        all_states.append(
            SystemState(
                t_in=thermal_step(last.t_in, t_amb[-1], p_it, pt.q_cool, thermal, dt),
                e_bess=last.e_bess + (pt.p_ch * bess.eta_ch - pt.p_dis / bess.eta_dis) * dt,
                mu_prev=pt.mu,
            )
        )

    pwl_slack = compute.n_server * pwl_error_bound(compute, pwl_k) * W_TO_MW if pwl_k else 0.0
    mu_prev = all_states[0].mu_prev if all_states else 0
    p_prev = all_states[0].p_exc_prev if all_states else None
    for t, pt in enumerate(points):
        if pt.mu == 1:
            if pt.s < compute.s_min - tol or pt.s > 1.0 + tol:
                flag(t, "throughput", pt.s)
        elif abs(pt.s) > tol:
            flag(t, "throughput", pt.s)
        if pt.mu < mu_prev - ckpt[t]:
            flag(t, "checkpoint", mu_prev - ckpt[t] - pt.mu)
        mu_prev = pt.mu
        if pt.q_cool > thermal.q_cool_max + tol or pt.q_cool < -tol:
            flag(t, "cooling_bounds", pt.q_cool)
        if pt.p_ch > pt.beta * bess.p_max + tol or pt.p_ch < -tol:
            flag(t, "charge_bound", pt.p_ch - pt.beta * bess.p_max)
        if pt.p_dis > (1 - pt.beta) * bess.p_max + tol or pt.p_dis < -tol:
            flag(t, "discharge_bound", pt.p_dis - (1 - pt.beta) * bess.p_max)

        mu_ok = pt.mu == 0 or compute.s_min - tol <= pt.s <= 1.0 + tol
        quadratic = compute.n_server * compute.server_watts(pt.s) * W_TO_MW * pt.mu if mu_ok else None
        if pt.p_it is not None and quadratic is not None:
            if pt.p_it < quadratic - tol:
                flag(t, "pwl_fidelity", pt.p_it - quadratic)
            elif pwl_k and pt.p_it > quadratic + pwl_slack + tol:
                flag(t, "pwl_fidelity", pt.p_it - quadratic - pwl_slack)
        p_it = pt.p_it if pt.p_it is not None else (quadratic or 0.0)

        p_exc = p_it / compute.eta_ipcs + eir(t_amb[t], thermal) * pt.q_cool + pt.p_ch - pt.p_dis
        if p_exc > limits.p_hi[t] + tol:
            flag(t, "pcc_upper", p_exc - limits.p_hi[t])
        if p_exc < limits.p_lo[t] - tol:
            flag(t, "pcc_lower", limits.p_lo[t] - p_exc)
        if p_prev is not None and abs(p_exc - p_prev) > limits.r_grid + tol:
            flag(t, "ramp", abs(p_exc - p_prev) - limits.r_grid)
        p_prev = p_exc

        cur, nxt = all_states[t], all_states[t + 1]
        expected_t = thermal_step(cur.t_in, t_amb[t], p_it, pt.q_cool, thermal, dt)
        if abs(nxt.t_in - expected_t) > tol:
            flag(t, "thermal_dynamics", nxt.t_in - expected_t)
        expected_e = cur.e_bess + (pt.p_ch * bess.eta_ch - pt.p_dis / bess.eta_dis) * dt
        if abs(nxt.e_bess - expected_e) > tol:
            flag(t, "soc_dynamics", nxt.e_bess - expected_e)

    for t, st in enumerate(all_states):
        if thermal.enabled and (st.t_in > thermal.t_max + tol or st.t_in < thermal.t_min - tol):
            flag(t, "temperature_band", st.t_in)
        if st.e_bess > bess.e_max + tol or st.e_bess < bess.e_min - tol:
            flag(t, "soc_bounds", st.e_bess)

    if check_cyclic and all_states:
        target = all_states[0].e_bess if e_initial is None else e_initial
        if abs(all_states[-1].e_bess - target) > tol:
            flag(n, "soc_cyclic", all_states[-1].e_bess - target)

    return ViolationReport(tuple(found))
