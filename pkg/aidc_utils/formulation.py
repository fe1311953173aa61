"""
Per-slot AIDC constraint block shared by the day-ahead and real-time models.

The quadratic server power law enters through K breakpoint weights lambda_k per slot:
sum(lambda) = mu, s = sum(lambda_k s_k), P_IT = n * sum(lambda_k p_k). In "exact" mode
K-1 segment binaries force adjacent breakpoints; in "convex" mode they are dropped and
adjacency is verified on the solution (falling back to exact mode when it fails).

Indoor temperature and stored energy are affine expressions of the decisions anchored
to the block's initial state, so no state variables are created.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .branch_bound import solve_milp
from .config import PlantConfig, SolverOptions
from .grid_limits import PccLimitSeries
from .milp_model import LinearExpr, MilpModel, ObjectiveSense, Sense, Solution, SolveStatus, Variable
from .model_core import W_TO_MW, OperatingPoint, SystemState, eir, pwl_breakpoints
from .simplex import solve_lp

logger = logging.getLogger(__name__)

ADJACENCY_TOL = 1e-9
POLISH_REL_TOL = 1e-9


@dataclass
class SlotVars:
    mu: Variable
    beta: Variable
    lam: List[Variable]
    q_cool: Variable
    p_ch: Variable
    p_dis: Variable
    dev_plus: Optional[Variable] = None
    dev_minus: Optional[Variable] = None
    seg: List[Variable] = field(default_factory=list)
    shed: Optional[Variable] = None


class AidcBlock:
    """
    Decision variables and operating rows of the plant over a run of consecutive slots.

    Args:
        model: model to add variables and rows to
        plant: plant configuration
        limits: PCC envelope for the block's slots
        t_amb: ambient temperature per slot
        delta: checkpoint indicator per slot
        state: state at the start of the first slot (T_in, E, mu_prev, p_exc_prev)
        pwl_k: number of breakpoints
        pwl_mode: "convex" or "exact"
        s_anchor: efficiency anchor; when given, |s - s_anchor| deviation variables are added
        with_shed: add a non-negative under-delivery slack per slot (slot-equivalents)
        prefix: variable-name prefix (distinguishes scenarios in joint models)
        t0: global index of the first slot, used in names
    """

    def __init__(
        self,
        model: MilpModel,
        plant: PlantConfig,
        limits: PccLimitSeries,
        t_amb: Sequence[float],
        delta: Sequence[int],
        state: SystemState,
        pwl_k: int,
        pwl_mode: str = "convex",
        s_anchor: Optional[float] = None,
        with_shed: bool = False,
        prefix: str = "",
        t0: int = 0,
    ):
        n = len(limits)
        if len(t_amb) != n or len(delta) != n:
            raise ValueError(
                f"block inputs differ in length: {n} limit slots, {len(t_amb)} temperatures, {len(delta)} checkpoints"
            )
        self.model = model
        self.plant = plant
        self.limits = limits
        self.t_amb = [float(v) for v in t_amb]
        self.delta = [int(d) for d in delta]
        self.state = state
        self.pwl_mode = pwl_mode
        self.s_anchor = s_anchor
        self.prefix = prefix
        self.t0 = t0
        self.s_k, watts = pwl_breakpoints(plant.compute, pwl_k)
        self.p_k = plant.compute.n_server * watts * W_TO_MW
        self.eir = [eir(v, plant.thermal) for v in self.t_amb]
        self.slots: List[SlotVars] = []
        self.t_in: List[LinearExpr] = []  # T_in at the start of slot t+1
        self.energy: List[LinearExpr] = []  # E at the start of slot t+1
        self._build(with_shed)

    def __len__(self) -> int:
        return len(self.slots)

    def _name(self, kind: str, t: int, k: Optional[int] = None) -> str:
        suffix = f"_{k}" if k is not None else ""
        return f"{self.prefix}{kind}{suffix}[{self.t0 + t}]"

    def _build(self, with_shed: bool) -> None:
        m, plant = self.model, self.plant
        thermal, bess = plant.thermal, plant.bess
        dt = plant.dt_hours
        k_count = len(self.s_k)
        q_max = thermal.q_cool_max if thermal.enabled else 0.0
        for t in range(len(self.limits)):
            slot = SlotVars(
                mu=m.add_binary(self._name("mu", t)),
                beta=m.add_binary(self._name("beta", t)),
                lam=[m.add_var(self._name("lam", t, k), 0.0, 1.0) for k in range(k_count)],
                q_cool=m.add_var(self._name("q", t), 0.0, q_max),
                p_ch=m.add_var(self._name("pch", t), 0.0, bess.p_max),
                p_dis=m.add_var(self._name("pdis", t), 0.0, bess.p_max),
            )
            if self.s_anchor is not None:
                slot.dev_plus = m.add_var(self._name("devp", t), 0.0, 1.0)
                slot.dev_minus = m.add_var(self._name("devm", t), 0.0, 1.0)
            if self.pwl_mode == "exact":
                slot.seg = [m.add_binary(self._name("seg", t, j)) for j in range(k_count - 1)]
            if with_shed:
                slot.shed = m.add_var(self._name("shed", t), 0.0)
            self.slots.append(slot)

        a = 1.0 - dt / (thermal.c_th * thermal.r_th)
        b = dt / thermal.c_th
        t_prev = LinearExpr(constant=self.state.t_in)
        e_prev = LinearExpr(constant=self.state.e_bess)
        for t, slot in enumerate(self.slots):
            t_next = t_prev * a
            t_next.add(self.p_it(t), b)
            t_next.add(slot.q_cool, -b)
            t_next.constant += b * self.t_amb[t] / thermal.r_th
            self.t_in.append(t_next)
            e_next = e_prev.copy()
            e_next.add(slot.p_ch, bess.eta_ch * dt)
            e_next.add(slot.p_dis, -dt / bess.eta_dis)
            self.energy.append(e_next)
            t_prev, e_prev = t_next, e_next

        for t, slot in enumerate(self.slots):
            self._slot_rows(t, slot)

    def _slot_rows(self, t: int, slot: SlotVars) -> None:
        m, plant = self.model, self.plant
        thermal, bess = plant.thermal, plant.bess
        lam_sum = LinearExpr.total(slot.lam)
        m.add_constraint(lam_sum - slot.mu, Sense.EQ, 0.0, self._name("pwl", t))
        if slot.seg:
            m.add_constraint(LinearExpr.total(slot.seg) - slot.mu, Sense.EQ, 0.0, self._name("sos", t))
            last = len(slot.lam) - 1
            for k, lam in enumerate(slot.lam):
                expr = LinearExpr.of(lam)
                if k > 0:
                    expr.add(slot.seg[k - 1], -1.0)
                if k < last:
                    expr.add(slot.seg[k], -1.0)
                m.add_constraint(expr, Sense.LE, 0.0, self._name("adj", t, k))

        mu_prev = self.slots[t - 1].mu if t > 0 else LinearExpr(constant=self.state.mu_prev)
        m.add_constraint(slot.mu - mu_prev, Sense.GE, -self.delta[t], self._name("ckpt", t))

        m.add_constraint(slot.p_ch - bess.p_max * slot.beta, Sense.LE, 0.0, self._name("chg", t))
        m.add_constraint(slot.p_dis + bess.p_max * slot.beta, Sense.LE, bess.p_max, self._name("dis", t))

        p_exc = self.p_exc(t)
        m.add_constraint(p_exc, Sense.LE, float(self.limits.p_hi[t]), self._name("pcchi", t))
        m.add_constraint(p_exc, Sense.GE, float(self.limits.p_lo[t]), self._name("pcclo", t))
        previous = self.p_exc(t - 1) if t > 0 else self.state.p_exc_prev
        if previous is not None:
            step = p_exc - previous
            m.add_constraint(step, Sense.LE, self.limits.r_grid, self._name("rampu", t))
            m.add_constraint(step, Sense.GE, -self.limits.r_grid, self._name("rampd", t))

        if thermal.enabled:
            m.add_constraint(self.t_in[t], Sense.LE, thermal.t_max, self._name("tmax", t))
            m.add_constraint(self.t_in[t], Sense.GE, thermal.t_min, self._name("tmin", t))
        m.add_constraint(self.energy[t], Sense.LE, bess.e_max, self._name("emax", t))
        m.add_constraint(self.energy[t], Sense.GE, bess.e_min, self._name("emin", t))

        if slot.dev_plus is not None:
            expr = self.throughput(t) - slot.dev_plus + slot.dev_minus
            m.add_constraint(expr, Sense.EQ, self.s_anchor, self._name("dev", t))

    # ----------------------------------------------------------------- expressions

    def throughput(self, t: int) -> LinearExpr:
        return LinearExpr.of({lam: s for lam, s in zip(self.slots[t].lam, self.s_k)})

    def p_it(self, t: int) -> LinearExpr:
        return LinearExpr.of({lam: p for lam, p in zip(self.slots[t].lam, self.p_k)})

    def p_exc(self, t: int) -> LinearExpr:
        slot = self.slots[t]
        expr = self.p_it(t) * (1.0 / self.plant.compute.eta_ipcs)
        expr.add(slot.q_cool, self.eir[t])
        expr.add(slot.p_ch)
        expr.add(slot.p_dis, -1.0)
        return expr

    def workload(self) -> LinearExpr:
        """Delivered workload over the block in full-throughput slot equivalents."""
        return LinearExpr.total(self.throughput(t) for t in range(len(self.slots)))

    def shed_total(self) -> LinearExpr:
        return LinearExpr.total(slot.shed for slot in self.slots if slot.shed is not None)

    def deviation(self) -> LinearExpr:
        return LinearExpr.total(v for slot in self.slots for v in (slot.dev_plus, slot.dev_minus) if v is not None)

    def it_energy(self) -> LinearExpr:
        return LinearExpr.total(self.p_it(t) for t in range(len(self.slots)))

    def energy_end(self) -> LinearExpr:
        return self.energy[-1] if self.energy else LinearExpr(constant=self.state.e_bess)

    def add_cyclic_soc(self, target: float) -> int:
        """Require the stored energy after the last slot to equal target."""
        return self.model.add_constraint(self.energy_end(), Sense.EQ, target, f"{self.prefix}cyclic")

    # ----------------------------------------------------------------- solution access

    def adjacency_ok(self, x: np.ndarray) -> bool:
        """True when every running slot interpolates between two neighbouring breakpoints."""
        for slot in self.slots:
            used = [k for k, lam in enumerate(slot.lam) if x[lam.index] > ADJACENCY_TOL]
            if used and used[-1] - used[0] > 1:
                return False
        return True

    def extract(self, x: np.ndarray) -> List[OperatingPoint]:
        """Operating points of the block's slots, rounded and clipped onto their exact domains."""
        bess, thermal = self.plant.bess, self.plant.thermal
        q_max = thermal.q_cool_max if thermal.enabled else 0.0
        points = []
        for slot in self.slots:
            mu = int(round(x[slot.mu.index]))
            beta = int(round(x[slot.beta.index]))
            lam = np.clip(np.array([x[v.index] for v in slot.lam]), 0.0, 1.0)
            if mu == 1 and lam.sum() > 0:
                lam = lam / lam.sum()
                s = float(np.clip(lam @ self.s_k, self.s_k[0], 1.0))
                p_it = float(lam @ self.p_k)
            else:
                s, p_it = 0.0, 0.0
            p_ch = float(np.clip(x[slot.p_ch.index], 0.0, bess.p_max))
            p_dis = float(np.clip(x[slot.p_dis.index], 0.0, bess.p_max))
            if beta == 1:
                p_dis = 0.0
            else:
                p_ch = 0.0
            q_cool = float(np.clip(x[slot.q_cool.index], 0.0, q_max))
            points.append(OperatingPoint(mu=mu, s=s, q_cool=q_cool, p_ch=p_ch, p_dis=p_dis, beta=beta, p_it=p_it))
        return points

    def shed_values(self, x: np.ndarray) -> List[float]:
        return [max(0.0, float(x[slot.shed.index])) if slot.shed is not None else 0.0 for slot in self.slots]

    def minimal_run_hint(self) -> Dict[str, float]:
        """
        Cluster schedule that stops at the first checkpoint and stays stopped.

        A running cluster keeps mu = 1 until a checkpoint slot allows it to drop; an idle one
        stays at 0. Only mu is fixed, the battery and cooling are left to the solver.
        """
        hint: Dict[str, float] = {}
        running = self.state.mu_prev == 1
        for t, slot in enumerate(self.slots):
            if running and self.delta[t] == 1:
                running = False
            hint[slot.mu.name] = 1.0 if running else 0.0
        return hint


def _minimal_run(blocks: List[AidcBlock]) -> Dict[str, float]:
    hint: Dict[str, float] = {}
    for block in blocks:
        hint.update(block.minimal_run_hint())
    return hint


def integer_hint(model: MilpModel, x: np.ndarray) -> Dict[str, float]:
    """Rounded integer values of a solution keyed by variable name."""
    return {v.name: float(round(x[v.index])) for v in model.variables if v.is_integer}



BuildFn = Callable[[str], Tuple[MilpModel, List[AidcBlock]]]


@dataclass
class PwlSolve:
    solution: Solution
    model: MilpModel
    blocks: List[AidcBlock]
    mode: str
    fell_back: bool = False


def _polish(model: MilpModel, blocks: List[AidcBlock], solution: Solution, opts: SolverOptions) -> Solution:
    """Fix the binaries and move P_IT onto the lower envelope without losing objective."""
    x = solution.x
    fixed = {i: (round(x[i]), round(x[i])) for i in model.integer_indices}
    value = solution.objective
    slack = POLISH_REL_TOL * max(1.0, abs(value))
    if model.sense == ObjectiveSense.MAXIMIZE:
        keep = (model.objective_expr(), Sense.GE, value - slack)
    else:
        keep = (model.objective_expr(), Sense.LE, value + slack)
    energy = LinearExpr.total(block.it_energy() for block in blocks)
    polish = model.with_bounds(fixed).with_constraint(*keep, name="keep_objective").with_objective(energy, "min")
    result = solve_lp(polish, opts)
    if result.status != SolveStatus.OPTIMAL:
        logger.debug(f"Polish LP ended with {result.status.value}; keeping the unpolished point")
        return solution
    return Solution(
        status=solution.status,
        x=result.x,
        objective=model.objective_value(result.x),
        bound=solution.bound,
        gap=solution.gap,
        stats=solution.stats.merge(result.stats),
        message=solution.message,
    )


def solve_pwl(
    build: BuildFn, opts: SolverOptions, pwl_mode: str = "convex", hints: Sequence[Mapping[str, float]] = ()
) -> PwlSolve:
    """
    Solve a model built by build(mode), handling the breakpoint-adjacency requirement.

    In convex mode the relaxed model is solved, polished and checked for adjacency; a
    failed check triggers a warning and a re-solve of build("exact"), seeded with the
    convex solution's binaries. The blocks' minimal-run schedules are always tried as
    hints after the caller's own.

    Args:
        build: model factory taking the PWL mode
        opts: solver options
        pwl_mode: "convex" or "exact"
        hints: partial integer assignments passed to the MILP search

    Returns:
        PwlSolve with the solution of whichever model was solved last
    """
    model, blocks = build(pwl_mode)
    solution = solve_milp(model, opts, [*hints, _minimal_run(blocks)])
    if pwl_mode == "exact" or not solution.has_solution:
        return PwlSolve(solution, model, blocks, pwl_mode)
    solution = _polish(model, blocks, solution, opts)
    if all(block.adjacency_ok(solution.x) for block in blocks):
        return PwlSolve(solution, model, blocks, pwl_mode)
    logger.warning(f"Non-adjacent breakpoints in {model.name}; re-solving with segment binaries")
    seed = integer_hint(model, solution.x)
    model, blocks = build("exact")
    exact = solve_milp(model, opts, [seed, *hints, _minimal_run(blocks)])
    exact.stats = exact.stats.merge(solution.stats)
    return PwlSolve(exact, model, blocks, "exact", fell_back=True)

