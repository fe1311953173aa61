"""
Bounded revised primal simplex for the LP relaxations of MilpModel.

The LP is brought to the form  min c'x  s.t.  Ax = b,  l <= x <= u  by adding one slack
column per inequality row (LE slack in [0, inf), GE slack in (-inf, 0]). Singleton rows
become bounds and empty rows are checked and dropped. Phase 1 starts from an all-artificial
basis; phase 2 fixes the artificials at zero. The basis is held as a dense LU factorization
plus a product-form eta file that is refactorized every `refactor_interval` pivots.
"""

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy import sparse

from .config import SolverOptions
from .milp_model import MilpModel, ObjectiveSense, Sense, Solution, SolveStats, SolveStatus

logger = logging.getLogger(__name__)

STALL_STEP = 1e-12
SINGULAR_PIVOT = 1e-11


class VarStatus(IntEnum):
    BASIC = 0
    AT_LOWER = 1
    AT_UPPER = 2
    AT_ZERO = 3  # free nonbasic


class SingularBasisError(RuntimeError):
    pass


@dataclass
class StandardForm:
    """min c'x s.t. A x = b, lb <= x <= ub; the first n_orig columns are the model variables."""

    A: sparse.csc_matrix
    b: np.ndarray
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_orig: int
    obj_sign: float = 1.0
    obj_constant: float = 0.0
    infeasible: bool = False
    message: str = ""
    row_map: List[int] = field(default_factory=list)


def _tighten(lb: float, ub: float, coef: float, sense: Sense, rhs: float) -> Tuple[float, float]:
    value = rhs / coef
    if sense == Sense.EQ:
        return max(lb, value), min(ub, value)
    upper = (sense == Sense.LE) == (coef > 0)
    if upper:
        return lb, min(ub, value)
    return max(lb, value), ub


def to_standard_form(
    model: MilpModel,
    lb: Optional[np.ndarray] = None,
    ub: Optional[np.ndarray] = None,
    opts: Optional[SolverOptions] = None,
    integer: Optional[List[int]] = None,
) -> StandardForm:
    """
    Build the equality standard form of the model's LP relaxation.

    Args:
        model: the model
        lb, ub: variable bounds overriding the model's (branch-and-bound nodes)
        opts: tolerances
        integer: indices whose tightened bounds are rounded inward

    Returns:
        StandardForm; `infeasible` is set when bound tightening already proves infeasibility
    """
    opts = opts or SolverOptions()
    lb = model.lb if lb is None else np.array(lb, dtype=float)
    ub = model.ub if ub is None else np.array(ub, dtype=float)
    n = model.n_vars
    mat = model.matrix
    sign = 1.0 if model.sense == ObjectiveSense.MINIMIZE else -1.0
    int_set = set(integer or [])
    scale_tol = opts.feasibility_tol

    keep_rows: List[int] = []
    infeasible, message = False, ""
    for r, con in enumerate(model.constraints):
        if not con.coeffs:
            bad = (
                (con.sense == Sense.LE and con.rhs < -scale_tol)
                or (con.sense == Sense.GE and con.rhs > scale_tol)
                or (con.sense == Sense.EQ and abs(con.rhs) > scale_tol)
            )
            if bad:
                infeasible, message = True, f"empty row {con.name} cannot hold"
            continue
        if len(con.coeffs) == 1:
            index, coef = con.coeffs[0]
            lb[index], ub[index] = _tighten(lb[index], ub[index], coef, con.sense, con.rhs)
            continue
        keep_rows.append(r)

    for index in int_set:
        lb[index] = math.ceil(lb[index] - opts.integrality_tol) if math.isfinite(lb[index]) else lb[index]
        ub[index] = math.floor(ub[index] + opts.integrality_tol) if math.isfinite(ub[index]) else ub[index]
    crossed = lb > ub + scale_tol
    if np.any(crossed):
        bad = int(np.argmax(crossed))
        infeasible, message = True, f"bounds of {model.variables[bad].name} cross after tightening"
    ub = np.maximum(ub, lb)

    sub = mat[keep_rows] if keep_rows else sparse.csr_matrix((0, n))
    senses = [model.constraints[r].sense for r in keep_rows]
    ineq = [i for i, s in enumerate(senses) if s != Sense.EQ]
    m = len(keep_rows)
    slack = sparse.csr_matrix((np.ones(len(ineq)), (ineq, np.arange(len(ineq)))), shape=(m, len(ineq)))
    A = sparse.hstack([sub, slack], format="csc")
    s_lb = np.array([0.0 if senses[i] == Sense.LE else -math.inf for i in ineq])
    s_ub = np.array([math.inf if senses[i] == Sense.LE else 0.0 for i in ineq])
    c = np.concatenate([sign * model.c, np.zeros(len(ineq))])
    return StandardForm(
        A=A,
        b=np.array([model.constraints[r].rhs for r in keep_rows], dtype=float),
        c=c,
        lb=np.concatenate([lb, s_lb]),
        ub=np.concatenate([ub, s_ub]),
        n_orig=n,
        obj_sign=sign,
        obj_constant=model.objective_constant,
        infeasible=infeasible,
        message=message,
        row_map=keep_rows,
    )


class _Basis:
    """Dense LU of the basis matrix plus a product-form eta file."""

    def __init__(self, A: sparse.csc_matrix, basic: np.ndarray, refactor_interval: int):
        self.A = A
        self.basic = basic
        self.refactor_interval = refactor_interval
        self.etas: List[Tuple[int, np.ndarray]] = []
        self.lu = None
        self.refactor()

    def refactor(self) -> None:
        m = len(self.basic)
        self.etas = []
        if m == 0:
            self.lu = None
            return
        B = self.A[:, self.basic].toarray()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            try:
                lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
            except (ValueError, scipy.linalg.LinAlgError) as e:
                raise SingularBasisError(str(e)) from e
        diag = np.abs(np.diag(lu))
        if diag.size and diag.min() <= SINGULAR_PIVOT * max(1.0, diag.max()):
            raise SingularBasisError("basis matrix is singular")
        self.lu = (lu, piv)

    def ftran(self, v: np.ndarray) -> np.ndarray:
        if self.lu is None:
            return np.zeros(0)
        w = scipy.linalg.lu_solve(self.lu, v, check_finite=False)
        for r, alpha in self.etas:
            wr = w[r] / alpha[r]
            w -= alpha * wr
            w[r] = wr
        return w

    def btran(self, c: np.ndarray) -> np.ndarray:
        if self.lu is None:
            return np.zeros(0)
        z = np.array(c, dtype=float)
        for r, alpha in reversed(self.etas):
            z[r] = (z[r] - (alpha @ z - alpha[r] * z[r])) / alpha[r]
        return scipy.linalg.lu_solve(self.lu, z, trans=1, check_finite=False)

    def replace(self, r: int, q: int, alpha: np.ndarray) -> bool:
        """Swap column q into row r; returns True when a refactorization happened."""
        self.basic[r] = q
        self.etas.append((r, alpha.copy()))
        if len(self.etas) >= self.refactor_interval:
            self.refactor()
            return True
        return False


@dataclass
class LpResult:
    status: SolveStatus
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None  # model sense, constant included
    iterations: int = 0
    message: str = ""


class BoundedSimplex:
    """Two-phase bounded revised simplex on a StandardForm."""

    def __init__(self, form: StandardForm, opts: SolverOptions, deadline: Optional[float] = None):
        self.form = form
        self.opts = opts
        self.deadline = deadline
        self.iterations = 0

    def _column(self, j: int) -> np.ndarray:
        return self.A.getcol(j).toarray().ravel()

    def _recompute_basic(self) -> None:
        x_n = self.x.copy()
        x_n[self.basis.basic] = 0.0
        self.x[self.basis.basic] = self.basis.ftran(self.b - self.A @ x_n)

    def solve(self) -> LpResult:
        form, opts = self.form, self.opts
        if form.infeasible:
            return LpResult(SolveStatus.INFEASIBLE, message=form.message)
        m, n_total = form.A.shape
        lb, ub = form.lb.copy(), form.ub.copy()

        x = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
        status = np.where(
            np.isfinite(lb), VarStatus.AT_LOWER, np.where(np.isfinite(ub), VarStatus.AT_UPPER, VarStatus.AT_ZERO)
        ).astype(int)
        residual = form.b - form.A @ x if m else np.zeros(0)
        signs = np.where(residual >= 0, 1.0, -1.0)
        art = sparse.csc_matrix((signs, (np.arange(m), np.arange(m))), shape=(m, m))
        self.A = sparse.hstack([form.A, art], format="csc")
        self.b = form.b
        self.lb = np.concatenate([lb, np.zeros(m)])
        self.ub = np.concatenate([ub, np.full(m, math.inf)])
        self.x = np.concatenate([x, np.abs(residual)])
        self.status = np.concatenate([status, np.full(m, VarStatus.BASIC)]).astype(int)
        try:
            self.basis = _Basis(self.A, np.arange(n_total, n_total + m), opts.refactor_interval)
        except SingularBasisError as e:
            return LpResult(SolveStatus.NUMERICAL, message=str(e))

        bnorm = max(1.0, float(np.max(np.abs(form.b))) if m else 1.0)
        try:
            if m:
                cost1 = np.concatenate([np.zeros(n_total), np.ones(m)])
                phase1 = self._run(cost1)
                if phase1 != SolveStatus.OPTIMAL:
                    return LpResult(phase1, iterations=self.iterations, message="phase 1 did not finish")
                infeas = float(np.sum(self.x[n_total:]))
                if infeas > opts.feasibility_tol * bnorm * 10.0:
                    message = f"phase 1 sum {infeas:.3g}"
                    return LpResult(SolveStatus.INFEASIBLE, iterations=self.iterations, message=message)
                self.ub[n_total:] = 0.0
                for j in range(n_total, n_total + m):
                    if self.status[j] != VarStatus.BASIC:
                        self.x[j] = 0.0
                        self.status[j] = VarStatus.AT_LOWER
            cost2 = np.concatenate([form.c, np.zeros(m)])
            phase2 = self._run(cost2)
            if phase2 != SolveStatus.OPTIMAL:
                return LpResult(phase2, iterations=self.iterations)
            self.basis.refactor()
            self._recompute_basic()
        except SingularBasisError as e:
            logger.debug(f"Simplex aborted on a singular basis: {e}")
            return LpResult(SolveStatus.NUMERICAL, iterations=self.iterations, message=str(e))

        violation = float(np.max(np.concatenate([[0.0], self.lb - self.x, self.x - self.ub])))
        if violation > opts.feasibility_tol * bnorm * 100.0:
            message = f"bound residual {violation:.3g}"
            return LpResult(SolveStatus.NUMERICAL, iterations=self.iterations, message=message)
        x_orig = np.clip(self.x[: form.n_orig], form.lb[: form.n_orig], form.ub[: form.n_orig])
        objective = form.obj_sign * float(form.c[: form.n_orig] @ x_orig) + form.obj_constant
        return LpResult(SolveStatus.OPTIMAL, x=x_orig, objective=objective, iterations=self.iterations)

    def _run(self, cost: np.ndarray) -> SolveStatus:
        opts = self.opts
        tol_d = opts.optimality_tol * max(1.0, float(np.max(np.abs(cost))) if cost.size else 1.0)
        ptol = opts.pivot_tol
        stall = 0
        bland = False
        A, basis = self.A, self.basis
        movable = self.ub - self.lb > 0

        while True:
            if self.iterations >= opts.max_lp_iterations:
                return SolveStatus.LIMIT_REACHED
            if self.deadline is not None and time.monotonic() > self.deadline:
                return SolveStatus.LIMIT_REACHED

            basic = basis.basic
            y = basis.btran(cost[basic])
            d = cost - A.T @ y
            nonbasic = self.status != VarStatus.BASIC
            free = self.status == VarStatus.AT_ZERO
            can_inc = nonbasic & movable & ((self.status == VarStatus.AT_LOWER) | free) & (d < -tol_d)
            can_dec = nonbasic & movable & ((self.status == VarStatus.AT_UPPER) | free) & (d > tol_d)
            eligible = can_inc | can_dec
            if not eligible.any():
                return SolveStatus.OPTIMAL
            if bland:
                q = int(np.argmax(eligible))
            else:
                q = int(np.argmax(np.where(eligible, np.abs(d), -1.0)))
            direction = 1.0 if can_inc[q] else -1.0

            alpha = basis.ftran(self._column(q))
            delta = -direction * alpha
            x_b = self.x[basic]
            steps = np.full(len(basic), math.inf)
            dec = delta < -ptol
            inc = delta > ptol
            steps[dec] = (x_b[dec] - self.lb[basic][dec]) / -delta[dec]
            steps[inc] = (self.ub[basic][inc] - x_b[inc]) / delta[inc]
            steps = np.maximum(steps, 0.0)
            t_ratio = float(steps.min()) if steps.size else math.inf
            t_flip = self.ub[q] - self.lb[q]

            if math.isinf(t_ratio) and math.isinf(t_flip):
                return SolveStatus.UNBOUNDED

            self.iterations += 1
            if t_flip <= t_ratio:
                t = t_flip
                self.x[basic] = x_b + delta * t
                self.x[q] += direction * t
                self.status[q] = VarStatus.AT_UPPER if direction > 0 else VarStatus.AT_LOWER
                self.x[q] = self.ub[q] if direction > 0 else self.lb[q]
            else:
                t = t_ratio
                ties = np.flatnonzero(steps <= t_ratio + 1e-12 * (1.0 + t_ratio))
                if bland:
                    r = int(ties[np.argmin(basic[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(alpha[ties]))])
                leaving = int(basic[r])
                self.x[basic] = x_b + delta * t
                entering_value = self.x[q] + direction * t
                if delta[r] < 0:
                    self.status[leaving] = VarStatus.AT_LOWER
                    self.x[leaving] = self.lb[leaving]
                else:
                    self.status[leaving] = VarStatus.AT_UPPER
                    self.x[leaving] = self.ub[leaving]
                if not (math.isfinite(self.lb[leaving]) or math.isfinite(self.ub[leaving])):
                    self.status[leaving] = VarStatus.AT_ZERO
                    self.x[leaving] = 0.0
                self.status[q] = VarStatus.BASIC
                self.x[q] = entering_value
                if basis.replace(r, q, alpha):
                    self._recompute_basic()

            if t <= STALL_STEP:
                stall += 1
                if not bland and stall >= opts.bland_after:
                    logger.debug(f"Simplex stalled for {stall} iterations, switching to Bland's rule")
                    bland = True
            else:
                stall = 0
                bland = False


def solve_lp_bounds(
    model: MilpModel,
    lb: Optional[np.ndarray] = None,
    ub: Optional[np.ndarray] = None,
    opts: Optional[SolverOptions] = None,
    deadline: Optional[float] = None,
    integer: Optional[List[int]] = None,
) -> LpResult:
    """Solve the LP relaxation of model under the given variable bounds."""
    opts = opts or SolverOptions()
    form = to_standard_form(model, lb, ub, opts, integer)
    return BoundedSimplex(form, opts, deadline).solve()


def solve_lp(model: MilpModel, opts: Optional[SolverOptions] = None) -> Solution:
    """
    Solve the LP relaxation of a model (integrality ignored).

    Returns:
        Solution with status OPTIMAL, INFEASIBLE, UNBOUNDED, LIMIT_REACHED or NUMERICAL
    """
    opts = opts or SolverOptions()
    start = time.monotonic()
    result = solve_lp_bounds(model, opts=opts, deadline=start + opts.time_limit)
    stats = SolveStats(lp_iterations=result.iterations, wall_time=time.monotonic() - start)
    logger.debug(f"LP {model.name}: {result.status.value} after {result.iterations} iterations")
    return Solution(
        status=result.status,
        x=result.x,
        objective=result.objective,
        bound=result.objective,
        gap=0.0 if result.status == SolveStatus.OPTIMAL else None,
        stats=stats,
        message=result.message,
    )
