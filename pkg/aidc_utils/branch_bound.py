"""
Best-first branch-and-bound over the bounded simplex.

Nodes carry only their integer-variable bounds; every child LP is solved when the node
is created so the heap is keyed on the child's own relaxation bound. Ties on the bound
are broken by creation order, which keeps the search deterministic.

Before the tree search the caller's hints (partial integer assignments keyed by variable
name) are completed by a depth-first dive, and without any incumbent the dive also runs
from the root relaxation.
"""

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, replace
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import SolverOptions
from .milp_model import MilpModel, ModelError, ObjectiveSense, Solution, SolveStats, SolveStatus
from .simplex import LpResult, solve_lp, solve_lp_bounds

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_INTEGERS = 20


class TooManyIntegersError(ValueError):
    """Raised when exhaustive enumeration is asked for on a model with too many integers."""


@dataclass
class _Node:
    lb: np.ndarray
    ub: np.ndarray
    depth: int
    bound: float  # minimization sense
    x: np.ndarray


class BranchAndBound:
    """Best-first search state for a single MILP solve."""

    def __init__(self, model: MilpModel, opts: SolverOptions, hints: Sequence[Mapping[str, float]] = ()):
        self.model = model
        self.opts = opts
        self.hints = list(hints)
        self.sign = 1.0 if model.sense == ObjectiveSense.MINIMIZE else -1.0
        self.ints = model.integer_indices
        self.stats = SolveStats()
        self.deadline = time.monotonic() + opts.time_limit
        self.incumbent: Optional[np.ndarray] = None
        self.incumbent_value = math.inf  # minimization sense
        self.numerical_nodes = 0
        self._counter = itertools.count()

    def _lp(self, lb: np.ndarray, ub: np.ndarray) -> LpResult:
        result = solve_lp_bounds(self.model, lb, ub, self.opts, self.deadline, self.ints)
        self.stats.lp_iterations += result.iterations
        return result

    def _stable_lp(self, lb: np.ndarray, ub: np.ndarray) -> LpResult:
        """Re-solve with Bland's rule and a fresh factorization every pivot."""
        opts = replace(self.opts, bland_after=1, refactor_interval=1)
        result = solve_lp_bounds(self.model, lb, ub, opts, self.deadline, self.ints)
        self.stats.lp_iterations += result.iterations
        return result

    def _fractional(self, x: np.ndarray) -> Optional[int]:
        """Most fractional integer variable, lowest index on ties."""
        best, best_frac = None, self.opts.integrality_tol
        for index in self.ints:
            frac = abs(x[index] - round(x[index]))
            if frac > best_frac + 1e-12:
                best, best_frac = index, frac
        return best

    def _prune_level(self) -> float:
        if self.incumbent is None:
            return math.inf
        return self.incumbent_value - self.opts.mip_gap * max(1.0, abs(self.incumbent_value))

    def _offer(self, x: np.ndarray, value: float) -> None:
        if value < self.incumbent_value - 1e-12:
            x = x.copy()
            x[self.ints] = np.round(x[self.ints])
            self.incumbent, self.incumbent_value = x, value
            logger.debug(f"New incumbent {self.sign * value:.6g} at node {self.stats.nodes}")

    def _rounding_heuristic(self, x: np.ndarray) -> None:
        lb, ub = self.model.lb, self.model.ub
        rounded = np.clip(np.round(x[self.ints]), lb[self.ints], ub[self.ints])
        lb[self.ints] = rounded
        ub[self.ints] = rounded
        result = self._lp(lb, ub)
        if result.status == SolveStatus.OPTIMAL:
            self._offer(result.x, self.sign * result.objective)

    def _dive(self, lb: np.ndarray, ub: np.ndarray, result: Optional[LpResult] = None) -> bool:
        """
        Depth-first plunge towards an integer-feasible point.

        The most fractional integer is fixed at its nearest value; if that LP fails the
        other side is tried once, and if both fail the dive gives up. Every step fixes one
        more integer, so the plunge ends after at most len(ints) steps.

        Returns:
            True if the dive offered an integer-feasible point
        """
        lb, ub = lb.copy(), ub.copy()
        if result is None:
            result = self._lp(lb, ub)
        while result.status == SolveStatus.OPTIMAL and time.monotonic() <= self.deadline:
            value = self.sign * result.objective
            if value >= self._prune_level():
                return False
            index = self._fractional(result.x)
            if index is None:
                self._offer(result.x, value)
                return True
            frac = result.x[index]
            near = float(round(frac))
            far = math.ceil(frac) if near <= frac else math.floor(frac)
            for target in (near, float(far)):
                trial_lb, trial_ub = lb.copy(), ub.copy()
                trial_lb[index] = trial_ub[index] = target
                child = self._lp(trial_lb, trial_ub)
                if child.status == SolveStatus.OPTIMAL:
                    lb, ub, result = trial_lb, trial_ub, child
                    break
            else:
                return False
        return False

    def _try_hint(self, hint: Mapping[str, float]) -> bool:
        lb, ub = self.model.lb, self.model.ub
        for name, value in hint.items():
            try:
                index = self.model.variable(name).index
            except ModelError:
                logger.debug(f"Hint names unknown variable {name!r}, skipped")
                continue
            fixed = float(np.clip(round(value), lb[index], ub[index]))
            lb[index] = ub[index] = fixed
        found = self._dive(lb, ub)
        if not found:
            logger.debug(f"Hint with {len(hint)} fixings gave no integer point")
        return found

    def solve(self) -> Solution:
        start = time.monotonic()
        model, opts = self.model, self.opts
        root = self._lp(model.lb, model.ub)
        self.stats.nodes = 1
        if root.status != SolveStatus.OPTIMAL:
            self.stats.wall_time = time.monotonic() - start
            return Solution(status=root.status, stats=self.stats, message=root.message or "root relaxation failed")
        root_bound = self.sign * root.objective
        if self._fractional(root.x) is None:
            self._offer(root.x, root_bound)
        else:
            for hint in self.hints:
                self._try_hint(hint)
            self._rounding_heuristic(root.x)
            if self.incumbent is None:
                self._dive(model.lb, model.ub, root)

        heap: List[Tuple[float, int, _Node]] = []
        if self._fractional(root.x) is not None:
            node = _Node(model.lb, model.ub, 0, root_bound, root.x)
            heapq.heappush(heap, (root_bound, next(self._counter), node))

        lost_bound = math.inf
        status = SolveStatus.OPTIMAL
        while heap:
            if self.stats.nodes >= opts.node_limit or time.monotonic() > self.deadline:
                status = SolveStatus.LIMIT_REACHED
                break
            bound, _, node = heapq.heappop(heap)
            if bound >= self._prune_level():
                continue
            index = self._fractional(node.x)
            value = node.x[index]
            for lo, hi in ((node.lb[index], math.floor(value)), (math.ceil(value), node.ub[index])):
                if lo > hi:
                    continue
                lb, ub = node.lb.copy(), node.ub.copy()
                lb[index], ub[index] = lo, hi
                result = self._lp(lb, ub)
                self.stats.nodes += 1
                self.stats.max_depth = max(self.stats.max_depth, node.depth + 1)
                if result.status == SolveStatus.NUMERICAL:
                    result = self._stable_lp(lb, ub)
                if result.status == SolveStatus.LIMIT_REACHED:
                    status = SolveStatus.LIMIT_REACHED
                    lost_bound = min(lost_bound, node.bound)
                    continue
                if result.status == SolveStatus.NUMERICAL:
                    self.numerical_nodes += 1
                    lost_bound = min(lost_bound, node.bound)
                    logger.warning(f"Subproblem at depth {node.depth + 1} failed numerically: {result.message}")
                    continue
                if result.status != SolveStatus.OPTIMAL:
                    continue
                child_bound = self.sign * result.objective
                if child_bound < node.bound - opts.optimality_tol * max(1.0, abs(node.bound)) * 1e3:
                    self.stats.duality_drift += 1
                    logger.debug(f"Child bound {child_bound:.9g} below parent {node.bound:.9g}")
                if child_bound >= self._prune_level():
                    continue
                if self._fractional(result.x) is None:
                    self._offer(result.x, child_bound)
                    continue
                child = _Node(lb, ub, node.depth + 1, max(child_bound, node.bound), result.x)
                heapq.heappush(heap, (child.bound, next(self._counter), child))
            if status == SolveStatus.LIMIT_REACHED and time.monotonic() > self.deadline:
                break

        if status == SolveStatus.OPTIMAL and self.numerical_nodes:
            status = SolveStatus.NUMERICAL
        message = f"{self.numerical_nodes} subproblems failed numerically" if self.numerical_nodes else ""
        open_bound = min(min((entry[0] for entry in heap), default=math.inf), lost_bound)
        self.stats.wall_time = time.monotonic() - start
        if self.incumbent is None:
            if status in (SolveStatus.LIMIT_REACHED, SolveStatus.NUMERICAL):
                bound = open_bound if math.isfinite(open_bound) else root_bound
                return Solution(
                    status=status,
                    bound=self.sign * bound,
                    stats=self.stats,
                    message=message or "limit reached without an integer-feasible point",
                )
            return Solution(status=SolveStatus.INFEASIBLE, bound=None, stats=self.stats, message="no integer point")

        x, value = self._polish(self.incumbent, self.incumbent_value)
        best_bound = value if status == SolveStatus.OPTIMAL else min(open_bound, value)
        gap = (value - best_bound) / max(1.0, abs(value))
        self.stats.wall_time = time.monotonic() - start
        logger.debug(
            f"B&B {model.name}: {status.value}, objective {self.sign * value:.9g}, "
            f"{self.stats.nodes} nodes, {self.stats.lp_iterations} LP iterations"
        )
        return Solution(
            status=status,
            x=x,
            objective=self.sign * value,
            bound=self.sign * best_bound,
            gap=max(gap, 0.0),
            stats=self.stats,
            message=message,
        )

    def _polish(self, x: np.ndarray, value: float) -> Tuple[np.ndarray, float]:
        """Re-solve the continuous part with every integer fixed at its rounded value."""
        if not self.ints:
            return x, value
        lb, ub = self.model.lb, self.model.ub
        lb[self.ints] = np.round(x[self.ints])
        ub[self.ints] = np.round(x[self.ints])
        result = self._lp(lb, ub)
        if result.status == SolveStatus.OPTIMAL and self.sign * result.objective <= value + 1e-9 * max(1.0, abs(value)):
            polished = result.x.copy()
            polished[self.ints] = np.round(polished[self.ints])
            return polished, self.sign * result.objective
        return x, value


def solve_milp(
    model: MilpModel, opts: Optional[SolverOptions] = None, hints: Sequence[Mapping[str, float]] = ()
) -> Solution:
    """
    Solve a MILP to optimality within opts.mip_gap, or report the best point at a limit.

    Args:
        model: finalized model
        opts: solver options
        hints: partial integer assignments {variable name: value}; each is completed by a
            depth-first dive and, when feasible, seeds the incumbent

    Returns:
        Solution; status LIMIT_REACHED carries the incumbent (if any) and the best bound,
        status NUMERICAL means some subproblems could not be solved even with Bland's rule
    """
    opts = opts or SolverOptions()
    if not model.integer_indices:
        return solve_lp(model, opts)
    return BranchAndBound(model, opts, hints).solve()


def brute_force(model: MilpModel, opts: Optional[SolverOptions] = None) -> Solution:
    """
    Enumerate every integer assignment and solve the remaining LP for each.

    Only meant as a cross-check on tiny models.

    Raises:
        TooManyIntegersError: more than BRUTE_FORCE_MAX_INTEGERS integer variables
    """
    opts = opts or SolverOptions()
    ints = model.integer_indices
    if len(ints) > BRUTE_FORCE_MAX_INTEGERS:
        raise TooManyIntegersError(f"{len(ints)} integer variables, at most {BRUTE_FORCE_MAX_INTEGERS} supported")
    sign = 1.0 if model.sense == ObjectiveSense.MINIMIZE else -1.0
    lb0, ub0 = model.lb, model.ub
    ranges = [range(int(math.ceil(lb0[i])), int(math.floor(ub0[i])) + 1) for i in ints]
    stats = SolveStats()
    start = time.monotonic()
    best_x, best_value = None, math.inf
    unbounded = False
    for assignment in itertools.product(*ranges):
        lb, ub = lb0.copy(), ub0.copy()
        lb[ints] = assignment
        ub[ints] = assignment
        result = solve_lp_bounds(model, lb, ub, opts)
        stats.nodes += 1
        stats.lp_iterations += result.iterations
        if result.status == SolveStatus.UNBOUNDED:
            unbounded = True
            break
        if result.status == SolveStatus.OPTIMAL and sign * result.objective < best_value - 1e-12:
            best_x, best_value = result.x, sign * result.objective
    stats.wall_time = time.monotonic() - start
    if unbounded:
        return Solution(status=SolveStatus.UNBOUNDED, stats=stats, message="an assignment has an unbounded LP")
    if best_x is None:
        return Solution(status=SolveStatus.INFEASIBLE, stats=stats, message="no assignment is feasible")
    return Solution(
        status=SolveStatus.OPTIMAL, x=best_x, objective=sign * best_value, bound=sign * best_value, gap=0.0, stats=stats
    )
