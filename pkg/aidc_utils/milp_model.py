"""Mixed-integer linear program container shared by the simplex, branch-and-bound and MPS code."""

import copy
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)


class ModelError(ValueError):
    """Raised when a model breaks its structural invariants."""


class VarType(Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"
    INTEGER = "integer"


class Sense(Enum):
    LE = "<="
    GE = ">="
    EQ = "=="

    @classmethod
    def parse(cls, value: Union[str, "Sense"]) -> "Sense":
        if isinstance(value, Sense):
            return value
        aliases = {"<=": cls.LE, "<": cls.LE, "le": cls.LE, ">=": cls.GE, ">": cls.GE, "ge": cls.GE}
        aliases.update({"==": cls.EQ, "=": cls.EQ, "eq": cls.EQ})
        try:
            return aliases[str(value).lower()]
        except KeyError as e:
            raise ModelError(f"unknown constraint sense {value!r}") from e


class ObjectiveSense(Enum):
    MINIMIZE = "min"
    MAXIMIZE = "max"

    @classmethod
    def parse(cls, value: Union[str, "ObjectiveSense"]) -> "ObjectiveSense":
        if isinstance(value, ObjectiveSense):
            return value
        key = str(value).lower()
        if key in ("min", "minimize"):
            return cls.MINIMIZE
        if key in ("max", "maximize"):
            return cls.MAXIMIZE
        raise ModelError(f"unknown objective sense {value!r}")


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    LIMIT_REACHED = "limit-reached"
    NUMERICAL = "numerical"


class LinearExpr:
    """Affine expression sum(coef * var) + constant over model variable indices."""

    __slots__ = ("constant", "terms")

    def __init__(self, terms: Optional[Mapping[int, float]] = None, constant: float = 0.0):
        self.terms: Dict[int, float] = dict(terms or {})
        self.constant = float(constant)

    @classmethod
    def of(cls, value: Union["LinearExpr", "Variable", Mapping, float, int]) -> "LinearExpr":
        if isinstance(value, LinearExpr):
            return value
        if isinstance(value, Variable):
            return cls({value.index: 1.0})
        if isinstance(value, Mapping):
            expr = cls()
            for key, coef in value.items():
                expr.add_term(key.index if isinstance(key, Variable) else int(key), coef)
            return expr
        return cls(constant=float(value))

    @classmethod
    def total(cls, items: Iterable[Union["LinearExpr", "Variable"]]) -> "LinearExpr":
        expr = cls()
        for item in items:
            expr.add(item)
        return expr

    def add_term(self, index: int, coef: float) -> "LinearExpr":
        self.terms[index] = self.terms.get(index, 0.0) + float(coef)
        return self

    def add(self, other, scale: float = 1.0) -> "LinearExpr":
        """In-place self += scale * other."""
        other = LinearExpr.of(other)
        for index, coef in other.terms.items():
            self.add_term(index, scale * coef)
        self.constant += scale * other.constant
        return self

    def copy(self) -> "LinearExpr":
        return LinearExpr(self.terms, self.constant)

    def __add__(self, other):
        return self.copy().add(other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.copy().add(other, -1.0)

    def __rsub__(self, other):
        return LinearExpr.of(other).copy().add(self, -1.0)

    def __mul__(self, scalar: float):
        return LinearExpr({i: c * scalar for i, c in self.terms.items()}, self.constant * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def value(self, x: Sequence[float]) -> float:
        return self.constant + sum(coef * x[i] for i, coef in self.terms.items())

    def __repr__(self) -> str:
        return f"LinearExpr({len(self.terms)} terms, constant={self.constant})"


@dataclass(frozen=True)
class Variable:
    index: int
    name: str
    lb: float
    ub: float
    vtype: VarType = VarType.CONTINUOUS

    @property
    def is_integer(self) -> bool:
        return self.vtype != VarType.CONTINUOUS

    def __add__(self, other):
        return LinearExpr.of(self) + other

    __radd__ = __add__

    def __sub__(self, other):
        return LinearExpr.of(self) - other

    def __rsub__(self, other):
        return LinearExpr.of(other) - self

    def __mul__(self, scalar: float):
        return LinearExpr({self.index: float(scalar)})

    __rmul__ = __mul__

    def __neg__(self):
        return LinearExpr({self.index: -1.0})


@dataclass(frozen=True)
class Constraint:
    name: str
    coeffs: Tuple[Tuple[int, float], ...]
    sense: Sense
    rhs: float


@dataclass
class SolveStats:
    nodes: int = 0
    lp_iterations: int = 0
    max_depth: int = 0
    duality_drift: int = 0
    wall_time: float = 0.0

    def merge(self, other: "SolveStats") -> "SolveStats":
        return SolveStats(
            nodes=self.nodes + other.nodes,
            lp_iterations=self.lp_iterations + other.lp_iterations,
            max_depth=max(self.max_depth, other.max_depth),
            duality_drift=self.duality_drift + other.duality_drift,
            wall_time=self.wall_time + other.wall_time,
        )


@dataclass
class Solution:
    """Solver outcome; x and objective are set whenever a feasible point is known."""

    status: SolveStatus
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    bound: Optional[float] = None
    gap: Optional[float] = None
    stats: SolveStats = field(default_factory=SolveStats)
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL

    @property
    def has_solution(self) -> bool:
        return self.x is not None

    def value(self, item: Union["Variable", LinearExpr, int]) -> float:
        if self.x is None:
            raise ModelError(f"no solution values available (status {self.status.value})")
        if isinstance(item, int):
            return float(self.x[item])
        return float(LinearExpr.of(item).value(self.x))


class MilpModel:
    """
    Mixed-integer linear program: variables with bounds and integrality, linear rows, objective.

    A model is built with add_var/add_constraint/set_objective and becomes immutable after
    finalize(); derived models (with_bounds, with_constraint, with_objective, relaxed) are
    new finalized copies.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: List[Variable] = []
        self.constraints: List[Constraint] = []
        self.objective: Dict[int, float] = {}
        self.objective_constant = 0.0
        self.sense = ObjectiveSense.MINIMIZE
        self._names: Dict[str, int] = {}
        self._row_names: set = set()
        self._finalized = False
        self._cache: Dict[str, object] = {}

    # ----------------------------------------------------------------- building

    def _check_open(self) -> None:
        if self._finalized:
            raise ModelError(f"model '{self.name}' is finalized and can no longer change")

    def add_var(
        self,
        name: str,
        lb: float = 0.0,
        ub: float = math.inf,
        vtype: Union[VarType, str] = VarType.CONTINUOUS,
    ) -> Variable:
        self._check_open()
        vtype = VarType(vtype)
        if name in self._names:
            raise ModelError(f"duplicate variable name {name!r}")
        if math.isnan(lb) or math.isnan(ub):
            raise ModelError(f"variable {name!r} has a NaN bound")
        if lb > ub:
            raise ModelError(f"variable {name!r} has lb {lb} > ub {ub}")
        if vtype == VarType.BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if vtype != VarType.CONTINUOUS and not (math.isfinite(lb) and math.isfinite(ub)):
            raise ModelError(f"integer variable {name!r} needs finite bounds")
        var = Variable(len(self.variables), name, float(lb), float(ub), vtype)
        self.variables.append(var)
        self._names[name] = var.index
        return var

    def add_binary(self, name: str) -> Variable:
        return self.add_var(name, 0.0, 1.0, VarType.BINARY)

    def add_constraint(
        self,
        expr: Union[LinearExpr, Variable, Mapping],
        sense: Union[Sense, str],
        rhs: float = 0.0,
        name: Optional[str] = None,
    ) -> int:
        """Add expr (sense) rhs; the expression constant is moved to the right-hand side."""
        self._check_open()
        expr = LinearExpr.of(expr)
        name = name or f"c{len(self.constraints)}"
        if name in self._row_names:
            raise ModelError(f"duplicate constraint name {name!r}")
        value = float(rhs) - expr.constant
        if math.isnan(value) or any(math.isnan(c) for c in expr.terms.values()):
            raise ModelError(f"constraint {name!r} contains NaN")
        for index in expr.terms:
            if not 0 <= index < len(self.variables):
                raise ModelError(f"constraint {name!r} references unknown variable {index}")
        coeffs = tuple(sorted((i, c) for i, c in expr.terms.items() if c != 0.0))
        self.constraints.append(Constraint(name, coeffs, Sense.parse(sense), value))
        self._row_names.add(name)
        return len(self.constraints) - 1

    def set_objective(self, expr: Union[LinearExpr, Variable, Mapping], sense: Union[ObjectiveSense, str] = "min"):
        self._check_open()
        expr = LinearExpr.of(expr)
        if any(math.isnan(c) for c in expr.terms.values()) or math.isnan(expr.constant):
            raise ModelError("objective contains NaN")
        self.objective = {i: c for i, c in expr.terms.items() if c != 0.0}
        self.objective_constant = expr.constant
        self.sense = ObjectiveSense.parse(sense)

    def finalize(self) -> "MilpModel":
        self._finalized = True
        return self

    @property
    def finalized(self) -> bool:
        return self._finalized

    # ----------------------------------------------------------------- derived models

    def _derived(self) -> "MilpModel":
        clone = copy.copy(self)
        clone.variables = list(self.variables)
        clone.constraints = list(self.constraints)
        clone.objective = dict(self.objective)
        clone._names = dict(self._names)
        clone._row_names = set(self._row_names)
        clone._cache = {}
        clone._finalized = False
        return clone

    def with_bounds(self, changes: Mapping[Union[int, Variable], Tuple[float, float]]) -> "MilpModel":
        clone = self._derived()
        for key, (lb, ub) in changes.items():
            index = key.index if isinstance(key, Variable) else int(key)
            var = clone.variables[index]
            if lb > ub:
                raise ModelError(f"variable {var.name!r} would get lb {lb} > ub {ub}")
            clone.variables[index] = Variable(index, var.name, float(lb), float(ub), var.vtype)
        return clone.finalize()

    def with_constraint(self, expr, sense, rhs: float = 0.0, name: Optional[str] = None) -> "MilpModel":
        clone = self._derived()
        clone.add_constraint(expr, sense, rhs, name)
        return clone.finalize()

    def with_objective(self, expr, sense="min") -> "MilpModel":
        clone = self._derived()
        clone.set_objective(expr, sense)
        return clone.finalize()

    def relaxed(self) -> "MilpModel":
        """Copy with every integer variable made continuous."""
        clone = self._derived()
        clone.variables = [Variable(v.index, v.name, v.lb, v.ub, VarType.CONTINUOUS) for v in self.variables]
        return clone.finalize()

    # ----------------------------------------------------------------- views

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_cons(self) -> int:
        return len(self.constraints)

    def variable(self, name: str) -> Variable:
        try:
            return self.variables[self._names[name]]
        except KeyError as e:
            raise ModelError(f"unknown variable {name!r}") from e

    @property
    def integer_indices(self) -> List[int]:
        return [v.index for v in self.variables if v.is_integer]

    @property
    def lb(self) -> np.ndarray:
        return np.array([v.lb for v in self.variables], dtype=float)

    @property
    def ub(self) -> np.ndarray:
        return np.array([v.ub for v in self.variables], dtype=float)

    @property
    def c(self) -> np.ndarray:
        vec = np.zeros(self.n_vars)
        for index, coef in self.objective.items():
            vec[index] = coef
        return vec

    @property
    def rhs(self) -> np.ndarray:
        return np.array([con.rhs for con in self.constraints], dtype=float)

    @property
    def senses(self) -> List[Sense]:
        return [con.sense for con in self.constraints]

    @property
    def matrix(self) -> sparse.csr_matrix:
        """Constraint matrix (rows x variables), cached once finalized."""
        cached = self._cache.get("matrix") if self._finalized else None
        if cached is not None:
            return cached
        rows, cols, data = [], [], []
        for r, con in enumerate(self.constraints):
            for index, coef in con.coeffs:
                rows.append(r)
                cols.append(index)
                data.append(coef)
        mat = sparse.csr_matrix((data, (rows, cols)), shape=(self.n_cons, self.n_vars))
        if self._finalized:
            self._cache["matrix"] = mat
        return mat

    def objective_expr(self) -> LinearExpr:
        return LinearExpr(self.objective, self.objective_constant)

    def objective_value(self, x: Sequence[float]) -> float:
        return self.objective_expr().value(x)

    def max_violation(self, x: Sequence[float]) -> float:
        """Largest bound or row violation of x (absolute)."""
        x = np.asarray(x, dtype=float)
        worst = float(np.max(np.concatenate([[0.0], self.lb - x, x - self.ub])))
        if self.n_cons:
            activity = self.matrix @ x
            for con, act in zip(self.constraints, activity):
                if con.sense == Sense.LE:
                    worst = max(worst, act - con.rhs)
                elif con.sense == Sense.GE:
                    worst = max(worst, con.rhs - act)
                else:
                    worst = max(worst, abs(act - con.rhs))
        return worst

    def is_feasible(self, x: Sequence[float], tol: float = 1e-6, int_tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        ints = self.integer_indices
        if ints and np.max(np.abs(x[ints] - np.round(x[ints]))) > int_tol:
            return False
        return self.max_violation(x) <= tol

    def summary(self) -> str:
        return (
            f"{self.name}: {self.n_vars} vars ({len(self.integer_indices)} integer), "
            f"{self.n_cons} rows, {self.matrix.nnz} nonzeros, {self.sense.value}"
        )
