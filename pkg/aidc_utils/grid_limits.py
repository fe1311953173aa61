"""
Transmission case parsing, DC power flow, PTDF sensitivities and the PCC exchange envelope.

Sign conventions:
    - A line (f, t) carries positive flow when power moves from bus f to bus t.
    - Injections are generation minus load, in MW.
    - The AIDC import p at the location bus enters the network as an injection of -p,
      balanced at the slack bus.
    - PTDF[l, k] is the change of flow on line l for +1 MW injected at bus k and
      withdrawn at the slack; the slack column is zero.
"""

import logging
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import sparse
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
BUNDLED_CASES = {
    "case3": DATA_DIR / "case3.m",
    "case3_congestion": DATA_DIR / "case3_congestion.m",
}

SENSITIVITY_EPS = 1e-12
SLACK_BUS_TYPE = 3

# MATPOWER column positions (0-based)
BUS_ID, BUS_TYPE, BUS_PD = 0, 1, 2
GEN_BUS, GEN_PG, GEN_STATUS = 0, 1, 7
BR_FROM, BR_TO, BR_R, BR_X, BR_B, BR_RATE_A, BR_STATUS = 0, 1, 2, 3, 4, 5, 10

_ASSIGNMENT = re.compile(r"^mpc\.(\w+)\s*=\s*(.*)$")


class CaseFormatError(ValueError):
    """Raised when a case file does not follow the supported MATPOWER subset."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NetworkError(ValueError):
    """Raised for structurally unusable networks (disconnected, no slack, singular)."""


@dataclass(frozen=True)
class Bus:
    bus_id: int
    bus_type: int = 1
    pd: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus_id: int
    pg: float


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    x: float
    f_max: float = math.inf

    @property
    def b(self) -> float:
        """Series susceptance (p.u.)."""
        return 1.0 / self.x


@dataclass(frozen=True)
class NetworkCase:
    """Validated DC network: buses, in-service lines and generators, slack and AIDC location."""

    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    slack: int
    loc: Optional[int] = None
    generators: Tuple[Generator, ...] = ()
    base_mva: float = 100.0
    name: str = "case"

    def __post_init__(self):
        """Validate topology and parameters."""
        ids = [b.bus_id for b in self.buses]
        if not ids:
            raise NetworkError("case has no buses")
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate bus ids")
        known = set(ids)
        if self.slack not in known:
            raise NetworkError(f"slack bus {self.slack} is not a bus of the case")
        if self.loc is not None and self.loc not in known:
            raise NetworkError(f"location bus {self.loc} is not a bus of the case")
        for line in self.lines:
            if line.from_bus not in known or line.to_bus not in known:
                raise NetworkError(f"line ({line.from_bus}, {line.to_bus}) references an unknown bus")
            if not line.x > 0:
                raise NetworkError(f"line ({line.from_bus}, {line.to_bus}) must have positive reactance")
            if not line.f_max > 0:
                raise NetworkError(f"line ({line.from_bus}, {line.to_bus}) must have a positive thermal limit")
        if len(ids) > 1:
            rows = [self.index[ln.from_bus] for ln in self.lines]
            cols = [self.index[ln.to_bus] for ln in self.lines]
            graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids), len(ids)))
            n_comp, _ = connected_components(graph, directed=False)
            if n_comp != 1:
                raise NetworkError(f"network is disconnected ({n_comp} islands)")

    @cached_property
    def index(self) -> Dict[int, int]:
        return {b.bus_id: i for i, b in enumerate(self.buses)}

    @property
    def bus_ids(self) -> List[int]:
        return [b.bus_id for b in self.buses]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def f_max(self) -> np.ndarray:
        return np.array([ln.f_max for ln in self.lines], dtype=float)

    @cached_property
    def incidence(self) -> sparse.csr_matrix:
        """Line-bus incidence matrix, +1 at the from bus and -1 at the to bus."""
        rows = np.repeat(np.arange(self.n_line), 2)
        cols = [c for ln in self.lines for c in (self.index[ln.from_bus], self.index[ln.to_bus])]
        data = np.tile([1.0, -1.0], self.n_line)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n_line, self.n_bus))

    @cached_property
    def susceptance_matrix(self) -> sparse.csr_matrix:
        b = sparse.diags([ln.b for ln in self.lines])
        return (self.incidence.T @ b @ self.incidence).tocsr()

    @cached_property
    def _reduced_factor(self):
        keep = [i for i in range(self.n_bus) if i != self.index[self.slack]]
        reduced = self.susceptance_matrix[keep][:, keep].toarray()
        if not keep:
            return keep, None
        try:
            lu = scipy.linalg.lu_factor(reduced, check_finite=True)
        except (ValueError, scipy.linalg.LinAlgError) as e:
            raise NetworkError(f"reduced susceptance matrix is singular: {e}") from e
        if np.min(np.abs(np.diag(lu[0]))) < 1e-12:
            raise NetworkError("reduced susceptance matrix is singular")
        return keep, lu

    @cached_property
    def ptdf(self) -> np.ndarray:
        """Full PTDF matrix (lines x buses), slack column zero."""
        keep, lu = self._reduced_factor
        result = np.zeros((self.n_line, self.n_bus))
        if not keep:
            return result
        x_red = scipy.linalg.lu_solve(lu, np.eye(len(keep)))
        b = sparse.diags([ln.b for ln in self.lines])
        result[:, keep] = (b @ self.incidence[:, keep]).toarray() @ x_red
        return result

    def net_injection(self) -> np.ndarray:
        """Base-case generation minus load per bus (MW), in bus order."""
        values = np.array([-b.pd for b in self.buses], dtype=float)
        for g in self.generators:
            values[self.index[g.bus_id]] += g.pg
        return values

    def total_load(self) -> float:
        return float(sum(b.pd for b in self.buses))

    def scaled(self, kappa: float) -> "NetworkCase":
        """Copy with every thermal limit multiplied by kappa."""
        if kappa <= 0:
            raise ValueError("line scale factor must be positive")
        lines = tuple(replace(ln, f_max=ln.f_max * kappa) for ln in self.lines)
        return replace(self, lines=lines)

    def with_loc(self, loc: int) -> "NetworkCase":
        return replace(self, loc=loc)


def _parse_row(text: str, line_no: int) -> List[float]:
    tokens = text.replace(",", " ").split()
    try:
        return [float(tok) for tok in tokens]
    except ValueError as e:
        raise CaseFormatError(f"non-numeric entry in table row: {text.strip()!r}", line_no) from e


def parse_case(text: str, name: str = "case") -> NetworkCase:
    """
    Parse the MATPOWER-subset case text.

    Supported statements: ``mpc.baseMVA = <num>;``, ``mpc.aidc_bus = <id>;`` and the
    ``mpc.bus``, ``mpc.gen`` and ``mpc.branch`` matrices. Other ``mpc.*`` matrices
    (gencost, bus_name, ...) and ``function`` lines are skipped. ``%`` starts a comment.

    Raises:
        CaseFormatError: on malformed content, with the 1-based line number
        NetworkError: on a disconnected network or a missing slack bus
    """
    tables: Dict[str, List[Tuple[int, List[float]]]] = {}
    base_mva = 100.0
    aidc_bus: Optional[int] = None
    current: Optional[str] = None
    open_line = 0

    for line_no, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("%", 1)[0].strip()
        if not content:
            continue
        if current is not None:
            end = "]" in content
            body = content.split("]", 1)[0]
            for row in body.split(";"):
                if row.strip():
                    tables[current].append((line_no, _parse_row(row, line_no)))
            if end:
                current = None
            continue
        match = _ASSIGNMENT.match(content)
        if not match:
            if content.startswith("function") or content.startswith("return"):
                continue
            raise CaseFormatError(f"unrecognized statement: {content!r}", line_no)
        key, value = match.group(1), match.group(2).strip()
        if value.startswith("["):
            current = key
            open_line = line_no
            tables[key] = []
            rest = value[1:]
            if rest.strip():
                end = "]" in rest
                for row in rest.split("]", 1)[0].split(";"):
                    if row.strip():
                        tables[key].append((line_no, _parse_row(row, line_no)))
                if end:
                    current = None
            continue
        scalar = value.rstrip(";").strip()
        if key == "baseMVA":
            try:
                base_mva = float(scalar)
            except ValueError as e:
                raise CaseFormatError(f"baseMVA is not a number: {scalar!r}", line_no) from e
            if base_mva <= 0:
                raise CaseFormatError("baseMVA must be positive", line_no)
        elif key == "aidc_bus":
            try:
                aidc_bus = int(float(scalar))
            except ValueError as e:
                raise CaseFormatError(f"aidc_bus is not a bus id: {scalar!r}", line_no) from e
        else:
            logger.debug(f"Skipping mpc.{key} on line {line_no}")

    if current is not None:
        raise CaseFormatError(f"matrix mpc.{current} is never closed", open_line)
    for required in ("bus", "branch"):
        if required not in tables:
            raise CaseFormatError(f"missing mpc.{required} matrix")

    buses = []
    for line_no, row in tables["bus"]:
        if len(row) < 3:
            raise CaseFormatError("bus rows need at least bus_i, type and Pd", line_no)
        buses.append(Bus(bus_id=int(row[BUS_ID]), bus_type=int(row[BUS_TYPE]), pd=row[BUS_PD]))
    known = {b.bus_id for b in buses}
    slack_buses = [b.bus_id for b in buses if b.bus_type == SLACK_BUS_TYPE]
    if not slack_buses:
        raise NetworkError("case has no slack bus (bus type 3)")
    if len(slack_buses) > 1:
        raise NetworkError(f"case has several slack buses: {slack_buses}")

    generators = []
    for line_no, row in tables.get("gen", []):
        if len(row) < 2:
            raise CaseFormatError("gen rows need at least bus and Pg", line_no)
        if int(row[GEN_BUS]) not in known:
            raise CaseFormatError(f"generator at unknown bus {int(row[GEN_BUS])}", line_no)
        if len(row) > GEN_STATUS and row[GEN_STATUS] <= 0:
            continue
        generators.append(Generator(bus_id=int(row[GEN_BUS]), pg=row[GEN_PG]))

    lines = []
    for line_no, row in tables["branch"]:
        if len(row) < 4:
            raise CaseFormatError("branch rows need at least fbus, tbus, r and x", line_no)
        f_bus, t_bus = int(row[BR_FROM]), int(row[BR_TO])
        if f_bus not in known or t_bus not in known:
            raise CaseFormatError(f"branch ({f_bus}, {t_bus}) references an unknown bus", line_no)
        if len(row) > BR_STATUS and row[BR_STATUS] <= 0:
            continue
        x = row[BR_X]
        if x <= 0:
            raise CaseFormatError(f"branch ({f_bus}, {t_bus}) has non-positive reactance {x}", line_no)
        rate = row[BR_RATE_A] if len(row) > BR_RATE_A else 0.0
        lines.append(Line(f_bus, t_bus, x, rate if rate > 0 else math.inf))

    case = NetworkCase(
        buses=tuple(buses),
        lines=tuple(lines),
        slack=slack_buses[0],
        loc=aidc_bus,
        generators=tuple(generators),
        base_mva=base_mva,
        name=name,
    )
    logger.info(f"Loaded case '{name}': {case.n_bus} buses, {case.n_line} lines, slack {case.slack}, loc {case.loc}")
    return case


def load_case(path: Union[str, Path]) -> NetworkCase:
    """
    Load a MATPOWER-subset case file.

    Args:
        path: file path, or the name of a bundled case ("case3", "case3_congestion")

    Returns:
        Validated NetworkCase
    """
    resolved = BUNDLED_CASES.get(str(path), Path(path))
    try:
        text = Path(resolved).read_text(encoding="utf-8")
    except OSError as e:
        raise CaseFormatError(f"cannot read case file {resolved}: {e}") from e
    return parse_case(text, name=Path(resolved).stem)


def _balanced(case: NetworkCase, injection: np.ndarray) -> np.ndarray:
    balanced = np.array(injection, dtype=float)
    s = case.index[case.slack]
    balanced[..., s] = 0.0
    balanced[..., s] = -balanced.sum(axis=-1)
    return balanced


def _as_vector(case: NetworkCase, injection: Union[Mapping[int, float], Sequence[float], np.ndarray]) -> np.ndarray:
    if isinstance(injection, Mapping):
        vec = np.zeros(case.n_bus)
        for bus, value in injection.items():
            if bus not in case.index:
                raise NetworkError(f"unknown bus {bus}")
            vec[case.index[bus]] += value
        return vec
    vec = np.asarray(injection, dtype=float)
    if vec.shape != (case.n_bus,):
        raise NetworkError(f"injection vector must have {case.n_bus} entries, got shape {vec.shape}")
    return vec


def dc_power_flow(
    case: NetworkCase, injection: Union[Mapping[int, float], Sequence[float], np.ndarray]
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve the DC power flow for one injection pattern.

    Args:
        case: network case
        injection: per-bus MW (mapping bus id -> MW, or vector in bus order); the slack entry
            is replaced by the balancing residual

    Returns:
        (angles in radians per bus with the slack at 0, line flows in MW)
    """
    p = _balanced(case, _as_vector(case, injection))
    keep, lu = case._reduced_factor
    theta = np.zeros(case.n_bus)
    if keep:
        theta[keep] = scipy.linalg.lu_solve(lu, p[keep] / case.base_mva)
    b = np.array([ln.b for ln in case.lines])
    flows = case.base_mva * b * (case.incidence @ theta)
    return theta, flows


def ptdf_column(case: NetworkCase, bus: int) -> np.ndarray:
    """Flow sensitivity of every line to +1 MW injected at bus and withdrawn at the slack."""
    if bus not in case.index:
        raise NetworkError(f"unknown bus {bus}")
    return case.ptdf[:, case.index[bus]].copy()


@dataclass(frozen=True, eq=False)
class InjectionSeries:
    """Per-slot net injection (generation minus load, MW) per bus, excluding the AIDC."""

    bus_ids: Tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        """Coerce values to a (slots, buses) float array."""
        arr = np.atleast_2d(np.asarray(self.values, dtype=float))
        if arr.shape[1] != len(self.bus_ids):
            raise ValueError(f"injection matrix has {arr.shape[1]} columns for {len(self.bus_ids)} buses")
        if not np.all(np.isfinite(arr)):
            raise ValueError("injection series contains non-finite values")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_demand(
        cls, case: NetworkCase, demand: Sequence[float], reference: Optional[float] = None
    ) -> "InjectionSeries":
        """
        Map a system demand profile onto nodal injections.

        Generation and load of the case are scaled by demand(t) / reference; the slack
        absorbs any residual. The reference defaults to the mean of the profile.
        """
        demand = np.asarray(demand, dtype=float)
        ref = float(np.mean(demand)) if reference is None else float(reference)
        if ref <= 0:
            raise ValueError("demand reference must be positive")
        values = np.outer(demand / ref, case.net_injection())
        return cls(tuple(case.bus_ids), _balanced(case, values))

    @classmethod
    def constant(cls, case: NetworkCase, slots: int) -> "InjectionSeries":
        return cls(tuple(case.bus_ids), np.tile(_balanced(case, case.net_injection()), (slots, 1)))

    def to_frame(self) -> pd.DataFrame:
        """Long format: slot, bus, mw."""
        slots, buses = np.meshgrid(np.arange(len(self)), self.bus_ids, indexing="ij")
        return pd.DataFrame({"slot": slots.ravel(), "bus": buses.ravel(), "mw": self.values.ravel()})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "InjectionSeries":
        wide = frame.pivot(index="slot", columns="bus", values="mw").sort_index()
        if wide.isna().to_numpy().any():
            raise ValueError("injection CSV is missing (slot, bus) entries")
        return cls(tuple(int(b) for b in wide.columns), wide.to_numpy())

    def write_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "InjectionSeries":
        return cls.from_frame(pd.read_csv(path))


@dataclass(frozen=True, eq=False)
class PccLimitSeries:
    """Per-slot admissible PCC exchange [p_lo, p_hi] (MW), ramp limit per slot, cap and floor."""

    p_lo: np.ndarray
    p_hi: np.ndarray
    r_grid: float = 150.0
    import_cap: float = 1000.0
    export_floor: float = -1000.0
    collapsed: np.ndarray = field(default=None)

    def __post_init__(self):
        """Coerce arrays and check the envelope is ordered."""
        lo = np.asarray(self.p_lo, dtype=float).ravel()
        hi = np.asarray(self.p_hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("p_lo and p_hi must have the same length")
        if np.any(lo > hi + 1e-9):
            bad = int(np.argmax(lo > hi + 1e-9))
            raise ValueError(f"p_lo exceeds p_hi at slot {bad}")
        if self.r_grid <= 0:
            raise ValueError("ramp limit must be positive")
        flags = np.zeros(lo.shape, dtype=bool) if self.collapsed is None else np.asarray(self.collapsed, dtype=bool)
        if flags.shape != lo.shape:
            raise ValueError("collapsed flags must match the limit length")
        object.__setattr__(self, "p_lo", lo)
        object.__setattr__(self, "p_hi", hi)
        object.__setattr__(self, "collapsed", flags)

    def __len__(self) -> int:
        return len(self.p_hi)

    @classmethod
    def constant(
        cls, slots: int, p_lo: float = -1000.0, p_hi: float = 1000.0, r_grid: float = 150.0, **kwargs
    ) -> "PccLimitSeries":
        return cls(np.full(slots, float(p_lo)), np.full(slots, float(p_hi)), r_grid, **kwargs)

    def window(self, start: int, stop: int) -> "PccLimitSeries":
        return replace(
            self, p_lo=self.p_lo[start:stop], p_hi=self.p_hi[start:stop], collapsed=self.collapsed[start:stop]
        )

    def contains(self, other: "PccLimitSeries", tol: float = 1e-9) -> bool:
        """True if every slot of other lies inside this envelope."""
        return bool(np.all(self.p_lo <= other.p_lo + tol) and np.all(self.p_hi >= other.p_hi - tol))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "slot": np.arange(len(self)),
                "p_lo": self.p_lo,
                "p_hi": self.p_hi,
                "collapsed_flag": self.collapsed.astype(int),
            }
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, **kwargs) -> "PccLimitSeries":
        frame = frame.sort_values("slot")
        collapsed = frame["collapsed_flag"].to_numpy(dtype=bool) if "collapsed_flag" in frame else None
        return cls(frame["p_lo"].to_numpy(), frame["p_hi"].to_numpy(), collapsed=collapsed, **kwargs)

    def write_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def read_csv(cls, path: Union[str, Path], **kwargs) -> "PccLimitSeries":
        return cls.from_frame(pd.read_csv(path), **kwargs)


def derive_pcc_limits(
    case: NetworkCase,
    injections: InjectionSeries,
    cap: float = 1000.0,
    floor: float = -1000.0,
    r_grid: float = 150.0,
) -> PccLimitSeries:
    """
    Derive the admissible PCC exchange per slot from the line thermal limits.

    For each slot the background flows F0 are computed, and the interval of AIDC import p
    with |F0_l - ptdf_l * p| <= F_max,l on every line is intersected with [floor, cap].
    Collapsed slots carry the flag and come in two kinds:

    - an empty interval (no exchange keeps every line within rating) is replaced by [0, 0],
      so the slot admits only zero exchange;
    - a non-empty interval that excludes zero is kept as derived, so the slot forces export
      (p_hi < 0) or import (p_lo > 0). It is never widened to contain zero.

    Args:
        case: network case with the AIDC location bus set
        injections: background injections, one row per slot
        cap: import cap (MW)
        floor: export floor (MW, negative)
        r_grid: ramp limit per slot (MW)

    Returns:
        PccLimitSeries

    Raises:
        NetworkError: if the case has no location bus or the injection buses disagree
    """
    if case.loc is None:
        raise NetworkError("AIDC location bus is not set on the case")
    if tuple(injections.bus_ids) != tuple(case.bus_ids):
        raise NetworkError("injection series bus order does not match the case")
    if floor > cap:
        raise ValueError("export floor must not exceed the import cap")

    f0 = _balanced(case, injections.values) @ case.ptdf.T
    sens = case.ptdf[:, case.index[case.loc]]
    f_max = case.f_max
    active = np.abs(sens) > SENSITIVITY_EPS

    lo = np.full(len(injections), float(floor))
    hi = np.full(len(injections), float(cap))
    if np.any(active):
        c = sens[active]
        upper_edge = (f0[:, active] + f_max[active]) / c
        lower_edge = (f0[:, active] - f_max[active]) / c
        line_hi = np.where(c > 0, upper_edge, lower_edge)
        line_lo = np.where(c > 0, lower_edge, upper_edge)
        lo = np.maximum(lo, line_lo.max(axis=1))
        hi = np.minimum(hi, line_hi.min(axis=1))
    overloaded = np.abs(f0[:, ~active]) > f_max[~active] if np.any(~active) else np.zeros((len(lo), 0), dtype=bool)
    if overloaded.any():
        logger.warning(f"{int(overloaded.any(axis=1).sum())} slots have overloads the AIDC cannot influence")

    empty = lo > hi
    collapsed = empty | (hi < 0) | (lo > 0)
    lo = np.where(empty, 0.0, lo)
    hi = np.where(empty, 0.0, hi)
    if empty.any():
        logger.warning(f"PCC envelope is empty in {int(empty.sum())} of {len(lo)} slots, set to [0, 0]")
    if collapsed.any():
        logger.info(f"PCC envelope excludes zero or is empty in {int(collapsed.sum())} of {len(lo)} slots")
    return PccLimitSeries(lo, hi, r_grid=r_grid, import_cap=cap, export_floor=floor, collapsed=collapsed)
