"""
Fixed-column MPS export and whitespace-tolerant MPS import for MilpModel.

Names longer than eight characters, names with whitespace, and a row named OBJ cannot be
written in fixed format; in that case every column is renamed C0000001.. and every row
R0000001.., and the mapping back to the model names is returned (and written next to the
file as <file>.map.json).
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .milp_model import LinearExpr, MilpModel, ObjectiveSense, Sense, VarType

logger = logging.getLogger(__name__)

OBJ_ROW = "OBJ"
MAX_NAME = 8
MAX_NUMBER = 12
MARKER_START = "    MARKER                 'MARKER'                 'INTORG'"
MARKER_END = "    MARKER                 'MARKER'                 'INTEND'"
SECTIONS = ("NAME", "OBJSENSE", "ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA")
SENSE_CODE = {Sense.LE: "L", Sense.GE: "G", Sense.EQ: "E"}
CODE_SENSE = {code: sense for sense, code in SENSE_CODE.items()}


class MpsFormatError(ValueError):
    """Raised on malformed or unsupported MPS input."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def format_number(value: float) -> str:
    """Shortest representation of value that reads back exactly and fits twelve characters."""
    if value == 0.0:
        return "0"
    for precision in range(1, 18):
        text = f"{value:.{precision}g}"
        if float(text) == value:
            break
    if len(text) > MAX_NUMBER:
        for precision in range(17, 0, -1):
            text = f"{value:.{precision}g}"
            if len(text) <= MAX_NUMBER:
                break
    return text


def _field_line(f1: str = "", f2: str = "", f3: str = "", f4: str = "") -> str:
    return (" " + f1.ljust(2) + " " + f2.ljust(8) + "  " + f3.ljust(8) + "  " + f4.rjust(12)).rstrip()


def _valid_name(name: str) -> bool:
    return 0 < len(name) <= MAX_NAME and not any(ch.isspace() for ch in name)


def name_map(model: MilpModel) -> Dict[str, Dict[str, str]]:
    """Fixed-format names for columns and rows; identity when every model name is writable."""
    cols = [v.name for v in model.variables]
    rows = [c.name for c in model.constraints]
    if all(_valid_name(n) for n in cols) and all(_valid_name(n) and n != OBJ_ROW for n in rows):
        return {"columns": {n: n for n in cols}, "rows": {n: n for n in rows}}
    return {
        "columns": {n: f"C{i + 1:07d}" for i, n in enumerate(cols)},
        "rows": {n: f"R{i + 1:07d}" for i, n in enumerate(rows)},
    }


def write_mps(model: MilpModel, path: Optional[Union[str, Path]] = None) -> Tuple[str, Dict[str, Dict[str, str]]]:
    """
    Render model as fixed-format MPS.

    Args:
        model: the model to export
        path: when given, the text is written there (plus a .map.json when names were replaced)

    Returns:
        (mps_text, name_map) where name_map maps model names to file names
    """
    names = name_map(model)
    col_name = [names["columns"][v.name] for v in model.variables]
    row_name = [names["rows"][c.name] for c in model.constraints]
    renamed = any(k != v for part in names.values() for k, v in part.items())

    per_column: List[List[Tuple[str, float]]] = [[] for _ in model.variables]
    for index, coef in sorted(model.objective.items()):
        per_column[index].append((OBJ_ROW, coef))
    for r, con in enumerate(model.constraints):
        for index, coef in con.coeffs:
            per_column[index].append((row_name[r], coef))

    model_name = model.name if _valid_name(model.name) else "AIDC"
    objsense = "    MAX" if model.sense == ObjectiveSense.MAXIMIZE else "    MIN"
    lines = [f"NAME          {model_name}", "OBJSENSE", objsense]
    lines.append("ROWS")
    lines.append(_field_line("N", OBJ_ROW))
    for r, con in enumerate(model.constraints):
        lines.append(_field_line(SENSE_CODE[con.sense], row_name[r]))

    lines.append("COLUMNS")
    in_marker = False
    for var, entries in zip(model.variables, per_column):
        if var.is_integer and not in_marker:
            lines.append(MARKER_START)
            in_marker = True
        elif not var.is_integer and in_marker:
            lines.append(MARKER_END)
            in_marker = False
        name = col_name[var.index]
        if not entries:
            entries = [(OBJ_ROW, 0.0)]
        for row, coef in entries:
            lines.append(_field_line("", name, row, format_number(coef)))
    if in_marker:
        lines.append(MARKER_END)

    lines.append("RHS")
    if model.objective_constant != 0.0:
        lines.append(_field_line("", "RHS", OBJ_ROW, format_number(-model.objective_constant)))
    for r, con in enumerate(model.constraints):
        if con.rhs != 0.0:
            lines.append(_field_line("", "RHS", row_name[r], format_number(con.rhs)))

    lines.append("BOUNDS")
    for var in model.variables:
        lines.extend(_bound_lines(var, col_name[var.index]))
    lines.append("ENDATA")
    text = "\n".join(lines) + "\n"

    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        if renamed:
            map_path = path.with_name(path.name + ".map.json")
            map_path.write_text(json.dumps(names, indent=2, sort_keys=True))
        logger.debug(f"Wrote MPS for {model.name} to {path}")
    return text, names


def _bound_lines(var, name: str) -> List[str]:
    lb, ub = var.lb, var.ub
    if var.is_integer:
        if lb == 0.0 and ub == 1.0:
            return [_field_line("BV", "BND", name)]
        out = []
        if lb != 0.0:
            out.append(_field_line("LI", "BND", name, format_number(lb)))
        out.append(_field_line("UI", "BND", name, format_number(ub)))
        return out
    if lb == ub:
        return [_field_line("FX", "BND", name, format_number(lb))]
    if math.isinf(lb) and math.isinf(ub):
        return [_field_line("FR", "BND", name)]
    out = []
    if math.isinf(lb):
        out.append(_field_line("MI", "BND", name))
    elif lb != 0.0:
        out.append(_field_line("LO", "BND", name, format_number(lb)))
    if not math.isinf(ub):
        out.append(_field_line("UP", "BND", name, format_number(ub)))
    return out


def read_mps(source: Union[str, Path], name: Optional[str] = None) -> MilpModel:
    """
    Parse MPS text (or a path to an .mps file) into a finalized MilpModel.

    Fields are split on whitespace, so names must not contain blanks. RANGES is rejected.
    Integer columns inside MARKER blocks without an explicit upper bound get [0, 1].

    Raises:
        MpsFormatError: on malformed input, with the offending line number
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith(".mps")):
        text = Path(source).read_text()
    else:
        text = str(source)

    model_name = name or "mps"
    sense = ObjectiveSense.MINIMIZE
    obj_row: Optional[str] = None
    rows: Dict[str, Sense] = {}
    row_order: List[str] = []
    columns: Dict[str, Dict[str, float]] = {}
    col_order: List[str] = []
    integer: set = set()
    rhs: Dict[str, float] = {}
    bounds: Dict[str, List[float]] = {}
    explicit_ub: set = set()
    section = None
    in_marker = False

    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("*"):
            continue
        tokens = raw.split()
        if not raw[0].isspace():
            head = tokens[0].upper()
            if head not in SECTIONS:
                raise MpsFormatError(f"unknown section {tokens[0]!r}", line_no)
            if head == "RANGES":
                raise MpsFormatError("RANGES section is not supported", line_no)
            section = head
            if head == "NAME" and len(tokens) > 1 and name is None:
                model_name = tokens[1]
            if head == "OBJSENSE" and len(tokens) > 1:
                sense = _parse_objsense(tokens[1], line_no)
            if head == "ENDATA":
                break
            continue

        if section == "OBJSENSE":
            sense = _parse_objsense(tokens[0], line_no)
        elif section == "ROWS":
            if len(tokens) != 2:
                raise MpsFormatError("ROWS entry needs a type and a name", line_no)
            code, row = tokens[0].upper(), tokens[1]
            if code == "N":
                if obj_row is None:
                    obj_row = row
                continue
            if code not in CODE_SENSE:
                raise MpsFormatError(f"unknown row type {code!r}", line_no)
            if row in rows:
                raise MpsFormatError(f"duplicate row {row!r}", line_no)
            rows[row] = CODE_SENSE[code]
            row_order.append(row)
        elif section == "COLUMNS":
            if len(tokens) >= 3 and tokens[1].strip("'").upper() == "MARKER":
                marker = tokens[2].strip("'").upper()
                if marker == "INTORG":
                    in_marker = True
                elif marker == "INTEND":
                    in_marker = False
                else:
                    raise MpsFormatError(f"unknown marker {tokens[2]!r}", line_no)
                continue
            if len(tokens) not in (3, 5):
                raise MpsFormatError("COLUMNS entry needs one or two row/value pairs", line_no)
            col = tokens[0]
            if col not in columns:
                columns[col] = {}
                col_order.append(col)
                if in_marker:
                    integer.add(col)
            for row, value in zip(tokens[1::2], tokens[2::2]):
                if row != obj_row and row not in rows:
                    raise MpsFormatError(f"column {col!r} references unknown row {row!r}", line_no)
                columns[col][row] = columns[col].get(row, 0.0) + _number(value, line_no)
        elif section == "RHS":
            pairs = tokens[1:] if len(tokens) in (3, 5) else tokens
            if len(pairs) not in (2, 4):
                raise MpsFormatError("RHS entry needs one or two row/value pairs", line_no)
            for row, value in zip(pairs[0::2], pairs[1::2]):
                if row != obj_row and row not in rows:
                    raise MpsFormatError(f"RHS references unknown row {row!r}", line_no)
                rhs[row] = _number(value, line_no)
        elif section == "BOUNDS":
            _read_bound(tokens, columns, integer, bounds, explicit_ub, line_no)
        else:
            raise MpsFormatError("data line outside of a section", line_no)

    model = MilpModel(model_name)
    handles = {}
    for col in col_order:
        lb, ub = bounds.get(col, [0.0, math.inf])
        vtype = VarType.CONTINUOUS
        if col in integer:
            if col not in explicit_ub and math.isinf(ub):
                ub = 1.0
            vtype = VarType.BINARY if lb == 0.0 and ub == 1.0 else VarType.INTEGER
        handles[col] = model.add_var(col, lb, ub, vtype)

    for row in row_order:
        expr = {handles[col]: entries[row] for col, entries in columns.items() if row in entries}
        model.add_constraint(expr, rows[row], rhs.get(row, 0.0), name=row)
    objective = {handles[col]: entries[obj_row] for col, entries in columns.items() if obj_row in entries}
    expr = LinearExpr.of(objective)
    expr.constant = -rhs.get(obj_row, 0.0) if obj_row else 0.0
    model.set_objective(expr, sense)
    return model.finalize()


def _parse_objsense(token: str, line_no: int) -> ObjectiveSense:
    key = token.upper()
    if key in ("MAX", "MAXIMIZE"):
        return ObjectiveSense.MAXIMIZE
    if key in ("MIN", "MINIMIZE"):
        return ObjectiveSense.MINIMIZE
    raise MpsFormatError(f"unknown objective sense {token!r}", line_no)


def _number(token: str, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError as e:
        raise MpsFormatError(f"bad number {token!r}", line_no) from e
    if math.isnan(value):
        raise MpsFormatError("NaN is not allowed", line_no)
    return value


def _read_bound(tokens, columns, integer, bounds, explicit_ub, line_no) -> None:
    kind = tokens[0].upper()
    needs_value = kind in ("UP", "LO", "FX", "LI", "UI")
    if needs_value and len(tokens) == 3:
        col, value = tokens[1], tokens[2]
    elif needs_value and len(tokens) == 4:
        col, value = tokens[2], tokens[3]
    elif not needs_value and len(tokens) in (2, 3):
        col, value = tokens[-1], None
    else:
        raise MpsFormatError(f"malformed {kind} bound", line_no)
    if col not in columns:
        raise MpsFormatError(f"bound on unknown column {col!r}", line_no)
    lb, ub = bounds.setdefault(col, [0.0, math.inf])
    number = _number(value, line_no) if value is not None else None
    if kind in ("UP", "UI"):
        ub = number
        explicit_ub.add(col)
        if number < 0 and lb == 0.0:
            lb = -math.inf
        if kind == "UI":
            integer.add(col)
    elif kind in ("LO", "LI"):
        lb = number
        if kind == "LI":
            integer.add(col)
    elif kind == "FX":
        lb = ub = number
        explicit_ub.add(col)
    elif kind == "FR":
        lb, ub = -math.inf, math.inf
        explicit_ub.add(col)
    elif kind == "MI":
        lb = -math.inf
    elif kind == "PL":
        ub = math.inf
        explicit_ub.add(col)
    elif kind == "BV":
        lb, ub = 0.0, 1.0
        integer.add(col)
        explicit_ub.add(col)
    else:
        raise MpsFormatError(f"unknown bound type {kind!r}", line_no)
    bounds[col] = [lb, ub]
