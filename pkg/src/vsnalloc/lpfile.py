"""CPLEX-style LP text files and a plain-text solution format.

LP grammar (the subset written and read here)::

    \\ comment
    Maximize | Minimize
     obj: [+|-] coef name ...           (may wrap over several lines)
    Subject To
     rowname: [+|-] coef name ... (<=|>=|=) rhs
    Bounds
     lower <= name <= upper             (+inf / -inf allowed)
     name >= lower
    Binaries
     name name ...
    End

Row names are ``<family>_<key...>``; variable names are the mangled semantic
keys from :func:`vsnalloc.model.var_name`.

Solution grammar::

    # comment
    @status optimal|infeasible|time_limit
    @objective <float>
    @bound <float>
    <variable-name> <float>

Variables absent from a solution file are read as zero.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from .model import BINARY, CONTINUOUS, EQ, GE, LE, IlpModel, ModelBuilder, parse_var_name

TERMS_PER_LINE = 6
_SENSES = {"<=": LE, "=<": LE, "<": LE, ">=": GE, "=>": GE, ">": GE, "=": EQ}
_TOKEN = re.compile(
    r"\s*(<=|>=|=<|=>|[<>=:]|[+\-]|(?:\d+\.?\d*|\.\d+)(?:[eE][+\-]?\d+)?|[^\s<>=:+\-]+)"
)
_SECTIONS = {
    "maximize": "max", "maximise": "max", "maximum": "max", "max": "max",
    "minimize": "min", "minimise": "min", "minimum": "min", "min": "min",
    "subject to": "st", "such that": "st", "st": "st", "s.t.": "st",
    "bounds": "bounds", "bound": "bounds",
    "binaries": "bin", "binary": "bin", "bin": "bin",
    "end": "end",
}


class LpFormatError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownVariableError(KeyError):
    def __init__(self, name: str, line: int):
        super().__init__(f"line {line}: unknown variable {name!r}")
        self.name = name
        self.line = line


def _num(x: float) -> str:
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return repr(float(x))


def row_name(family: str, key: tuple) -> str:
    return "_".join([family, *(str(k) for k in key)])


def split_row_name(name: str) -> tuple[str, tuple]:
    parts = name.split("_")
    key = []
    while parts and parts[-1].lstrip("-").isdigit():
        key.insert(0, int(parts.pop()))
    return "_".join(parts), tuple(key)


def _expr(terms, variables) -> list[str]:
    chunks = []
    for idx, coef in terms:
        sign = "-" if coef < 0 else "+"
        chunks.append(f"{sign} {_num(abs(coef))} {variables[idx].name}")
    if not chunks:
        chunks = ["0 " + variables[0].name] if variables else []
    lines = [" ".join(chunks[i:i + TERMS_PER_LINE]) for i in range(0, len(chunks), TERMS_PER_LINE)]
    return lines or [""]


def dumps_lp(model: IlpModel) -> str:
    out = [f"\\ Problem name: {model.name}", "Maximize" if model.sense == "maximize" else "Minimize"]
    obj = _expr(model.objective, model.variables)
    out.append(" obj: " + obj[0])
    out.extend("   " + line for line in obj[1:])
    out.append("Subject To")
    for row in model.constraints:
        expr = _expr(row.terms, model.variables)
        if not row.terms:
            # Constant row: encode as 0 * first variable.
            expr = [f"0 {model.variables[0].name}"]
        head = f" {row_name(row.family, row.key)}: "
        if len(expr) == 1:
            out.append(f"{head}{expr[0]} {row.sense} {_num(row.rhs)}")
        else:
            out.append(head + expr[0])
            out.extend("   " + line for line in expr[1:-1])
            out.append(f"   {expr[-1]} {row.sense} {_num(row.rhs)}")
    out.append("Bounds")
    for v in model.variables:
        if v.kind == BINARY and v.lower == 0 and v.upper == 1:
            continue
        if math.isinf(v.upper):
            out.append(f" {v.name} >= {_num(v.lower)}")
        else:
            out.append(f" {_num(v.lower)} <= {v.name} <= {_num(v.upper)}")
    binaries = [v.name for v in model.variables if v.kind == BINARY]
    if binaries:
        out.append("Binaries")
        for i in range(0, len(binaries), 8):
            out.append(" " + " ".join(binaries[i:i + 8]))
    out.append("End")
    return "\n".join(out) + "\n"


def export_lp(model: IlpModel, path: str | Path) -> None:
    Path(path).write_text(dumps_lp(model))


# -- reader -------------------------------------------------------------------

def _tokens(text: str):
    """Yield (section, token, line, column) with section headers resolved."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("\\", 1)[0]
        stripped = line.strip()
        if not stripped:
            continue
        low = " ".join(stripped.lower().split())
        if low in _SECTIONS:
            section = _SECTIONS[low]
            yield section, None, lineno, line.index(stripped[0]) + 1
            continue
        pos = 0
        while pos < len(line):
            m = _TOKEN.match(line, pos)
            if not m or not m.group(1):
                break
            yield section, m.group(1), lineno, m.start(1) + 1
            pos = m.end()


def _float(tok: str, line: int, col: int) -> float:
    low = tok.lower()
    if low in ("inf", "infinity"):
        return math.inf
    try:
        return float(tok)
    except ValueError:
        raise LpFormatError(f"expected a number, got {tok!r}", line, col) from None


def _key_for(name: str) -> tuple:
    try:
        return parse_var_name(name)
    except ValueError:
        return ("~", name)


def loads_lp(text: str) -> IlpModel:
    stream = list(_tokens(text))
    sense = None
    objective: dict[str, float] = {}
    rows: list[tuple[str, dict[str, float], str, float]] = []
    bounds: dict[str, list[float]] = {}
    binaries: set[str] = set()
    order: list[str] = []

    def see(name):
        if name not in bounds:
            bounds[name] = [0.0, math.inf]
            order.append(name)

    pos = 0

    def parse_expr(stop_at_sense: bool):
        """Parse [label:] terms; returns (label, terms, sense, rhs)."""
        nonlocal pos
        label = None
        terms: dict[str, float] = {}
        sec = stream[pos][0]
        if pos + 1 < len(stream) and stream[pos + 1][1] == ":":
            label = stream[pos][1]
            pos += 2
        sign, coef = 1.0, None
        while pos < len(stream):
            s, tok, line, col = stream[pos]
            if tok is None or s != sec:
                break
            if tok in _SENSES and stop_at_sense:
                pos += 1
                if pos >= len(stream) or stream[pos][1] is None:
                    raise LpFormatError("missing right-hand side", line, col)
                rhs_tok = stream[pos]
                rsign = 1.0
                if rhs_tok[1] in "+-":
                    rsign = -1.0 if rhs_tok[1] == "-" else 1.0
                    pos += 1
                    rhs_tok = stream[pos]
                pos += 1
                return label, terms, _SENSES[tok], rsign * _float(rhs_tok[1], rhs_tok[2], rhs_tok[3])
            if not stop_at_sense and pos + 1 < len(stream) and stream[pos + 1][1] == ":" and terms:
                break
            if tok in "+-":
                sign = -sign if tok == "-" else sign
                pos += 1
                continue
            if tok == ":":
                raise LpFormatError("unexpected ':'", line, col)
            try:
                coef = float(tok) if tok.lower() not in ("inf", "infinity") else None
            except ValueError:
                coef = None
            if coef is not None:
                pos += 1
                if pos >= len(stream) or stream[pos][1] is None or stream[pos][1] in _SENSES:
                    raise LpFormatError("coefficient without a variable", line, col)
                s, tok, line, col = stream[pos]
            name = tok
            if not re.match(r"^[A-Za-z_~!\"#$%&()/,.;?@`'{}|][^\s]*$", name):
                raise LpFormatError(f"invalid variable name {name!r}", line, col)
            see(name)
            terms[name] = terms.get(name, 0.0) + sign * (coef if coef is not None else 1.0)
            sign, coef = 1.0, None
            pos += 1
        if stop_at_sense:
            _, tok, line, col = stream[min(pos, len(stream) - 1)]
            raise LpFormatError("constraint without a relational operator", line, col)
        return label, terms, None, None

    while pos < len(stream):
        sec, tok, line, col = stream[pos]
        if tok is None:
            if sec in ("max", "min"):
                sense = "maximize" if sec == "max" else "minimize"
            elif sec == "end":
                break
            pos += 1
            continue
        if sec in ("max", "min"):
            _, objective, _, _ = parse_expr(stop_at_sense=False)
        elif sec == "st":
            label, terms, rel, rhs = parse_expr(stop_at_sense=True)
            rows.append((label or f"r_{len(rows)}", terms, rel, rhs))
        elif sec == "bounds":
            pos = _parse_bound(stream, pos, bounds, see)
        elif sec == "bin":
            see(tok)
            binaries.add(tok)
            pos += 1
        else:
            raise LpFormatError(f"unexpected token {tok!r} outside any section", line, col)
    if sense is None:
        raise LpFormatError("missing objective section", 1, 1)

    b = ModelBuilder()
    for name in order:
        lo, hi = bounds[name]
        b.add_var(_key_for(name), BINARY if name in binaries else CONTINUOUS, lo, hi)
    keys = {name: _key_for(name) for name in order}
    for label, terms, rel, rhs in rows:
        family, key = split_row_name(label)
        b.add_row(family, key, [(keys[n], c) for n, c in terms.items() if c != 0.0], rel, rhs)
    b.set_objective([(keys[n], c) for n, c in objective.items()])
    model = b.freeze()
    named = re.match(r"\s*\\\s*Problem name:\s*(\S+)", text)
    return IlpModel(model.variables, model.constraints, model.objective, sense,
                    named.group(1) if named else model.name)


def _parse_bound(stream, pos, bounds, see) -> int:
    """Parse one bound statement starting at ``pos``; returns the next position."""
    line_no = stream[pos][2]
    toks = []
    while pos < len(stream) and stream[pos][2] == line_no and stream[pos][1] is not None:
        toks.append(stream[pos])
        pos += 1
    vals = [t[1] for t in toks]
    merged: list[tuple[str, int, int]] = []
    i = 0
    while i < len(vals):
        if vals[i] in "+-" and i + 1 < len(vals) and vals[i + 1] not in _SENSES:
            merged.append((vals[i] + vals[i + 1], toks[i][2], toks[i][3]))
            i += 2
        else:
            merged.append((vals[i], toks[i][2], toks[i][3]))
            i += 1
    words = [m[0] for m in merged]
    _, line, col = merged[0]
    if len(words) == 5 and words[1] in _SENSES and words[3] in _SENSES:
        name = words[2]
        see(name)
        bounds[name] = [_float(words[0], line, col), _float(words[4], line, col)]
    elif len(words) == 3 and words[1] in _SENSES:
        name, rel, val = words
        if _is_number(name):
            val, name = name, val
            rel = {"<=": ">=", ">=": "<="}.get(rel, rel)
        see(name)
        v = _float(val, line, col)
        sense = _SENSES[rel]
        if sense == GE:
            bounds[name][0] = v
        elif sense == LE:
            bounds[name][1] = v
        else:
            bounds[name] = [v, v]
    elif len(words) == 2 and words[1].lower() == "free":
        see(words[0])
        bounds[words[0]] = [-math.inf, math.inf]
    else:
        raise LpFormatError(f"cannot parse bound {' '.join(words)!r}", line, col)
    return pos


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def import_lp(path: str | Path) -> IlpModel:
    return loads_lp(Path(path).read_text())


# -- solutions ----------------------------------------------------------------

def dumps_solution(model: IlpModel, status: str, objective: float | None,
                   values: np.ndarray | None, bound: float | None = None) -> str:
    out = ["# vsnalloc solution", f"@status {status}"]
    if objective is not None:
        out.append(f"@objective {_num(objective)}")
    if bound is not None:
        out.append(f"@bound {_num(bound)}")
    if values is not None:
        for v, x in zip(model.variables, values):
            out.append(f"{v.name} {_num(x)}")
    return "\n".join(out) + "\n"


def loads_solution(model: IlpModel, text: str) -> tuple[str, float | None, float | None, np.ndarray | None]:
    index = model.index
    values = np.zeros(len(model.variables))
    status, objective, bound = None, None, None
    seen_values = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        col = raw.index(parts[0]) + 1
        if len(parts) != 2:
            raise LpFormatError(f"expected '<name> <value>', got {line!r}", lineno, col)
        name, val = parts
        if name == "@status":
            status = val.lower()
            continue
        number = _float(val, lineno, raw.index(val, col - 1 + len(name)) + 1)
        if name == "@objective":
            objective = number
        elif name == "@bound":
            bound = number
        elif name.startswith("@"):
            raise LpFormatError(f"unknown directive {name!r}", lineno, col)
        else:
            if name not in index:
                raise UnknownVariableError(name, lineno)
            values[index[name]] = number
            seen_values = True
    if status is None:
        raise LpFormatError("solution file has no @status line", 1, 1)
    if status not in ("optimal", "infeasible", "time_limit"):
        raise LpFormatError(f"unknown status {status!r}", 1, 1)
    return status, objective, bound, (values if seen_values or status == "optimal" else None)
