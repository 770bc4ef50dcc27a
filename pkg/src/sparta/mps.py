"""Fixed-section text export/import for linear programs.

Names are limited to 8 characters: registry keys are flattened and
sanitized, and keys that do not fit (or would clash after sanitizing) get a
deterministic two-letter prefix plus a six-character base-36 digest.  A
digest clash is refused rather than silently renamed, since downstream
cross-checks rely on stable names.
"""

from __future__ import annotations

import hashlib
import math
import re
from typing import Any

from .lp import EQ, GE, LE, DocumentFormatError, LinearProgram, NameCollisionError

_OBJ = "OBJ"
_RHS_SET = "RHS"
_BND_SET = "BND"
_SANITIZE = re.compile(r"[^A-Z0-9]")
_B36 = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def _flatten(key: Any) -> str:
    if isinstance(key, tuple):
        return "_".join(_flatten(part) for part in key)
    return str(key)


def _digest36(text: str, width: int = 6) -> str:
    value = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")
    out = []
    for _ in range(width):
        value, rem = divmod(value, 36)
        out.append(_B36[rem])
    return "".join(reversed(out))


def short_name(key: Any, used: set[str], prefix: str) -> str:
    """8-character external name for a registry key; registers it in ``used``."""
    flat = _flatten(key)
    candidate = _SANITIZE.sub("", flat.upper())[:8]
    if not candidate or candidate in used or candidate == _OBJ:
        candidate = prefix + _digest36(flat)
        if candidate in used:
            raise NameCollisionError(f"external name {candidate!r} already taken (key {key!r})")
    used.add(candidate)
    return candidate


def _field(value: float) -> str:
    return f"{value:.12g}"


def export_standard(lp: LinearProgram) -> str:
    """Serialize to the fixed-section exchange format (rows, columns, rhs,
    ranges, bounds)."""
    used_rows: set[str] = {_OBJ}
    used_cols: set[str] = set()
    row_names = [short_name(k, used_rows, "R_") for k in lp.constraint_keys]
    col_names = [short_name(k, used_cols, "C_") for k in lp.variable_keys]

    rel_tag = {LE: "L", GE: "G", EQ: "E"}
    lines = [f"NAME          {lp.name[:48]}", "ROWS", f" N  {_OBJ}"]
    rels = lp.relations()
    for i, rname in enumerate(row_names):
        lines.append(f" {rel_tag[rels[i]]}  {rname}")

    lines.append("COLUMNS")
    matrix = lp.matrix().tocsc()
    c = lp.objective_vector()
    for j, cname in enumerate(col_names):
        entries: list[tuple[str, float]] = []
        if c[j] != 0.0:
            entries.append((_OBJ, c[j]))
        sl = slice(matrix.indptr[j], matrix.indptr[j + 1])
        for r, v in zip(matrix.indices[sl], matrix.data[sl]):
            entries.append((row_names[r], float(v)))
        if not entries:
            entries.append((_OBJ, 0.0))  # keep empty columns visible to readers
        for rname, value in entries:
            lines.append(f"    {cname:<8}  {rname:<8}  {_field(value)}")

    lines.append("RHS")
    rhs = lp.rhs_vector()
    for i, rname in enumerate(row_names):
        if rhs[i] != 0.0:
            lines.append(f"    {_RHS_SET:<8}  {rname:<8}  {_field(rhs[i])}")
    if lp.objective_constant != 0.0:
        # constants ride on the objective row with flipped sign by convention
        lines.append(f"    {_RHS_SET:<8}  {_OBJ:<8}  {_field(-lp.objective_constant)}")

    lines.append("RANGES")
    lines.append("BOUNDS")
    lb, ub = lp.bounds()
    for j, cname in enumerate(col_names):
        lo, hi = lb[j], ub[j]
        if lo == 0.0 and math.isinf(hi):
            continue
        if lo == hi:
            lines.append(f" FX {_BND_SET:<8}  {cname:<8}  {_field(lo)}")
            continue
        if math.isinf(lo) and math.isinf(hi):
            lines.append(f" FR {_BND_SET:<8}  {cname:<8}")
            continue
        if math.isinf(lo):
            lines.append(f" MI {_BND_SET:<8}  {cname:<8}")
        elif lo != 0.0:
            lines.append(f" LO {_BND_SET:<8}  {cname:<8}  {_field(lo)}")
        if not math.isinf(hi):
            lines.append(f" UP {_BND_SET:<8}  {cname:<8}  {_field(hi)}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def read_standard(text: str) -> LinearProgram:
    """Parse a document produced by :func:`export_standard` (or equivalent)."""
    section = None
    name = "imported"
    rows: dict[str, str] = {}
    row_order: list[str] = []
    obj_row: str | None = None
    col_entries: dict[str, list[tuple[str, float]]] = {}
    col_order: list[str] = []
    rhs: dict[str, float] = {}
    bounds: dict[str, list[tuple[str, float]]] = {}

    for raw in text.splitlines():
        if not raw.strip() or raw.lstrip().startswith("*"):
            continue
        if not raw[0].isspace():
            parts = raw.split()
            head = parts[0].upper()
            if head == "NAME":
                name = parts[1] if len(parts) > 1 else name
                section = "NAME"
            elif head in {"ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS"}:
                section = head
            elif head == "ENDATA":
                break
            else:
                raise DocumentFormatError(f"unknown section header {head!r}")
            continue
        parts = raw.split()
        if section == "ROWS":
            tag, rname = parts[0].upper(), parts[1]
            if tag == "N":
                if obj_row is None:
                    obj_row = rname
                continue
            if tag not in {"L", "G", "E"}:
                raise DocumentFormatError(f"unknown row type {tag!r} for row {rname!r}")
            rows[rname] = {"L": LE, "G": GE, "E": EQ}[tag]
            row_order.append(rname)
        elif section == "COLUMNS":
            cname = parts[0]
            if cname not in col_entries:
                col_entries[cname] = []
                col_order.append(cname)
            data = parts[1:]
            if len(data) % 2:
                raise DocumentFormatError(f"odd entry count in column line {raw!r}")
            for rname, value in zip(data[::2], data[1::2]):
                col_entries[cname].append((rname, float(value)))
        elif section == "RHS":
            data = parts[1:]
            for rname, value in zip(data[::2], data[1::2]):
                rhs[rname] = float(value)
        elif section == "RANGES":
            raise DocumentFormatError("ranged rows are not supported")
        elif section == "BOUNDS":
            tag = parts[0].upper()
            cname = parts[2]
            value = float(parts[3]) if len(parts) > 3 else math.nan
            bounds.setdefault(cname, []).append((tag, value))
        else:
            raise DocumentFormatError(f"data line outside any section: {raw!r}")

    if obj_row is None:
        raise DocumentFormatError("no objective row declared")

    lp = LinearProgram(name=name)
    lp.objective_constant = -rhs.get(obj_row, 0.0)
    col_index: dict[str, int] = {}
    objective: dict[str, float] = {}
    for cname in col_order:
        lo, hi = 0.0, math.inf
        for tag, value in bounds.get(cname, []):
            if tag == "LO":
                lo = value
            elif tag == "UP":
                hi = value
            elif tag == "FX":
                lo = hi = value
            elif tag == "FR":
                lo, hi = -math.inf, math.inf
            elif tag == "MI":
                lo = -math.inf
            elif tag == "PL":
                hi = math.inf
            else:
                raise DocumentFormatError(f"unknown bound type {tag!r}")
        obj_coef = 0.0
        for rname, value in col_entries[cname]:
            if rname == obj_row:
                obj_coef += value
        objective[cname] = obj_coef
        col_index[cname] = lp.add_variable(cname, lb=lo, ub=hi, obj=obj_coef)

    for rname in row_order:
        coeffs = []
        for cname in col_order:
            total = sum(v for rn, v in col_entries[cname] if rn == rname)
            if total:
                coeffs.append((col_index[cname], total))
        lp.add_constraint(rname, coeffs, rows[rname], rhs.get(rname, 0.0))

    unknown = {rn for entries in col_entries.values() for rn, _ in entries} - set(row_order) - {obj_row}
    if unknown:
        raise DocumentFormatError(f"column entries reference undeclared rows: {sorted(unknown)}")
    return lp
