"""CPLEX LP text export of a generated (or policy-resolved) system.

Interoperability output only — the bundled solver never reads this back.
Variables are continuous with the box ``0 <= v <= prec_max``; external
solvers reproduce the integer optimum because the relaxation is integral
(fixed-carry systems) or gets re-checked downstream.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence, TextIO

from .constraints import ConstraintSystem, Inequality


def _row_text(terms: Iterable, const: int) -> str:
    parts = []
    for t in terms:
        mag = abs(t.coef)
        body = t.var if mag == 1 else f"{mag} {t.var}"
        if not parts:
            parts.append(f"-{body}" if t.coef < 0 else body)
        else:
            parts.append(f"{'-' if t.coef < 0 else '+'} {body}")
    return f"{' '.join(parts)} >= {const}"


def write_lp(out: TextIO, system: ConstraintSystem,
             rows: Optional[Sequence[Inequality]] = None,
             policy: Optional[str] = None, name: str = "bittune") -> None:
    """Write `rows` (default: the system's own rows, which must already be
    linear) in CPLEX LP text form."""
    if rows is None:
        rows = system.rows
    pending = [r for r in rows if r.site is not None]
    if pending:
        raise ValueError(f"row {pending[0].tag!r} still carries a min/max "
                         "term; resolve a policy before exporting")
    out.write(f"\\ {name}: minimize total demanded bits\n")
    if policy is not None:
        out.write(f"\\ policy: {policy}\n")
    out.write("Minimize\n obj: ")
    objective = system.objective()
    for i, v in enumerate(objective):
        sep = "" if i == 0 else (" +\n      " if i % 8 == 7 else " + ")
        out.write(f"{sep}{v}")
    out.write("\nSubject To\n")
    for k, row in enumerate(rows, 1):
        out.write(f" c{k}: {_row_text(row.terms, row.const)}\n")
    out.write("Bounds\n")
    for v in system.variables():
        out.write(f" 0 <= {v} <= {system.prec_max}\n")
    out.write("End\n")
