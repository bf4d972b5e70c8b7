"""Ascending least-fixpoint iteration for monotone demand systems.

Every fixed-carry row has exactly one +1 variable (the demand being raised)
and only -1 side terms, so each row reads ``head >= const + sum(sides)`` —
a maximum of order-preserving affine maps.  Iterating ``x = max(x, F(x))``
from the all-zero vector therefore converges to the least solution, which
is what the simplex route must reproduce coordinate for coordinate.
"""

from __future__ import annotations

from typing import Sequence

from .constraints import Inequality, var_label


class NoFixpointBelowCeiling(Exception):
    """Iteration climbed past the precision ceiling; ``chain`` holds the
    tags of the rows that drove the runaway coordinate, deepest first."""

    def __init__(self, msg: str, chain: Sequence[str] = ()):
        super().__init__(msg)
        self.chain = tuple(chain)


def _rules(rows: Sequence[Inequality]):
    rules = []
    for row in rows:
        if row.site is not None:
            raise ValueError(f"row {row.tag!r} carries an unresolved min/max "
                             "term; only fixed-carry systems iterate")
        pos = [t for t in row.terms if t.coef > 0]
        neg = [t for t in row.terms if t.coef < 0]
        if (len(pos) != 1 or pos[0].coef != 1
                or any(t.coef != -1 for t in neg)):
            raise ValueError(f"row {row.tag!r} is not an order-preserving "
                             "demand rule")
        rules.append((pos[0].var, tuple(t.var for t in neg), row.const,
                      row.tag))
    # sweep in label order so chains settle in few passes
    rules.sort(key=lambda r: (var_label(r[0])[1], r[0]))
    return rules


def _chain(cause, values, start: str) -> list[str]:
    chain = []
    cur = start
    seen = set()
    while cur in cause and cur not in seen and len(chain) < 50:
        seen.add(cur)
        tag, sides = cause[cur]
        chain.append(tag)
        if not sides:
            break
        cur = max(sides, key=lambda v: values.get(v, 0))
    return chain


def kleene_least_fixpoint(rows: Sequence[Inequality],
                          variables: Sequence[str],
                          ceiling: int) -> dict[str, int]:
    rules = _rules(rows)
    values = {v: 0 for v in variables}
    cause: dict[str, tuple[str, tuple[str, ...]]] = {}
    changed = True
    while changed:
        changed = False
        for head, sides, const, tag in rules:
            need = const
            for v in sides:
                need += values[v]
            if values[head] < need:
                values[head] = need
                cause[head] = (tag, sides)
                if need > ceiling:
                    raise NoFixpointBelowCeiling(
                        f"{head} driven to {need}, above the precision "
                        f"ceiling {ceiling}",
                        _chain(cause, values, head))
                changed = True
    return values
