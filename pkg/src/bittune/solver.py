"""Solving the generated systems: exact LP, integrality, caps, tie-breaks.

The fixed-carry route (`solve_ilp`) accepts either backend — exact simplex
on the continuous relaxation or the ascending fixpoint iteration — and can
run both as a cross-check.  The relaxation of a fixed-carry system must come
out integral; anything else is an internal invariant violation, not an
input error.

The policied route (`solve_policied`) flattens one branch choice per carry
site into linear rows.  Those rows can have +/-2 coefficients, so the
relaxation may go fractional; branch and bound on exact rationals recovers
the integer optimum.  Upper bounds are enforced cheaply: demand variables
are checked against the precision ceiling after solving, error-width
variables get cap rows added lazily only when a solution actually violates
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from . import simplex
from .constraints import (ConstraintSystem, Inequality, LinTerm, Policy,
                          resolve_policy)
from .kleene import NoFixpointBelowCeiling, kleene_least_fixpoint
from .simplex import Infeasible, LPResult

MAX_BB_NODES = 10_000


class NonIntegralILP(Exception):
    """The relaxation of a fixed-carry system returned a fractional
    coordinate — an internal invariant violation."""


@dataclass
class Solution:
    values: dict[str, int]
    objective: int
    method: str
    pivots: int = 0
    cap_rows: int = 0
    bb_nodes: int = 0


def check_feasible(rows: Sequence[Inequality],
                   values: Mapping[str, int]) -> Optional[Inequality]:
    """First violated row, or None; exact arithmetic re-check."""
    for row in rows:
        if not row.satisfied(values):
            return row
    return None


def tighten(rows: Sequence[Inequality], values: Mapping[str, int],
            subset: Sequence[str]) -> dict[str, int]:
    """Try to decrease each coordinate while staying feasible.

    On an optimal point of a sum objective this can never commit a change
    (any decrease would beat the optimum), so it serves as a minimality
    verification; it is kept generic for use on frozen-coordinate refits.
    """
    out = dict(values)
    incident: dict[str, list[Inequality]] = {v: [] for v in subset}
    for row in rows:
        for t in row.terms:
            if t.var in incident:
                incident[t.var].append(row)
    changed = True
    while changed:
        changed = False
        for v in subset:
            while out[v] > 0:
                out[v] -= 1
                if any(not r.satisfied(out) for r in incident[v]):
                    out[v] += 1
                    break
                changed = True
    return out


def _as_int_values(lp: LPResult) -> dict[str, int]:
    out = {}
    for v, val in lp.values.items():
        if val.denominator != 1:
            raise ValueError(v)
        out[v] = int(val)
    return out


def _check_demand_caps(system: ConstraintSystem,
                       values: Mapping[str, int]) -> None:
    for v in system.nsb_variables():
        if values[v] > system.prec_max:
            raise Infeasible(
                f"{v} needs {values[v]} bits, above the precision ceiling "
                f"{system.prec_max}", [f"cap-{v}"])


def solve_ilp(system: ConstraintSystem, method: str = "simplex") -> Solution:
    """Solve a fixed-carry system; `method` is simplex, kleene, or both."""
    objective = {v: 1 for v in system.objective()}
    variables = system.variables()
    sol: Optional[Solution] = None
    if method in ("simplex", "both"):
        lp = simplex.solve_lp(system.rows, objective, variables)
        try:
            values = _as_int_values(lp)
        except ValueError as exc:
            raise NonIntegralILP(
                f"fixed-carry relaxation gave fractional {exc}") from None
        bad = check_feasible(system.rows, values)
        assert bad is None, f"optimum violates row {bad.tag}"
        tightened = tighten(system.rows, values, system.nsb_variables())
        assert tightened == values, "optimum was not coordinate-minimal"
        _check_demand_caps(system, values)
        sol = Solution(values, int(lp.objective), "simplex", lp.pivots)
    if method in ("kleene", "both"):
        try:
            values = kleene_least_fixpoint(system.rows, variables,
                                           system.prec_max)
        except NoFixpointBelowCeiling as exc:
            raise Infeasible(str(exc), exc.chain) from None
        objective_value = sum(values[v] for v in system.objective())
        fixpoint = Solution(values, objective_value, "kleene")
        if sol is not None and sol.values != fixpoint.values:
            diffs = [v for v in variables if sol.values[v] != fixpoint.values[v]]
            raise RuntimeError(
                "simplex and fixpoint optima disagree on " + ", ".join(diffs))
        sol = sol or fixpoint
        if method == "both":
            sol = Solution(sol.values, sol.objective, "both", sol.pivots)
    if sol is None:
        raise ValueError(f"unknown solver method {method!r}")
    return sol


# --- Branch and bound on the exact relaxation ----------------------------

def _first_fractional(values: Mapping[str, Fraction],
                      order: Sequence[str]) -> Optional[str]:
    for v in order:
        if values[v].denominator != 1:
            return v
    return None


def branch_and_bound(rows: list[Inequality], objective: Mapping[str, int],
                     variables: Sequence[str]) -> tuple[LPResult, int]:
    """Integer minimum via depth-first branching on fractional coordinates.

    Returns the integral LP result and the number of explored nodes.  The
    objective has integer coefficients, so a node is pruned as soon as the
    ceiling of its relaxation bound reaches the incumbent.
    """
    best: Optional[LPResult] = None
    nodes = 0
    stack: list[list[Inequality]] = [rows]
    while stack:
        nodes += 1
        if nodes > MAX_BB_NODES:
            raise RuntimeError("branch-and-bound node limit exceeded")
        current = stack.pop()
        try:
            lp = simplex.solve_lp(current, objective, variables)
        except Infeasible:
            continue
        bound = math.ceil(lp.objective)
        if best is not None and bound >= best.objective:
            continue
        v = _first_fractional(lp.values, variables)
        if v is None:
            best = lp
            continue
        floor_ = lp.values[v].numerator // lp.values[v].denominator
        below = Inequality((LinTerm(v, -1),), -floor_, None, f"bb-{v}<=")
        above = Inequality((LinTerm(v, 1),), floor_ + 1, None, f"bb-{v}>=")
        stack.append(current + [below])
        stack.append(current + [above])
    if best is None:
        raise Infeasible("no integer point satisfies the policied rows",
                         ["branch-and-bound"])
    return best, nodes


def _solve_integer(rows: list[Inequality], objective: Mapping[str, int],
                   variables: Sequence[str]) -> tuple[dict[str, int], int,
                                                      int, int]:
    lp = simplex.solve_lp(rows, objective, variables)
    nodes = 0
    if _first_fractional(lp.values, variables) is not None:
        lp, nodes = branch_and_bound(rows, objective, variables)
    values = _as_int_values(lp)
    return values, int(lp.objective), lp.pivots, nodes


def solve_policied(system: ConstraintSystem, policy: Policy) -> Solution:
    """Solve one policy's linear rows, with lazy error-width cap rows."""
    rows = resolve_policy(system, policy)
    objective = {v: 1 for v in system.objective()}
    variables = system.variables()
    caps: list[Inequality] = []
    while True:
        values, obj, pivots, nodes = _solve_integer(rows + caps, objective,
                                                    variables)
        over = [v for v in system.nsbe_variables()
                if values[v] > system.prec_max]
        if not over:
            break
        for v in over:
            caps.append(Inequality((LinTerm(v, -1),), -system.prec_max,
                                   None, f"cap-{v}"))
    _check_demand_caps(system, values)
    bad = check_feasible(rows + caps, values)
    assert bad is None, f"optimum violates row {bad.tag}"
    return Solution(values, obj, "simplex", pivots, len(caps), nodes)


def refit_error_widths(system: ConstraintSystem, policy: Policy,
                       sol: Solution) -> Solution:
    """Among optima with the same demand coordinates, pick the one with the
    smallest total error width (then verify it is coordinate-minimal)."""
    rows = resolve_policy(system, policy)
    frozen: list[Inequality] = []
    for v in system.nsb_variables():
        k = sol.values[v]
        frozen.append(Inequality((LinTerm(v, 1),), k, None, f"freeze-{v}"))
        frozen.append(Inequality((LinTerm(v, -1),), -k, None, f"freeze-{v}"))
    for v in system.nsbe_variables():
        frozen.append(Inequality((LinTerm(v, -1),), -system.prec_max, None,
                                 f"cap-{v}"))
    objective = {v: 1 for v in system.nsbe_variables()}
    values, _, pivots, nodes = _solve_integer(rows + frozen, objective,
                                              system.variables())
    values = tighten(rows, values, system.nsbe_variables())
    return Solution(values, sol.objective, sol.method,
                    sol.pivots + pivots, sol.cap_rows, sol.bb_nodes + nodes)
