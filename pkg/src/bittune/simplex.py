"""Exact-rational two-phase simplex for small minimization LPs.

Input rows are ``sum(coef * var) >= const`` over non-negative variables.
All pivoting is done on exact rationals (gmpy2.mpq when available, else
fractions.Fraction), so optimum coordinates can be checked for integrality
without any tolerance.  Pivot choice is Dantzig's rule, switching to Bland's
rule while a run of degenerate pivots lasts, which guarantees termination.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

try:
    from gmpy2 import mpq as _Q
except ImportError:                        # pragma: no cover - gmpy2 present
    _Q = Fraction


class Infeasible(Exception):
    """No feasible point; ``witness`` holds tags of conflicting rows."""

    def __init__(self, msg: str, witness: Sequence[str] = ()):
        super().__init__(msg)
        self.witness = tuple(witness)


class Unbounded(Exception):
    pass


DEGENERATE_STREAK_LIMIT = 12
MAX_PIVOTS = 100_000


@dataclass
class LPResult:
    values: dict[str, Fraction]
    objective: Fraction
    pivots: int


def _fraction(q) -> Fraction:
    return Fraction(int(q.numerator), int(q.denominator))


class _Tableau:
    def __init__(self, n_cols: int):
        self.rows: list[list] = []       # each row: n_cols coeffs + rhs
        self.basis: list[int] = []
        self.tags: list[str] = []
        self.n_cols = n_cols
        self.z: list = []
        self.pivots = 0
        self._bland = False
        self._streak = 0

    # -- pivoting -----------------------------------------------------

    def pivot(self, i: int, j: int) -> None:
        prow = self.rows[i]
        pv = prow[j]
        if pv != 1:
            inv = 1 / pv
            for k in range(self.n_cols + 1):
                if prow[k]:
                    prow[k] *= inv
        nz = [(k, prow[k]) for k in range(self.n_cols + 1) if prow[k]]
        for row in self.rows:
            if row is prow:
                continue
            f = row[j]
            if f:
                for k, pk in nz:
                    row[k] -= f * pk
        f = self.z[j]
        if f:
            for k, pk in nz:
                self.z[k] -= f * pk
        self.basis[i] = j
        self.pivots += 1

    def _entering(self, blocked: frozenset) -> Optional[int]:
        z = self.z
        if self._bland:
            for j in range(self.n_cols):
                if j not in blocked and z[j] > 0:
                    return j
            return None
        best, best_j = 0, None
        for j in range(self.n_cols):
            if j not in blocked and z[j] > best:
                best, best_j = z[j], j
        return best_j

    def _leaving(self, j: int) -> Optional[int]:
        best_ratio = None
        best_i = None
        for i, row in enumerate(self.rows):
            a = row[j]
            if a > 0:
                ratio = row[-1] / a
                if (best_ratio is None or ratio < best_ratio
                        or (ratio == best_ratio
                            and self.basis[i] < self.basis[best_i])):
                    best_ratio, best_i = ratio, i
        return best_i

    def minimize(self, blocked: frozenset) -> None:
        """Pivot until no entering column improves the objective."""
        self._bland = False
        self._streak = 0
        while True:
            if self.pivots > MAX_PIVOTS:
                raise RuntimeError("simplex pivot limit exceeded")
            j = self._entering(blocked)
            if j is None:
                return
            i = self._leaving(j)
            if i is None:
                raise Unbounded("improving direction with no blocking row")
            degenerate = self.rows[i][-1] == 0
            self.pivot(i, j)
            if degenerate:
                self._streak += 1
                if self._streak > DEGENERATE_STREAK_LIMIT:
                    self._bland = True
            else:
                self._streak = 0
                self._bland = False

    def set_costs(self, costs: Mapping[int, object]) -> None:
        """Install objective min sum(costs[j] * x_j) and price out the
        current basis (z[j] becomes the negated reduced cost)."""
        self.z = [_Q(0)] * (self.n_cols + 1)
        for j, c in costs.items():
            self.z[j] = -_Q(c)
        for i, row in enumerate(self.rows):
            cb = costs.get(self.basis[i])
            if cb:
                cb = _Q(cb)
                for k in range(self.n_cols + 1):
                    if row[k]:
                        self.z[k] += cb * row[k]


def solve_lp(rows, objective: Mapping[str, int],
             variables: Sequence[str]) -> LPResult:
    """Minimize ``sum(objective[v] * v)`` subject to the given rows and
    ``v >= 0`` for every variable.

    ``rows`` are Inequality values with ``site is None``.  Variables never
    mentioned in a row take value 0 in the returned solution.
    """
    # Only variables that occur in rows need tableau columns.
    used: dict[str, int] = {}
    order = {name: k for k, name in enumerate(variables)}
    for row in rows:
        for t in row.terms:
            if t.var not in order:
                raise ValueError(f"row variable {t.var!r} not declared")
            used.setdefault(t.var, None)
    cols = sorted(used, key=order.__getitem__)
    col_of = {name: j for j, name in enumerate(cols)}

    n_struct = len(cols)
    clean = []
    for row in rows:
        if not row.terms:
            if row.const > 0:
                raise Infeasible(
                    f"constant row requires 0 >= {row.const}", [row.tag])
            continue
        clean.append(row)

    n_rows = len(clean)
    n_cols = n_struct + n_rows          # + one surplus per row
    art_positions = [i for i, row in enumerate(clean) if row.const > 0]
    art_col = {}
    for a, i in enumerate(art_positions):
        art_col[i] = n_cols + a
    n_cols += len(art_positions)

    t = _Tableau(n_cols)
    zero = _Q(0)
    for i, row in enumerate(clean):
        vec = [zero] * (n_cols + 1)
        neg = row.const <= 0            # flip so the rhs is non-negative
        sign = -1 if neg else 1
        for term in row.terms:
            vec[col_of[term.var]] = _Q(sign * term.coef)
        vec[n_struct + i] = _Q(1) if neg else _Q(-1)   # surplus
        vec[-1] = _Q(sign * row.const)
        if neg:
            basic = n_struct + i
        else:
            basic = art_col[i]
            vec[basic] = _Q(1)
        t.rows.append(vec)
        t.basis.append(basic)
        t.tags.append(row.tag)

    artificials = frozenset(art_col.values())

    if artificials:
        t.set_costs({j: 1 for j in artificials})
        t.minimize(blocked=frozenset())
        if t.z[-1] > 0:
            witness = [t.tags[i] for i, b in enumerate(t.basis)
                       if b in artificials and t.rows[i][-1] > 0]
            raise Infeasible("no assignment satisfies all rows", witness)
        # Drive zero-valued artificials out of the basis; a row that cannot
        # pivot to a real column is redundant and dropped.
        drop = []
        for i in range(len(t.rows)):
            if t.basis[i] not in artificials:
                continue
            for j in range(n_struct + n_rows):
                if t.rows[i][j] != 0:
                    t.pivot(i, j)
                    break
            else:
                drop.append(i)
        for i in reversed(drop):
            del t.rows[i], t.basis[i], t.tags[i]

    costs = {col_of[v]: c for v, c in objective.items()
             if v in col_of and c}
    t.set_costs(costs)
    t.minimize(blocked=artificials)

    values = {name: Fraction(0) for name in variables}
    for i, b in enumerate(t.basis):
        if b < n_struct:
            values[cols[b]] = _fraction(t.rows[i][-1])
    # objective contributions of variables that never entered the tableau
    # are zero, so z's rhs is the full optimum
    return LPResult(values=values, objective=_fraction(t.z[-1]),
                    pivots=t.pivots)
