"""Constraint-system generation for per-label bit-width demands.

Both generators walk the labeled AST once and emit rows of the form
``sum(coef * var) >= const [+ carry(site)]`` over integer variables

* ``nsb_l<k>``  — significant bits demanded at label ``k``, and
* ``nsbe_l<k>`` — width of the accumulated rounding error at label ``k``
  (second system only).

``gen_ilp`` charges every addition and subtraction a fixed carry bit, so all
rows are plain differences with integer constants — a pure ILP.  ``gen_pi``
instead attaches a carry *site* to each arithmetic operation: the carry is
``min(max(A, 0), max(B, 0), 1)`` where A and B are affine in the bit-width
variables, and it couples the demand rows with the error-width rows.  A
policy picks one branch per site; ``resolve_policy`` flattens a policied
system back into plain linear rows for the solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .ranges import (MissingRange, RangeMap, UnboundedRange, UseBeforeAssign,
                     ZeroUfp)
from .syntax import (Assign, BinOp, Const, If, MathCall, Program, RequireNsb,
                     Seq, Sqrt, Var, While)

DEFAULT_PHI = 2
DEFAULT_PREC_MAX = 200
BRANCH_NAMES = ("A", "B", "C")


def nsb_var(label: int) -> str:
    """Name of the significant-bits variable of a label."""
    return f"nsb_l{label}"


def nsbe_var(label: int) -> str:
    """Name of the error-width variable of a label."""
    return f"nsbe_l{label}"


def var_label(name: str) -> tuple[str, int]:
    """Split a variable name back into ("nsb"|"nsbe", label)."""
    kind, _, num = name.partition("_l")
    if kind not in ("nsb", "nsbe") or not num.isdigit():
        raise ValueError(f"not a bit-width variable: {name!r}")
    return kind, int(num)


# --- Affine terms and min/max carry terms --------------------------------

@dataclass(frozen=True, order=True)
class LinTerm:
    var: str
    coef: int


@dataclass(frozen=True, order=True)
class Affine:
    """Integer-affine expression sum(coef * var) + const."""

    terms: tuple[LinTerm, ...]
    const: int

    @classmethod
    def of(cls, coeffs: Mapping[str, int], const: int = 0) -> "Affine":
        items = tuple(LinTerm(v, c) for v, c in sorted(coeffs.items()) if c)
        return cls(items, const)

    def evaluate(self, point: Mapping[str, int], default: int = 0):
        total = self.const
        for t in self.terms:
            total += t.coef * point.get(t.var, default)
        return total

    def coeffs(self) -> dict[str, int]:
        return {t.var: t.coef for t in self.terms}


_ZERO = Affine.of({}, 0)
_ONE = Affine.of({}, 1)


@dataclass(frozen=True, order=True)
class MaxTerm:
    """Pointwise maximum of affine parts."""

    parts: tuple[Affine, ...]

    def evaluate(self, point: Mapping[str, int], default: int = 0):
        return max(p.evaluate(point, default) for p in self.parts)

    def normalized(self) -> "MaxTerm":
        return MaxTerm(tuple(sorted(set(self.parts))))


@dataclass(frozen=True, order=True)
class MinMaxTerm:
    """Pointwise minimum of max-terms (the shape of every carry)."""

    options: tuple[MaxTerm, ...]

    def evaluate(self, point: Mapping[str, int], default: int = 0):
        return min(o.evaluate(point, default) for o in self.options)

    def normalized(self) -> "MinMaxTerm":
        return MinMaxTerm(tuple(sorted({o.normalized() for o in self.options})))


@dataclass(frozen=True)
class XiSite:
    """Carry term of one arithmetic operation.

    The carry is min(max(A, 0), max(B, 0), 1): zero exactly when one
    operand's error lies entirely outside the other operand's last
    significant bit, one in the worst case.  A references the error width of
    the right operand, B the left one.
    """

    index: int
    label: int        # result label of the operation
    lhs: int          # left operand label
    rhs: int          # right operand label
    affines: Mapping[str, Affine]    # branch name -> affine (C is constant 1)

    def branch(self, name: str) -> MaxTerm:
        if name == "C":
            return MaxTerm((self.affines["C"],))
        return MaxTerm((self.affines[name], _ZERO))

    def term(self) -> MinMaxTerm:
        return MinMaxTerm(tuple(self.branch(b) for b in BRANCH_NAMES))


def eval_xi(site: XiSite, point: Mapping[str, int]):
    """Carry value at a full assignment of the bit-width variables."""
    return site.term().evaluate(point)


# --- Rows and systems ----------------------------------------------------

@dataclass(frozen=True)
class Inequality:
    """``sum(coef * var) >= const``, plus the site's carry when attached."""

    terms: tuple[LinTerm, ...]
    const: int
    site: Optional[XiSite] = None
    tag: str = ""

    def lhs_value(self, point: Mapping[str, int]):
        return sum(t.coef * point.get(t.var, 0) for t in self.terms)

    def rhs_value(self, point: Mapping[str, int]):
        if self.site is None:
            return self.const
        return self.const + eval_xi(self.site, point)

    def satisfied(self, point: Mapping[str, int]) -> bool:
        return self.lhs_value(point) >= self.rhs_value(point)

    def coeffs(self) -> dict[str, int]:
        return {t.var: t.coef for t in self.terms}


@dataclass(frozen=True)
class Requirement:
    """One accuracy assertion: variable carries >= bits at its def label."""

    var: str
    bits: int
    def_label: int
    label: int


@dataclass
class ConstraintSystem:
    mode: str                     # "ilp" or "pi"
    n_labels: int
    rows: list[Inequality]
    sites: list[XiSite]
    requirements: list[Requirement]
    phi: int
    prec_max: int

    def nsb_variables(self) -> list[str]:
        return [nsb_var(l) for l in range(self.n_labels)]

    def nsbe_variables(self) -> list[str]:
        if self.mode != "pi":
            return []
        return [nsbe_var(l) for l in range(self.n_labels)]

    def variables(self) -> list[str]:
        return self.nsb_variables() + self.nsbe_variables()

    def objective(self) -> list[str]:
        """Variables minimized with coefficient one (total demanded bits)."""
        return self.nsb_variables()

    def first_violated(self, point: Mapping[str, int]) -> Optional[Inequality]:
        for row in self.rows:
            if not row.satisfied(point):
                return row
        return None


Policy = Sequence[str]


def all_c_policy(system: ConstraintSystem) -> tuple[str, ...]:
    return ("C",) * len(system.sites)


def resolve_policy(system: ConstraintSystem,
                   policy: Policy) -> list[Inequality]:
    """Replace every carry by its policied branch, yielding linear rows.

    A row ``T >= c + carry`` under branch A (or B) with affine g becomes the
    pair ``T >= c`` and ``T - g_terms >= c + g_const`` (the max with zero);
    under C it becomes ``T >= c + 1``.
    """
    if len(policy) != len(system.sites):
        raise ValueError(f"policy has {len(policy)} entries for "
                         f"{len(system.sites)} sites")
    out: list[Inequality] = []
    for row in system.rows:
        if row.site is None:
            out.append(row)
            continue
        branch = policy[row.site.index]
        for part in row.site.branch(branch).parts:
            coeffs = row.coeffs()
            for v, c in part.coeffs().items():
                coeffs[v] = coeffs.get(v, 0) - c
            merged = tuple(LinTerm(v, c) for v, c in sorted(coeffs.items())
                           if c)
            out.append(Inequality(merged, row.const + part.const, None,
                                  f"{row.tag}[{branch}]"))
    return _finalize(out)


def unit_coefficients(rows: Sequence[Inequality]) -> bool:
    """True when every coefficient is +1 or -1 (holds for all unresolved
    systems; policy resolution may introduce +/-2 by self-cancellation)."""
    return all(t.coef in (1, -1) for row in rows for t in row.terms)


def _vacuous(row: Inequality) -> bool:
    # implied by variable non-negativity
    return (row.site is None and row.const <= 0
            and all(t.coef >= 0 for t in row.terms))


def _finalize(rows: list[Inequality]) -> list[Inequality]:
    seen = set()
    out = []
    for row in rows:
        if _vacuous(row):
            continue
        key = (row.terms, row.const, row.site.index if row.site else -1)
        if key in seen:
            continue
        seen.add(key)
        out.append(row)
    return out


# --- Generation ----------------------------------------------------------

@dataclass
class GenConfig:
    phi: int = DEFAULT_PHI
    prec_max: int = DEFAULT_PREC_MAX


class _Generator:
    """Single program walk emitting demand rows (and, for the policy
    variant, error-width rows with carry sites)."""

    def __init__(self, rmap: RangeMap, cfg: GenConfig, errors: bool):
        self.rmap = rmap
        self.cfg = cfg
        self.errors = errors
        self.rows: list[Inequality] = []
        self.sites: list[XiSite] = []
        self.requirements: list[Requirement] = []

    def row(self, coeffs: Mapping[str, int], const: int, tag: str,
            site: Optional[XiSite] = None) -> None:
        terms = tuple(LinTerm(v, c) for v, c in sorted(coeffs.items()) if c)
        self.rows.append(Inequality(terms, const, site, tag))

    def ufp(self, label: int) -> int:
        return self.rmap.ufp_of(label)

    def make_site(self, label: int, l1: int, l2: int,
                  u1: int, u2: int) -> XiSite:
        a = Affine.of({nsb_var(l1): 1, nsb_var(l2): -1, nsbe_var(l2): -1},
                      u2 - u1)
        b = Affine.of({nsb_var(l2): 1, nsb_var(l1): -1, nsbe_var(l1): -1},
                      u1 - u2)
        site = XiSite(index=len(self.sites), label=label, lhs=l1, rhs=l2,
                      affines={"A": a, "B": b, "C": _ONE})
        self.sites.append(site)
        return site

    # -- expressions

    def expr(self, e, env: dict[str, int]) -> None:
        match e:
            case Const():
                if self.errors:
                    # exact literal: its stored error is zero by definition
                    self.row({nsbe_var(e.label): 1}, 0, f"err-const@l{e.label}")
                    self.row({nsbe_var(e.label): -1}, 0,
                             f"err-const@l{e.label}")
            case Var():
                d = env.get(e.name)
                if d is not None:
                    self.row({nsb_var(d): 1, nsb_var(e.label): -1}, 0,
                             f"copy-{e.name}@l{e.label}")
                    if self.errors:
                        self.row({nsbe_var(d): 1, nsbe_var(e.label): -1}, 0,
                                 f"err-copy-{e.name}@l{e.label}")
                # a never-assigned name is an input: no def row to emit
            case BinOp(op="+") | BinOp(op="-"):
                self.expr(e.lhs, env)
                self.expr(e.rhs, env)
                self.add_sub(e)
            case BinOp():
                self.expr(e.lhs, env)
                self.expr(e.rhs, env)
                self.mul_div(e)
            case Sqrt():
                self.expr(e.arg, env)
                l, l1 = e.label, e.arg.label
                self.row({nsb_var(l1): 1, nsb_var(l): -1}, 0, f"sqrt@l{l}")
                if self.errors:
                    self.row({nsbe_var(l): 1, nsbe_var(l1): -1}, 0,
                             f"err-sqrt@l{l}")
            case MathCall():
                self.expr(e.arg, env)
                l, l1 = e.label, e.arg.label
                self.row({nsb_var(l1): 1, nsb_var(l): -1}, self.cfg.phi,
                         f"call-{e.fn}@l{l}")
                if self.errors:
                    # library call: error width saturates at the precision cap
                    cap = self.cfg.prec_max
                    self.row({nsbe_var(l): 1}, cap, f"err-call@l{l}")
                    self.row({nsbe_var(l): -1}, -cap, f"err-call@l{l}")
            case _:
                raise TypeError(f"not an expression: {e!r}")

    def add_sub(self, e: BinOp) -> None:
        l, l1, l2 = e.label, e.lhs.label, e.rhs.label
        z, z1, z2 = (self.rmap.is_zero(l), self.rmap.is_zero(l1),
                     self.rmap.is_zero(l2))
        name = "add" if e.op == "+" else "sub"
        site = None
        if not (z1 or z2):
            u1, u2 = self.ufp(l1), self.ufp(l2)
            if self.errors:
                site = self.make_site(l, l1, l2, u1, u2)
        if not z:
            # the alignment floor is the smallest ufp among the operation's
            # non-zero labels; an exactly-zero label has no leading bit
            floor_ = min(self.ufp(x)
                         for x, zx in ((l1, z1), (l2, z2), (l, z)) if not zx)
            for li, zi in ((l1, z1), (l2, z2)):
                if zi:
                    continue   # an exact zero contributes no rounding error
                scale = self.ufp(li) - floor_
                coeffs = {nsb_var(li): 1, nsb_var(l): -1}
                if site is not None:
                    self.row(coeffs, scale, f"{name}@l{l}", site)
                else:
                    self.row(coeffs, scale + 1, f"{name}@l{l}")
        if self.errors:
            self.row({nsbe_var(l): 1, nsbe_var(l1): -1}, 0, f"err-{name}@l{l}")
            self.row({nsbe_var(l): 1, nsbe_var(l2): -1}, 0, f"err-{name}@l{l}")
            if not (z1 or z2):
                self.row({nsbe_var(l): 1, nsb_var(l1): 1, nsb_var(l2): -1,
                          nsbe_var(l2): -1}, u1 - u2, f"err-{name}@l{l}", site)
                self.row({nsbe_var(l): 1, nsb_var(l2): 1, nsb_var(l1): -1,
                          nsbe_var(l1): -1}, u2 - u1, f"err-{name}@l{l}", site)

    def mul_div(self, e: BinOp) -> None:
        l, l1, l2 = e.label, e.lhs.label, e.rhs.label
        name = "mul" if e.op == "*" else "div"
        site = None
        if self.errors:
            try:
                u1, u2 = self.ufp(l1), self.ufp(l2)
            except (ZeroUfp, MissingRange, UnboundedRange):
                pass   # no usable leading-bit info: keep the worst-case carry
            else:
                site = self.make_site(l, l1, l2, u1, u2)
        for li in (l1, l2):
            coeffs = {nsb_var(li): 1, nsb_var(l): -1}
            if site is not None:
                self.row(coeffs, -1, f"{name}@l{l}", site)
            else:
                self.row(coeffs, 0, f"{name}@l{l}")
        if self.errors:
            self.row({nsbe_var(l): 1, nsb_var(l1): -1, nsbe_var(l1): -1,
                      nsbe_var(l2): -1}, -2, f"err-{name}@l{l}")
            self.row({nsbe_var(l): 1, nsb_var(l2): -1, nsbe_var(l2): -1,
                      nsbe_var(l1): -1}, -2, f"err-{name}@l{l}")

    # -- commands

    def cmd(self, c, env: dict[str, int]) -> dict[str, int]:
        match c:
            case None:
                return env
            case Seq():
                return self.cmd(c.rest, self.cmd(c.first, env))
            case Assign():
                self.expr(c.expr, env)
                self.row({nsb_var(c.expr.label): 1, nsb_var(c.label): -1}, 0,
                         f"assign-{c.var}@l{c.label}")
                if self.errors:
                    self.row({nsbe_var(c.expr.label): 1,
                              nsbe_var(c.label): -1}, 0,
                             f"err-assign-{c.var}@l{c.label}")
                out = dict(env)
                out[c.var] = c.label
                return out
            case RequireNsb():
                if c.var not in env:
                    raise UseBeforeAssign(
                        f"require_nsb({c.var}, {c.n}): variable never "
                        f"assigned before label {c.label}")
                self.row({nsb_var(env[c.var]): 1}, c.n,
                         f"require-{c.var}@l{c.label}")
                self.requirements.append(
                    Requirement(c.var, c.n, env[c.var], c.label))
                return env
            case If():
                env_then = self.cmd(c.then, dict(env))
                env_else = self.cmd(c.orelse, dict(env))
                self.join(env_then, c.label)
                self.join(env_else, c.label)
                return {x: c.label for x in set(env_then) | set(env_else)}
            case While():
                env_body = self.cmd(c.body, dict(env))
                self.join(env, c.label)
                self.join(env_body, c.label)
                return {x: c.label for x in set(env) | set(env_body)}
            case _:
                raise TypeError(f"not a command: {c!r}")

    def join(self, branch_env: dict[str, int], label: int) -> None:
        for x, d in branch_env.items():
            self.row({nsb_var(d): 1, nsb_var(label): -1}, 0,
                     f"join-{x}@l{label}")
            if self.errors:
                self.row({nsbe_var(d): 1, nsbe_var(label): -1}, 0,
                         f"err-join-{x}@l{label}")


def _generate(prog: Program, rmap: RangeMap, cfg: Optional[GenConfig],
              errors: bool) -> ConstraintSystem:
    cfg = cfg or GenConfig()
    g = _Generator(rmap, cfg, errors)
    g.cmd(prog.body, {})
    rows = _finalize(g.rows)
    assert unit_coefficients(rows), "generated row with non-unit coefficient"
    return ConstraintSystem(mode="pi" if errors else "ilp",
                            n_labels=prog.n_labels, rows=rows, sites=g.sites,
                            requirements=g.requirements, phi=cfg.phi,
                            prec_max=cfg.prec_max)


def gen_ilp(prog: Program, rmap: RangeMap,
            cfg: Optional[GenConfig] = None) -> ConstraintSystem:
    """Fixed-carry system: one row per demand edge, every carry is 1."""
    return _generate(prog, rmap, cfg, errors=False)


def gen_pi(prog: Program, rmap: RangeMap,
           cfg: Optional[GenConfig] = None) -> ConstraintSystem:
    """Min/max-carry system with error-width variables and carry sites."""
    return _generate(prog, rmap, cfg, errors=True)


# Rule-level entry points (used by the unit tests to probe single rules).

def gen_expr_ilp(e, env: Mapping[str, int], rmap: RangeMap,
                 cfg: Optional[GenConfig] = None) -> list[Inequality]:
    g = _Generator(rmap, cfg or GenConfig(), errors=False)
    g.expr(e, dict(env))
    return _finalize(g.rows)


def gen_expr_pi(e, env: Mapping[str, int], rmap: RangeMap,
                cfg: Optional[GenConfig] = None
                ) -> tuple[list[Inequality], list[XiSite]]:
    g = _Generator(rmap, cfg or GenConfig(), errors=True)
    g.expr(e, dict(env))
    return _finalize(g.rows), g.sites


def gen_cmd_ilp(c, env: Mapping[str, int], rmap: RangeMap,
                cfg: Optional[GenConfig] = None
                ) -> tuple[list[Inequality], dict[str, int]]:
    g = _Generator(rmap, cfg or GenConfig(), errors=False)
    out = g.cmd(c, dict(env))
    return _finalize(g.rows), out


def gen_cmd_pi(c, env: Mapping[str, int], rmap: RangeMap,
               cfg: Optional[GenConfig] = None
               ) -> tuple[list[Inequality], list[XiSite], dict[str, int]]:
    g = _Generator(rmap, cfg or GenConfig(), errors=True)
    out = g.cmd(c, dict(env))
    return _finalize(g.rows), g.sites, out
