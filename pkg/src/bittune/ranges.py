"""Interval range analysis.

Every value-carrying label gets a real interval enclosure computed by forward
interval evaluation (exact rational arithmetic; outward-rounded enclosures for
math functions; loop fixpoints with widening).  From the enclosure we derive
the integer ufp (floor of log2 of the largest magnitude), the scale constant
consumed by constraint generation.  An interval that is exactly {0} carries a
ZERO marker instead of a ufp.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import mpmath

from . import syntax
from .syntax import (Assign, BinOp, Compare, Const, If, MathCall, Program,
                     RequireNsb, Seq, Sqrt, Var, While)

INF = float("inf")


class ZeroUfp(ValueError):
    """ufp of exactly zero is undefined."""


class DivisionByZeroRange(Exception):
    """A divisor's interval may contain zero."""


class DomainError(Exception):
    """Math function applied to an interval leaving its domain."""


class UnboundedRange(Exception):
    """A ufp is needed at a label whose interval has no finite enclosure."""


class MissingRange(KeyError):
    """A ufp is needed at a label the analysis never mapped."""


class UnknownLabel(Exception):
    """A ufp override references a label outside the program."""


class MalformedTable(Exception):
    """Unparseable ufp override file."""


class UseBeforeAssign(Exception):
    """A variable is read (or required) before any assignment or declaration."""


def ufp(x) -> int:
    """floor(log2 |x|) computed exactly for int/Fraction inputs."""
    x = Fraction(x)
    if x == 0:
        raise ZeroUfp("ufp(0) is undefined")
    num, den = abs(x.numerator), x.denominator
    e = num.bit_length() - den.bit_length()

    def at_least(k: int) -> bool:    # |x| >= 2^k
        if k >= 0:
            return num >= den << k
        return num << -k >= den

    while not at_least(e):
        e -= 1
    while at_least(e + 1):
        e += 1
    return e


def mpf_to_fraction(x) -> Fraction:
    """Exact rational value of an mpmath float."""
    sign, man, exp, _ = x._mpf_
    if man == 0:
        return Fraction(0)
    value = Fraction(man) * (Fraction(2) ** exp)
    return -value if sign else value


# --- Intervals ---------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    lo: object  # Fraction, or -inf
    hi: object  # Fraction, or +inf

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"inverted interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, v) -> "Interval":
        v = Fraction(v)
        return cls(v, v)

    @classmethod
    def top(cls) -> "Interval":
        return cls(-INF, INF)

    @property
    def bounded(self) -> bool:
        return self.lo != -INF and self.hi != INF

    @property
    def is_zero(self) -> bool:
        return self.lo == 0 and self.hi == 0

    def contains_zero(self) -> bool:
        return self.lo <= 0 <= self.hi

    def join(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def max_abs(self):
        return max(abs(self.lo), abs(self.hi))

    def min_abs(self):
        if self.contains_zero():
            return Fraction(0)
        return min(abs(self.lo), abs(self.hi))

    def __contains__(self, v) -> bool:
        return self.lo <= v <= self.hi

    def __str__(self):
        return f"[{self.lo}, {self.hi}]"


def _ext_add(a, b):
    if a in (INF, -INF):
        return a
    if b in (INF, -INF):
        return b
    return a + b


def _ext_mul(a, b):
    infs = (INF, -INF)
    if a in infs or b in infs:
        if a == 0 or b == 0:
            return Fraction(0)   # bounded-by-zero factor
        pos = (a > 0) == (b > 0)
        return INF if pos else -INF
    return a * b


def iv_add(a: Interval, b: Interval) -> Interval:
    return Interval(_ext_add(a.lo, b.lo), _ext_add(a.hi, b.hi))


def iv_sub(a: Interval, b: Interval) -> Interval:
    return Interval(_ext_add(a.lo, -b.hi if b.hi != INF else -INF),
                    _ext_add(a.hi, -b.lo if b.lo != -INF else INF))


def iv_mul(a: Interval, b: Interval) -> Interval:
    products = [_ext_mul(a.lo, b.lo), _ext_mul(a.lo, b.hi),
                _ext_mul(a.hi, b.lo), _ext_mul(a.hi, b.hi)]
    return Interval(min(products), max(products))


def iv_div(a: Interval, b: Interval) -> Interval:
    if b.contains_zero():
        raise DivisionByZeroRange(f"divisor range {b} may contain zero")
    if not (b.lo != -INF and b.hi != INF):
        # divisor bounded away from 0 on one side but infinite magnitude
        recip = Interval(Fraction(0), 1 / Fraction(b.lo)) if b.lo > 0 else \
            Interval(1 / Fraction(b.hi), Fraction(0))
        return iv_mul(a, recip)
    return iv_mul(a, Interval(1 / Fraction(b.hi), 1 / Fraction(b.lo)))


# --- Math-function enclosures -----------------------------------------

_OUT_REL = Fraction(1, 2 ** 90)
_OUT_ABS = Fraction(1, 2 ** 200)


def _outward(lo: Fraction, hi: Fraction) -> Interval:
    pad_lo = abs(lo) * _OUT_REL + _OUT_ABS
    pad_hi = abs(hi) * _OUT_REL + _OUT_ABS
    return Interval(lo - pad_lo, hi + pad_hi)


def _mpf(x: Fraction):
    return mpmath.mpf(x.numerator) / mpmath.mpf(x.denominator)


def _monotone_enclosure(fn, iv: Interval, increasing: bool = True) -> Interval:
    with mpmath.workprec(120):
        va = mpf_to_fraction(fn(_mpf(Fraction(iv.lo))))
        vb = mpf_to_fraction(fn(_mpf(Fraction(iv.hi))))
    lo, hi = (va, vb) if increasing else (vb, va)
    return _outward(lo, hi)


def _periodic_enclosure(fn, iv: Interval, crit_offset) -> Interval:
    """Enclosure for sin/cos: endpoints plus any interior extrema (value +-1)."""
    if not iv.bounded or (iv.hi - iv.lo) >= 7:
        return Interval(Fraction(-1), Fraction(1))
    with mpmath.workprec(120):
        lo_m, hi_m = _mpf(Fraction(iv.lo)), _mpf(Fraction(iv.hi))
        vals = [mpf_to_fraction(fn(lo_m)), mpf_to_fraction(fn(hi_m))]
        pi = mpmath.pi()
        slack = mpmath.mpf(2) ** -80
        k = int(mpmath.floor((lo_m - crit_offset * pi) / pi)) - 1
        while True:
            x = crit_offset * pi + k * pi
            if x > hi_m + slack:
                break
            if x >= lo_m - slack:
                vals.append(Fraction(1) if fn(x) > 0 else Fraction(-1))
            k += 1
    lo, hi = min(vals), max(vals)
    enc = _outward(lo, hi)
    return Interval(max(enc.lo, Fraction(-1)), min(enc.hi, Fraction(1)))


def math_enclosure(fn: str, iv: Interval) -> Interval:
    if fn == "sin":
        return _periodic_enclosure(mpmath.sin, iv, Fraction(1, 2))
    if fn == "cos":
        return _periodic_enclosure(mpmath.cos, iv, Fraction(0))
    if fn == "tan":
        if not iv.bounded or (iv.hi - iv.lo) >= 3:
            return Interval.top()
        with mpmath.workprec(120):
            lo_m, hi_m = _mpf(Fraction(iv.lo)), _mpf(Fraction(iv.hi))
            pi = mpmath.pi()
            slack = mpmath.mpf(2) ** -80
            k = int(mpmath.floor((lo_m - pi / 2) / pi)) - 1
            while True:
                x = pi / 2 + k * pi
                if x > hi_m + slack:
                    break
                if x >= lo_m - slack:
                    return Interval.top()
                k += 1
        return _monotone_enclosure(mpmath.tan, iv)
    if fn == "exp":
        if iv.hi == INF:
            lo = Fraction(0) if iv.lo == -INF else \
                _monotone_enclosure(mpmath.exp, Interval(iv.lo, iv.lo)).lo
            return Interval(max(lo, Fraction(0)), INF)
        if iv.lo == -INF:
            return Interval(Fraction(0),
                            _monotone_enclosure(mpmath.exp, Interval(iv.hi, iv.hi)).hi)
        enc = _monotone_enclosure(mpmath.exp, iv)
        return Interval(max(enc.lo, Fraction(0)), enc.hi)
    if fn == "log":
        if iv.lo == -INF or iv.lo <= 0:
            raise DomainError(f"log of range {iv} (needs a positive lower bound)")
        if iv.hi == INF:
            return Interval(_monotone_enclosure(mpmath.log, Interval(iv.lo, iv.lo)).lo, INF)
        return _monotone_enclosure(mpmath.log, iv)
    if fn == "arcsin" or fn == "arccos":
        if not iv.bounded or iv.lo < -1 or iv.hi > 1:
            raise DomainError(f"{fn} of range {iv} (needs [-1, 1])")
        mfn = mpmath.asin if fn == "arcsin" else mpmath.acos
        return _monotone_enclosure(mfn, iv, increasing=(fn == "arcsin"))
    if fn == "arctan":
        if not iv.bounded:
            return Interval(Fraction(-2), Fraction(2))
        return _monotone_enclosure(mpmath.atan, iv)
    if fn == "sinh" or fn == "tanh":
        if not iv.bounded:
            if fn == "tanh":
                return Interval(Fraction(-1), Fraction(1))
            return Interval.top()
        return _monotone_enclosure(getattr(mpmath, fn), iv)
    if fn == "cosh":
        if not iv.bounded:
            return Interval(Fraction(1), INF)
        enc_ends = _monotone_enclosure(mpmath.cosh, Interval(iv.lo, iv.lo)).join(
            _monotone_enclosure(mpmath.cosh, Interval(iv.hi, iv.hi)))
        lo = Fraction(1) if iv.contains_zero() else max(enc_ends.lo, Fraction(1))
        return Interval(lo, enc_ends.hi)
    raise DomainError(f"unsupported math function {fn!r}")


def sqrt_enclosure(iv: Interval) -> Interval:
    if iv.lo == -INF or iv.lo < 0:
        raise DomainError(f"sqrt of range {iv} (needs a non-negative lower bound)")
    if iv.hi == INF:
        lo = Fraction(0) if iv.lo == 0 else \
            _monotone_enclosure(mpmath.sqrt, Interval(iv.lo, iv.lo)).lo
        return Interval(max(lo, Fraction(0)), INF)
    enc = _monotone_enclosure(mpmath.sqrt, iv)
    return Interval(max(enc.lo, Fraction(0)), enc.hi)


# --- RangeMap ----------------------------------------------------------

@dataclass
class LabelRange:
    interval: Optional[Interval]      # None: label carries no numeric value
    ufp: Optional[int] = None         # None when zero-marked or unbounded
    zero: bool = False
    overridden: bool = False

    @classmethod
    def from_interval(cls, iv: Interval) -> "LabelRange":
        if iv.is_zero:
            return cls(interval=iv, ufp=None, zero=True)
        m = iv.max_abs()
        if m == INF:
            return cls(interval=iv, ufp=None)
        return cls(interval=iv, ufp=ufp(m))


class RangeMap:
    """Per-label interval/ufp results, with demand-driven ufp access."""

    def __init__(self):
        self.entries: dict[int, LabelRange] = {}

    def record(self, label: int, iv: Interval):
        prev = self.entries.get(label)
        if prev is not None and prev.overridden:
            return
        if prev is not None and prev.interval is not None:
            iv = prev.interval.join(iv)
        self.entries[label] = LabelRange.from_interval(iv)

    def record_opaque(self, label: int):
        self.entries.setdefault(label, LabelRange(interval=None))

    def override_ufp(self, label: int, value: int):
        entry = self.entries.get(label)
        if entry is None:
            entry = LabelRange(interval=None)
            self.entries[label] = entry
        entry.ufp = value
        entry.zero = False
        entry.overridden = True

    def __contains__(self, label: int) -> bool:
        return label in self.entries

    def __getitem__(self, label: int) -> LabelRange:
        return self.entries[label]

    def get(self, label: int) -> Optional[LabelRange]:
        return self.entries.get(label)

    def is_zero(self, label: int) -> bool:
        entry = self.entries.get(label)
        return entry is not None and entry.zero

    def ufp_of(self, label: int) -> int:
        """The ufp constant for a label; raises if it is not available."""
        entry = self.entries.get(label)
        if entry is None or (entry.interval is None and not entry.overridden):
            raise MissingRange(label)
        if entry.zero:
            raise ZeroUfp(f"label {label} is exactly zero")
        if entry.ufp is None:
            raise UnboundedRange(
                f"label {label} has no finite range and no ufp override")
        return entry.ufp

    def interval_of(self, label: int) -> Optional[Interval]:
        entry = self.entries.get(label)
        return entry.interval if entry is not None else None

    def unbounded_labels(self) -> list[int]:
        return sorted(l for l, e in self.entries.items()
                      if e.interval is not None and e.ufp is None
                      and not e.zero and not e.overridden)


# --- Forward analysis --------------------------------------------------

@dataclass
class RangeConfig:
    max_loop_iters: int = 64


def analyze_ranges(prog: Program, inputs: dict[str, Interval] | None = None,
                   cfg: RangeConfig | None = None) -> RangeMap:
    inputs = inputs or {}
    cfg = cfg or RangeConfig()
    rmap = RangeMap()
    env: dict[str, Interval] = dict(inputs)

    def eval_expr(e, record: bool) -> Interval:
        match e:
            case Const():
                iv = Interval.point(e.value)
            case Var():
                if e.name in env:
                    iv = env[e.name]
                elif e.name in inputs:
                    iv = inputs[e.name]
                else:
                    raise UseBeforeAssign(
                        f"variable {e.name!r} read before assignment "
                        f"(declare an input range to treat it as an input)")
            case BinOp():
                a = eval_expr(e.lhs, record)
                b = eval_expr(e.rhs, record)
                op = {"+": iv_add, "-": iv_sub, "*": iv_mul, "/": iv_div}[e.op]
                try:
                    iv = op(a, b)
                except DivisionByZeroRange as exc:
                    raise DivisionByZeroRange(f"label {e.label}: {exc}") from None
            case Sqrt():
                a = eval_expr(e.arg, record)
                try:
                    iv = sqrt_enclosure(a)
                except DomainError as exc:
                    raise DomainError(f"label {e.label}: {exc}") from None
            case MathCall():
                a = eval_expr(e.arg, record)
                try:
                    iv = math_enclosure(e.fn, a)
                except DomainError as exc:
                    raise DomainError(f"label {e.label}: {exc}") from None
            case _:
                raise TypeError(f"not an expression: {e!r}")
        if record:
            rmap.record(e.label, iv)
        return iv

    def eval_cond(cond: Compare, record: bool):
        eval_expr(cond.lhs, record)
        eval_expr(cond.rhs, record)
        if record:
            rmap.record_opaque(cond.label)

    def refine(cond: Compare, negate: bool):
        """Narrow a variable's interval using a `var cmp const` guard."""
        lhs, rhs, op = cond.lhs, cond.rhs, cond.op
        if isinstance(rhs, Var) and isinstance(lhs, Const):
            flip = {"<": ">", ">": "<", "<=": ">=", ">=": "<=",
                    "==": "==", "!=": "!="}
            lhs, rhs, op = rhs, lhs, flip[op]
        if not (isinstance(lhs, Var) and isinstance(rhs, Const)):
            return
        if lhs.name not in env:
            return
        if negate:
            op = {"<": ">=", "<=": ">", ">": "<=", ">=": "<",
                  "==": "!=", "!=": "=="}[op]
        iv = env[lhs.name]
        c = rhs.value
        if op in ("<", "<="):
            hi = min(iv.hi, c)
            if hi < iv.lo:
                return
            env[lhs.name] = Interval(iv.lo, hi)
        elif op in (">", ">="):
            lo = max(iv.lo, c)
            if lo > iv.hi:
                return
            env[lhs.name] = Interval(lo, iv.hi)

    def join_envs(a: dict[str, Interval], b: dict[str, Interval]):
        out = {}
        for name in set(a) | set(b):
            if name in a and name in b:
                out[name] = a[name].join(b[name])
            else:
                out[name] = a.get(name, b.get(name))
        return out

    def run_cmd(cmd, record: bool):
        nonlocal env
        match cmd:
            case None:
                pass
            case Seq():
                run_cmd(cmd.first, record)
                run_cmd(cmd.rest, record)
            case Assign():
                iv = eval_expr(cmd.expr, record)
                env[cmd.var] = iv
                if record:
                    rmap.record(cmd.label, iv)
            case RequireNsb():
                if record:
                    # the assertion point's range is its variable's range,
                    # which downstream error checks use as a scale
                    if cmd.var in env:
                        rmap.record(cmd.label, env[cmd.var])
                    else:
                        rmap.record_opaque(cmd.label)
            case If():
                eval_cond(cmd.cond, record)
                snapshot = dict(env)
                refine(cmd.cond, negate=False)
                run_cmd(cmd.then, record)
                then_env = env
                env = dict(snapshot)
                refine(cmd.cond, negate=True)
                run_cmd(cmd.orelse, record)
                env = join_envs(then_env, env)
                if record:
                    rmap.record_opaque(cmd.label)
            case While():
                run_while(cmd, record)
            case _:
                raise TypeError(f"not a command: {cmd!r}")

    def run_while(cmd: While, record: bool):
        nonlocal env
        stable = False
        for _ in range(cfg.max_loop_iters):
            eval_cond(cmd.cond, record=False)
            before = dict(env)
            refine(cmd.cond, negate=False)
            run_cmd(cmd.body, record=False)
            joined = join_envs(before, env)
            env = joined
            if all(name in before and joined[name] == before[name]
                   for name in joined):
                stable = True
                break
        if not stable:
            # Widen whatever keeps moving to (-inf, inf), then re-run until
            # the widened environment stops changing.  Tops are absorbing
            # under join, so each pass either stabilizes or permanently tops
            # at least one binding and the loop terminates.
            for _ in range(cfg.max_loop_iters):
                before = dict(env)
                eval_cond(cmd.cond, record=False)
                refine(cmd.cond, negate=False)
                run_cmd(cmd.body, record=False)
                env = join_envs(before, env)
                moved = [name for name in env
                         if name not in before or env[name] != before[name]]
                if not moved:
                    stable = True
                    break
                for name in moved:
                    env[name] = Interval.top()
            if not stable:
                env = {name: Interval.top() for name in env}
        if record:
            # one recording pass from the stable environment
            post = dict(env)
            eval_cond(cmd.cond, record=True)
            refine(cmd.cond, negate=False)
            run_cmd(cmd.body, record=True)
            env = post
            refine(cmd.cond, negate=True)
            rmap.record_opaque(cmd.label)

    run_cmd(prog.body, record=True)
    if prog.body is not None:
        for node in syntax.postorder(prog.body):
            if node.label not in rmap:
                rmap.record_opaque(node.label)
    return rmap


# --- External files ----------------------------------------------------

def load_ufp_table(path: str) -> dict[int, int]:
    """TSV of `label<TAB>ufp` rows (whitespace-separated also accepted)."""
    table: dict[int, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace("\t", " ").split()
            if len(parts) != 2:
                raise MalformedTable(f"{path}:{lineno}: expected 'label ufp'")
            label_text = parts[0].lstrip("lL")
            try:
                label = int(label_text)
                value = int(parts[1])
            except ValueError:
                raise MalformedTable(
                    f"{path}:{lineno}: non-integer entry {line!r}") from None
            if label < 0:
                raise MalformedTable(f"{path}:{lineno}: negative label")
            table[label] = value
    return table


def apply_ufp_overrides(rmap: RangeMap, table: dict[int, int], n_labels: int):
    for label, value in sorted(table.items()):
        if label >= n_labels:
            raise UnknownLabel(
                f"ufp override for label {label}, but program has labels "
                f"0..{n_labels - 1}")
        rmap.override_ufp(label, value)


def load_input_ranges(path: str) -> dict[str, Interval]:
    """TOML file: an [inputs] table of `name = [lo, hi]` pairs.

    Bounds may be strings (exact decimals) or numbers; floats are read via
    their shortest decimal representation, so `0.1` means exactly 1/10.
    """
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    section = data.get("inputs", data)
    out: dict[str, Interval] = {}
    for name, bounds in section.items():
        if not isinstance(bounds, list) or len(bounds) != 2:
            raise MalformedTable(f"range for {name!r} must be [lo, hi]")
        lo, hi = (Fraction(repr(b)) if isinstance(b, float) else Fraction(str(b))
                  for b in bounds)
        out[name] = Interval(lo, hi)
    return out
