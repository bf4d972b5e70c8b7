"""Empirical accuracy check for tuned programs.

Runs every sampled input twice: once at high reference precision with exact
rational constants, and once with each labeled value rounded (nearest-even)
to its solved bit count.  At every accuracy assertion the two runs must
agree to the demanded number of bits: relative error below 2**-n, or, when
the reference value is exactly zero, absolute error below 2**(ufp - n) of
the asserted variable's range.  All error comparisons are exact rational
arithmetic — no float tolerance anywhere.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional

import mpmath
from mpmath import libmp

from . import syntax
from .ranges import mpf_to_fraction
from .syntax import (Assign, BinOp, Const, If, MathCall, Program, RequireNsb,
                     Seq, Sqrt, Var, While)


class NonTermination(Exception):
    pass


class DomainFault(ValueError):
    """Math-function argument outside its real domain during execution."""


DEFAULT_REF_BITS = 500
DEFAULT_SAMPLES = 100
LOOP_LIMIT = 1_000_000

_MATH = {
    "sin": mpmath.sin, "cos": mpmath.cos, "tan": mpmath.tan,
    "arcsin": mpmath.asin, "arccos": mpmath.acos, "arctan": mpmath.atan,
    "log": mpmath.log, "exp": mpmath.exp,
    "sinh": mpmath.sinh, "cosh": mpmath.cosh, "tanh": mpmath.tanh,
}


def _round_bits(value, bits: Optional[int]):
    if bits is None:
        return value
    with mpmath.workprec(bits):
        return +value


def _from_fraction(value: Fraction, bits: Optional[int] = None):
    """Rational -> mpf with a single correct rounding at `bits` (ambient
    precision when None)."""
    prec = bits if bits is not None else mpmath.mp.prec
    return mpmath.mp.make_mpf(libmp.from_rational(
        value.numerator, value.denominator, prec, libmp.round_nearest))


class _Interp:
    """One execution; ``nsb_of`` None means the exact reference run."""

    def __init__(self, prog: Program, inputs: Mapping[str, Fraction],
                 nsb_of: Optional[Callable[[int], int]],
                 on_require: Optional[Callable] = None,
                 loop_limit: int = LOOP_LIMIT):
        self.prog = prog
        self.nsb_of = nsb_of
        self.on_require = on_require
        self.loop_limit = loop_limit
        self.free = syntax.free_variables(prog)
        self.exact_inputs = dict(inputs)
        self.assigned: set[str] = set()
        self.env: dict[str, mpmath.mpf] = {
            name: _from_fraction(value) for name, value in inputs.items()}

    def bits(self, label: int) -> Optional[int]:
        if self.nsb_of is None:
            return None
        n = self.nsb_of(label)
        return n if n >= 1 else None    # no demand recorded: leave untouched

    def expr(self, e):
        match e:
            case Const():
                if self.nsb_of is None:
                    return _from_fraction(e.value)   # ambient reference bits
                bits = self.bits(e.label)
                stored = e.p if bits is None else min(e.p, bits)
                return _from_fraction(e.value, stored)
            case Var():
                try:
                    v = self.env[e.name]
                except KeyError:
                    raise NameError(f"variable {e.name!r} read before "
                                    f"assignment at label {e.label}") from None
                if e.name in self.free and e.name not in self.assigned:
                    bits = self.bits(e.label)
                    if bits is not None:
                        v = _from_fraction(self.exact_inputs[e.name], bits)
                return v
            case BinOp():
                a = self.expr(e.lhs)
                b = self.expr(e.rhs)
                match e.op:
                    case "+": raw = a + b
                    case "-": raw = a - b
                    case "*": raw = a * b
                    case "/": raw = a / b
                return _round_bits(raw, self.bits(e.label))
            case Sqrt():
                a = self.expr(e.arg)
                if a < 0:
                    raise DomainFault(f"sqrt of negative value at label "
                                      f"{e.label}")
                return _round_bits(mpmath.sqrt(a), self.bits(e.label))
            case MathCall():
                a = self.expr(e.arg)
                if e.fn == "log" and a <= 0:
                    raise DomainFault(f"log of non-positive value at label "
                                      f"{e.label}")
                if e.fn in ("arcsin", "arccos") and not -1 <= a <= 1:
                    raise DomainFault(f"{e.fn} argument outside [-1, 1] at "
                                      f"label {e.label}")
                return _round_bits(_MATH[e.fn](a), self.bits(e.label))
        raise TypeError(f"not an expression: {e!r}")

    def compare(self, c) -> bool:
        a = self.expr(c.lhs)
        b = self.expr(c.rhs)
        match c.op:
            case "<": return a < b
            case "<=": return a <= b
            case ">": return a > b
            case ">=": return a >= b
            case "==": return a == b
            case "!=": return a != b
        raise ValueError(f"unknown comparison {c.op!r}")

    def cmd(self, c):
        match c:
            case None:
                return
            case Seq():
                self.cmd(c.first)
                self.cmd(c.rest)
            case Assign():
                value = self.expr(c.expr)
                self.env[c.var] = _round_bits(value, self.bits(c.label))
                self.assigned.add(c.var)
            case RequireNsb():
                if self.on_require is not None:
                    self.on_require(c, self.env[c.var])
            case If():
                if self.compare(c.cond):
                    self.cmd(c.then)
                else:
                    self.cmd(c.orelse)
            case While():
                spins = 0
                while self.compare(c.cond):
                    spins += 1
                    if spins > self.loop_limit:
                        raise NonTermination(
                            f"loop at label {c.label} exceeded "
                            f"{self.loop_limit} iterations")
                    self.cmd(c.body)
            case _:
                raise TypeError(f"not a command: {c!r}")

    def run(self) -> dict[str, mpmath.mpf]:
        self.cmd(self.prog.body)
        return self.env


def interpret(prog: Program, inputs: Mapping[str, Fraction],
              nsb_values: Optional[Mapping[str, int]], ref_bits: int,
              on_require: Optional[Callable] = None,
              loop_limit: int = LOOP_LIMIT) -> dict[str, mpmath.mpf]:
    """Run once; ``nsb_values`` maps ``nsb_l<k>`` to bit counts (None for
    the reference semantics).  Returns the final variable environment."""
    nsb_of = None
    if nsb_values is not None:
        nsb_of = lambda label: nsb_values.get(f"nsb_l{label}", 0)
    with mpmath.workprec(ref_bits):
        return _Interp(prog, inputs, nsb_of, on_require, loop_limit).run()


# --- Sampling and checking ------------------------------------------------

@dataclass
class RequireCheck:
    var: str
    bits: int
    label: int
    samples: int = 0
    failures: int = 0
    zero_fallbacks: int = 0
    max_rel_error: Fraction = Fraction(0)
    range_ufp: int = 0

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def as_dict(self) -> dict:
        err = self.max_rel_error
        return {
            "var": self.var,
            "bits": self.bits,
            "label": self.label,
            "samples": self.samples,
            "failures": self.failures,
            "zero_fallbacks": self.zero_fallbacks,
            "max_rel_error": float(err),
            "log2_rel_error": math.log2(err) if err > 0 else None,
            "log2_threshold": -self.bits,
            "passed": self.passed,
        }


@dataclass
class ValidationReport:
    samples: int
    seed: int
    ref_bits: int
    checks: list[RequireCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "schema": 1,
            "samples": self.samples,
            "seed": self.seed,
            "ref_bits": self.ref_bits,
            "passed": self.passed,
            "checks": [c.as_dict() for c in self.checks],
        }


def _sample_inputs(ranges: Mapping[str, tuple[Fraction, Fraction]],
                   rng: random.Random) -> dict[str, Fraction]:
    out = {}
    for name, (lo, hi) in sorted(ranges.items()):
        out[name] = lo + (hi - lo) * Fraction(rng.random())
    return out


def check_error_model(prog: Program, nsb_values: Mapping[str, int],
                      requirements: list[dict],
                      input_ranges: Mapping[str, tuple[Fraction, Fraction]],
                      samples: int = DEFAULT_SAMPLES, seed: int = 42,
                      ref_bits: int = DEFAULT_REF_BITS) -> ValidationReport:
    """Sample, run both semantics, and compare at every assertion point."""
    max_nsb = max((v for k, v in nsb_values.items()
                   if k.startswith("nsb_l")), default=0)
    if ref_bits < 4 * max_nsb:
        raise ValueError(f"reference precision {ref_bits} is too close to "
                         f"the largest demand {max_nsb}; use >= {4 * max_nsb}")
    free = syntax.free_variables(prog)
    missing = free - set(input_ranges)
    if missing:
        raise ValueError("no sampling range for input(s): "
                         + ", ".join(sorted(missing)))

    checks: dict[int, RequireCheck] = {}
    for r in requirements:
        checks[r["label"]] = RequireCheck(r["var"], r["bits"], r["label"],
                                          range_ufp=r.get("range_ufp") or 0)

    rng = random.Random(seed)
    report = ValidationReport(samples, seed, ref_bits)
    for _ in range(samples):
        inputs = _sample_inputs(input_ranges, rng)
        ref_hits: list[tuple[int, Fraction]] = []
        interpret(prog, inputs, None, ref_bits,
                  lambda c, v: ref_hits.append((c.label, mpf_to_fraction(v))))
        tuned_hits: list[tuple[int, Fraction]] = []
        interpret(prog, inputs, nsb_values, ref_bits,
                  lambda c, v: tuned_hits.append((c.label, mpf_to_fraction(v))))
        seen_pairs = min(len(ref_hits), len(tuned_hits))
        diverged = len(ref_hits) != len(tuned_hits)
        for (rl, rv), (tl, tv) in zip(ref_hits[:seen_pairs],
                                      tuned_hits[:seen_pairs]):
            check = checks.get(rl)
            if check is None or rl != tl:
                diverged = True
                continue
            check.samples += 1
            n = check.bits
            if rv == 0:
                # no relative scale: check absolutely against the variable's
                # range magnitude, normalized so the threshold stays 2**-n
                check.zero_fallbacks += 1
                rel = abs(tv) / Fraction(2) ** check.range_ufp
            else:
                rel = abs(tv - rv) / abs(rv)
            ok = rel < Fraction(1, 2 ** n)
            if not ok:
                check.failures += 1
            if rel > check.max_rel_error:
                check.max_rel_error = rel
        if diverged:
            for check in checks.values():
                check.failures += 1
    report.checks = list(checks.values())
    return report
