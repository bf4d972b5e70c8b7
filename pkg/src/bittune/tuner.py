"""Turning solved bit demands into user-facing output.

Covers the accuracy-threshold conversion, the smallest-IEEE-format choice
per assignment, the all-double baseline comparison, and the JSON report.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from . import syntax
from .constraints import ConstraintSystem, nsb_var
from .ranges import RangeMap
from .solver import Solution

#: IEEE-754 binary formats by significand length (including the hidden bit).
FORMATS = (("half", 11), ("single", 24), ("double", 53), ("long_double", 113))

BASELINE_BITS = 53              # every value double precision


def bits_for_threshold(threshold: Fraction) -> int:
    """Least n with 2**-n < threshold, by exact integer comparison."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    n = 0
    # 2**-n < p/q  <=>  q < p * 2**n
    while threshold.denominator >= threshold.numerator * 2 ** n:
        n += 1
    return n


def threshold_to_nsb(k: int) -> int:
    """Bits needed for an accuracy demand of 10**-k."""
    if k < 0:
        raise ValueError("negative decimal exponent")
    return bits_for_threshold(Fraction(1, 10 ** k))


def to_ieee_format(nsb: int) -> Optional[str]:
    """Smallest standard format whose significand holds nsb bits."""
    for name, bits in FORMATS:
        if nsb <= bits:
            return name
    return None


def format_bits(name: Optional[str], nsb: int) -> int:
    for fname, bits in FORMATS:
        if fname == name:
            return bits
    return nsb      # wider than any standard format: count the raw demand


@dataclass
class FormatAssignment:
    label: int
    var: str
    nsb: int
    fmt: Optional[str]


@dataclass
class TuningReport:
    method: str
    objective: int
    assignments: list[FormatAssignment]
    bits_before: int
    bits_after: int
    ieee_bits_before: int
    ieee_bits_after: int
    format_counts: dict[str, int]
    per_variable: dict[str, dict]
    requirements: list[dict]
    unconstrained_labels: list[int]
    policy: Optional[str] = None
    pi_objectives: Optional[list[int]] = None

    @property
    def bit_savings_percent(self) -> float:
        if not self.bits_before:
            return 0.0
        return round(100.0 * (1 - self.bits_after / self.bits_before), 1)

    @property
    def ieee_savings_percent(self) -> float:
        if not self.ieee_bits_before:
            return 0.0
        return round(
            100.0 * (1 - self.ieee_bits_after / self.ieee_bits_before), 1)

    def as_dict(self) -> dict:
        return {
            "schema": 1,
            "method": self.method,
            "objective_all_labels": self.objective,
            "assignment_bits_total": self.bits_after,
            "bits_before": self.bits_before,
            "bit_savings_percent": self.bit_savings_percent,
            "ieee_bits_after": self.ieee_bits_after,
            "ieee_savings_percent": self.ieee_savings_percent,
            "format_counts": self.format_counts,
            "assignments": [
                {"label": a.label, "var": a.var, "nsb": a.nsb,
                 "format": a.fmt or "none"}
                for a in self.assignments
            ],
            "variables": self.per_variable,
            "requirements": self.requirements,
            "unconstrained_labels": self.unconstrained_labels,
            "policy": self.policy,
            "pi_objectives": self.pi_objectives,
        }


def build_report(prog: syntax.Program, system: ConstraintSystem,
                 solution: Solution, rmap: RangeMap,
                 policy: Optional[str] = None,
                 pi_objectives: Optional[list[int]] = None) -> TuningReport:
    assigns = syntax.assignment_labels(prog)
    entries = []
    counts = {name: 0 for name, _ in FORMATS}
    counts["none"] = 0
    per_var: dict[str, dict] = {}
    bits_after = 0
    ieee_after = 0
    for label, var in assigns:
        n = solution.values[nsb_var(label)]
        fmt = to_ieee_format(n)
        entries.append(FormatAssignment(label, var, n, fmt))
        counts[fmt or "none"] += 1
        bits_after += n
        ieee_after += format_bits(fmt, n)
        worst = per_var.setdefault(var, {"nsb": 0, "format": "half"})
        if n >= worst["nsb"]:
            worst["nsb"] = n
            worst["format"] = to_ieee_format(n) or "none"
    if not counts["none"]:
        del counts["none"]
    return TuningReport(
        method=system.mode,
        objective=solution.objective,
        assignments=entries,
        bits_before=BASELINE_BITS * len(assigns),
        bits_after=bits_after,
        ieee_bits_before=BASELINE_BITS * len(assigns),
        ieee_bits_after=ieee_after,
        format_counts=counts,
        per_variable=per_var,
        requirements=[
            {"var": r.var, "bits": r.bits, "label": r.label,
             "def_label": r.def_label}
            for r in system.requirements
        ],
        unconstrained_labels=sorted(rmap.unbounded_labels()),
        policy=policy,
        pi_objectives=pi_objectives,
    )


def annotated_source(prog: syntax.Program, solution: Solution) -> str:
    nsb_of = {label: solution.values[nsb_var(label)]
              for label in range(prog.n_labels)}
    return syntax.emit_annotated(prog, nsb_of)
