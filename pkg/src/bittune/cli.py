"""Command-line front end: `bittune tune` and `bittune validate`."""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from typing import NoReturn, Optional

from . import (constraints, lp_format, policy, ranges, solver, syntax,
               tuner, validate)
from .simplex import Infeasible, Unbounded


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bittune",
        description="Per-label floating-point bit-width tuning for small "
                    "imperative programs.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", help="solve for minimal bit widths")
    t.add_argument("program", help="source file to tune")
    t.add_argument("--method", choices=("ilp", "pi"), default="ilp",
                   help="fixed worst-case carries (ilp) or policy-iterated "
                        "min/max carries (pi)")
    t.add_argument("--threshold", metavar="EPS",
                   help="accuracy like 1e-6, converted to bits for --var")
    t.add_argument("--nsb", type=int, metavar="N",
                   help="bits demanded of --var directly")
    t.add_argument("--var", metavar="NAME",
                   help="variable the --threshold/--nsb demand applies to")
    t.add_argument("--phi", type=int, default=constraints.DEFAULT_PHI,
                   help="bits charged to elementary function calls")
    t.add_argument("--prec-max", type=int,
                   default=constraints.DEFAULT_PREC_MAX,
                   help="precision ceiling for every label")
    t.add_argument("--ranges", metavar="TOML",
                   help="input variable ranges ([inputs] name = [lo, hi])")
    t.add_argument("--ufp-table", metavar="TSV",
                   help="per-label leading-bit-position overrides")
    t.add_argument("--solver", choices=("simplex", "kleene", "both"),
                   default="simplex",
                   help="LP backend; kleene/both only for --method ilp")
    t.add_argument("--max-pi-iters", type=int,
                   default=policy.DEFAULT_MAX_ITERS)
    t.add_argument("--emit-lp", metavar="FILE")
    t.add_argument("--dump-solution", metavar="FILE")
    t.add_argument("--dump-ast", metavar="FILE")
    t.add_argument("--trace", metavar="FILE",
                   help="policy-iteration trace (pi only)")
    t.add_argument("--report", metavar="FILE")
    t.add_argument("--emit-annotated", metavar="FILE")
    t.set_defaults(func=cmd_tune)

    v = sub.add_parser("validate",
                       help="check a tuned solution against a high-precision "
                            "reference on sampled inputs")
    v.add_argument("program", help="source file (display only when the "
                                   "solution embeds its program)")
    v.add_argument("--solution", required=True, metavar="JSON")
    v.add_argument("--samples", type=int, default=validate.DEFAULT_SAMPLES)
    v.add_argument("--seed", type=int, default=42)
    v.add_argument("--ref-bits", type=int, default=validate.DEFAULT_REF_BITS)
    v.add_argument("--report", metavar="FILE")
    v.set_defaults(func=cmd_validate)
    return p


def _usage_exit(msg: str) -> NoReturn:
    print(f"error: {msg}", file=sys.stderr)
    raise SystemExit(2)


def _load_program(path: str) -> syntax.Program:
    with open(path, "r", encoding="utf-8") as fh:
        return syntax.parse(fh.read())


def _append_demand(prog: syntax.Program, args) -> syntax.Program:
    if args.nsb is not None and args.threshold is not None:
        _usage_exit("use either --threshold or --nsb, not both")
    if args.nsb is not None:
        n = args.nsb
    else:
        n = tuner.bits_for_threshold(Fraction(args.threshold))
    stmts = syntax.statements(prog)
    stmts.append(syntax.RequireNsb(var=args.var, n=n))
    return syntax.label_program(syntax.Program(body=syntax._seq_of(stmts)))


def _range_ufp(rmap, label: int) -> Optional[int]:
    try:
        return rmap.ufp_of(label)
    except ranges.ZeroUfp:
        return 0
    except (ranges.MissingRange, ranges.UnboundedRange):
        return None


def _solution_json(prog, system, sol, rmap, inputs, pol: Optional[str]):
    return {
        "schema": 1,
        "method": system.mode,
        "objective": sol.objective,
        "values": sol.values,
        "policy": pol,
        "phi": system.phi,
        "prec_max": system.prec_max,
        "n_labels": prog.n_labels,
        "source": syntax.emit(prog),
        "requirements": [
            {"var": r.var, "bits": r.bits, "label": r.label,
             "def_label": r.def_label, "range_ufp": _range_ufp(rmap, r.label)}
            for r in system.requirements
        ],
        "inputs": {name: [str(iv.lo), str(iv.hi)]
                   for name, iv in inputs.items()},
    }


def _write_json(path: str, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=False)
        fh.write("\n")


def cmd_tune(args) -> int:
    prog = _load_program(args.program)
    if args.var:
        if args.threshold is None and args.nsb is None:
            _usage_exit("--var needs --threshold or --nsb")
        prog = _append_demand(prog, args)
    elif args.threshold or args.nsb:
        _usage_exit("--threshold/--nsb need --var NAME")

    inputs = ranges.load_input_ranges(args.ranges) if args.ranges else {}
    rmap = ranges.analyze_ranges(prog, inputs)
    if args.ufp_table:
        table = ranges.load_ufp_table(args.ufp_table)
        ranges.apply_ufp_overrides(rmap, table, prog.n_labels)

    cfg = constraints.GenConfig(phi=args.phi, prec_max=args.prec_max)
    if args.dump_ast:
        _write_json(args.dump_ast, syntax.ast_to_json(prog))

    pol_str = None
    trace = None
    if args.method == "ilp":
        system = constraints.gen_ilp(prog, rmap, cfg)
        if not system.requirements:
            _usage_exit("program has no accuracy demands; add "
                        "require_nsb(...) or pass --var")
        sol = solver.solve_ilp(system, args.solver)
        resolved = system.rows
    else:
        system = constraints.gen_pi(prog, rmap, cfg)
        if not system.requirements:
            _usage_exit("program has no accuracy demands; add "
                        "require_nsb(...) or pass --var")
        if args.solver != "simplex":
            _usage_exit("--solver kleene/both applies to --method ilp "
                        "(policied rows are not order-preserving)")
        sol, trace = policy.tune_pi(system, args.max_pi_iters)
        pol_str = "".join(trace.iterations[trace.winner].policy)
        resolved = constraints.resolve_policy(
            system, trace.iterations[trace.winner].policy)

    if args.emit_lp:
        with open(args.emit_lp, "w", encoding="utf-8") as fh:
            lp_format.write_lp(fh, system, resolved, pol_str)
    if args.dump_solution:
        _write_json(args.dump_solution,
                    _solution_json(prog, system, sol, rmap, inputs, pol_str))
    if args.trace:
        if trace is None:
            _usage_exit("--trace applies to --method pi")
        _write_json(args.trace, trace.as_dict())

    report = tuner.build_report(prog, system, sol, rmap, pol_str,
                                trace.objectives() if trace else None)
    if args.report:
        _write_json(args.report, report.as_dict())
    if args.emit_annotated:
        with open(args.emit_annotated, "w", encoding="utf-8") as fh:
            fh.write(tuner.annotated_source(prog, sol))

    fmts = " ".join(f"{k}={v}" for k, v in report.format_counts.items())
    print(f"method {system.mode}: {len(report.assignments)} assignments, "
          f"{report.bits_after} of {report.bits_before} bits "
          f"({report.bit_savings_percent}% saved)")
    print(f"formats: {fmts} ({report.ieee_savings_percent}% saved vs "
          f"all-double)")
    if trace is not None:
        objs = " -> ".join(str(o) for o in trace.objectives())
        print(f"policy {pol_str or '(no carry sites)'}: {objs}, "
              f"stopped: {trace.stopped}")
    return 0


def cmd_validate(args) -> int:
    with open(args.solution, "r", encoding="utf-8") as fh:
        sol = json.load(fh)
    source = sol.get("source")
    if source is None:
        with open(args.program, "r", encoding="utf-8") as fh:
            source = fh.read()
    prog = syntax.parse(syntax.strip_annotations(source))
    if sol.get("n_labels") not in (None, prog.n_labels):
        _usage_exit(f"solution was made for {sol['n_labels']} labels "
                    f"but the program has {prog.n_labels}")
    input_ranges = {name: (Fraction(lo), Fraction(hi))
                    for name, (lo, hi) in sol.get("inputs", {}).items()}
    report = validate.check_error_model(
        prog, sol["values"], sol["requirements"], input_ranges,
        samples=args.samples, seed=args.seed, ref_bits=args.ref_bits)
    if args.report:
        _write_json(args.report, report.as_dict())
    for c in report.checks:
        err = c.as_dict()["log2_rel_error"]
        shown = "exact" if err is None else f"2^{err:.1f}"
        status = "PASS" if c.passed else f"FAIL ({c.failures} samples)"
        print(f"{c.var} needs {c.bits} bits: max error {shown} vs "
              f"2^-{c.bits} over {c.samples} runs -> {status}")
    print("validation " + ("PASSED" if report.passed else "FAILED"))
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (syntax.ParseError, ranges.MalformedTable, ranges.UnknownLabel,
            ranges.UseBeforeAssign, ranges.DomainError,
            ranges.DivisionByZeroRange) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ranges.MissingRange, ranges.UnboundedRange,
            ranges.ZeroUfp) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("hint: supply --ranges for inputs and/or --ufp-table for "
              "labels the range analysis cannot bound", file=sys.stderr)
        return 2
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        if exc.witness:
            print("driven by: " + ", ".join(exc.witness), file=sys.stderr)
        return 2
    except (Unbounded, solver.NonIntegralILP) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return 3
    except (validate.NonTermination, validate.DomainFault,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
