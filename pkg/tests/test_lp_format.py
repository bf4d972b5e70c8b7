"""CPLEX LP text export."""

import io

import pytest

from bittune import ranges, syntax
from bittune.constraints import (
    ConstraintSystem, Inequality, LinTerm, gen_ilp, gen_pi, resolve_policy,
)
from bittune.lp_format import write_lp
from bittune.ranges import Interval


def render(system, **kwargs):
    buf = io.StringIO()
    write_lp(buf, system, **kwargs)
    return buf.getvalue()


def test_fixed_carry_system_renders_exactly():
    prog = syntax.parse("x = 5.0; y = 3.0; z = x + y; require_nsb(z, 15);")
    system = gen_ilp(prog, ranges.analyze_ranges(prog))
    bounds = "".join(f" 0 <= nsb_l{k} <= 200\n" for k in range(12))
    assert render(system) == (
        "\\ bittune: minimize total demanded bits\n"
        "Minimize\n"
        " obj: nsb_l0 + nsb_l1 + nsb_l2 + nsb_l3 + nsb_l4 + nsb_l5 + nsb_l6 +\n"
        "      nsb_l7 + nsb_l8 + nsb_l9 + nsb_l10 + nsb_l11\n"
        "Subject To\n"
        " c1: nsb_l0 - nsb_l1 >= 0\n"
        " c2: nsb_l2 - nsb_l3 >= 0\n"
        " c3: nsb_l1 - nsb_l4 >= 0\n"
        " c4: nsb_l3 - nsb_l5 >= 0\n"
        " c5: nsb_l4 - nsb_l6 >= 2\n"
        " c6: nsb_l5 - nsb_l6 >= 1\n"
        " c7: nsb_l6 - nsb_l7 >= 0\n"
        " c8: nsb_l7 >= 15\n"
        "Bounds\n" + bounds + "End\n")


def small_pi():
    prog = syntax.parse("z = x + y; require_nsb(z, 10);")
    rmap = ranges.analyze_ranges(prog, {"x": Interval(5, 5),
                                        "y": Interval(3, 3)})
    return gen_pi(prog, rmap)


def test_unresolved_carry_sites_cannot_be_exported():
    with pytest.raises(ValueError):
        render(small_pi())


def test_resolved_policy_export_keeps_doubled_coefficients():
    system = small_pi()
    text = render(system, rows=resolve_policy(system, ("B",)), policy="B")
    assert text.splitlines()[1] == "\\ policy: B"
    assert "2 nsb_l0 - nsb_l1 - nsb_l2 + nsbe_l0 >= 2" in text
    assert "nsbe_l5 <= 200" in text            # error widths share the box


def test_custom_header_name():
    prog = syntax.parse("x = 1.5; require_nsb(x, 4);")
    system = gen_ilp(prog, ranges.analyze_ranges(prog))
    text = render(system, name="probe")
    assert text.startswith("\\ probe: minimize total demanded bits\n")


def test_negative_terms_and_constants_render():
    system = ConstraintSystem(
        mode="ilp", n_labels=2,
        rows=[Inequality((LinTerm("nsb_l0", -1), LinTerm("nsb_l1", -3)),
                         -7, None, "cap")],
        sites=[], requirements=[], phi=2, prec_max=50)
    text = render(system)
    assert " c1: -nsb_l0 - 3 nsb_l1 >= -7\n" in text
