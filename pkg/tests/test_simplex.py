"""Exact-rational simplex: optima, infeasibility witnesses, edge cases."""

from fractions import Fraction

import pytest

from bittune.constraints import Inequality, LinTerm
from bittune.simplex import Infeasible, LPResult, Unbounded, solve_lp


def row(tag, const, **coefs):
    terms = tuple(LinTerm(v, c) for v, c in coefs.items())
    return Inequality(terms, const, None, tag)


def test_single_lower_bound():
    lp = solve_lp([row("ground", 3, x=1)], {"x": 1}, ["x"])
    assert lp.values["x"] == 3
    assert lp.objective == 3
    assert isinstance(lp, LPResult)


def test_chained_demands_settle_to_least_point():
    rows = [row("ground", 3, x=1), row("step", 2, y=1, x=-1)]
    lp = solve_lp(rows, {"x": 1, "y": 1}, ["x", "y"])
    assert lp.values == {"x": Fraction(3), "y": Fraction(5)}
    assert lp.objective == 8


def test_fractional_vertex_is_exact():
    lp = solve_lp([row("half", 3, x=2, y=2)], {"x": 1, "y": 1}, ["x", "y"])
    assert lp.objective == Fraction(3, 2)
    assert 2 * lp.values["x"] + 2 * lp.values["y"] == 3


def test_sevenths_survive_exactly():
    lp = solve_lp([row("r", 1, x=7)], {"x": 1}, ["x"])
    assert lp.values["x"] == Fraction(1, 7)


def test_equality_encoded_as_opposite_pair():
    rows = [row("ge", 4, x=1), row("le", -4, x=-1)]
    lp = solve_lp(rows, {"x": 1}, ["x"])
    assert lp.values["x"] == 4


def test_variable_without_rows_stays_zero():
    lp = solve_lp([row("r", 2, x=1)], {"x": 1, "z": 1}, ["x", "z"])
    assert lp.values["z"] == 0


def test_undeclared_variable_is_rejected():
    with pytest.raises(ValueError):
        solve_lp([row("r", 1, w=1)], {"x": 1}, ["x"])


def test_conflicting_bounds_carry_a_witness():
    rows = [row("need-five", 5, x=1), row("cap-two", -2, x=-1)]
    with pytest.raises(Infeasible) as exc:
        solve_lp(rows, {"x": 1}, ["x"])
    assert exc.value.witness      # names at least one offending row


def test_positive_constant_row_is_immediately_infeasible():
    with pytest.raises(Infeasible) as exc:
        solve_lp([Inequality((), 1, None, "impossible")], {}, [])
    assert "impossible" in exc.value.witness


def test_nonpositive_constant_rows_are_dropped():
    rows = [Inequality((), 0, None, "trivial"),
            Inequality((), -5, None, "slack"),
            row("r", 2, x=1)]
    assert solve_lp(rows, {"x": 1}, ["x"]).values["x"] == 2


def test_unbounded_direction_is_detected():
    with pytest.raises(Unbounded):
        solve_lp([row("r", 1, x=1)], {"x": -1}, ["x"])


def test_redundant_rows_at_one_vertex_terminate():
    rows = [row("a", 2, x=1, y=1), row("b", 2, x=1, y=1),
            row("c", 4, x=2, y=2), row("dx", 1, x=1), row("dy", 1, y=1)]
    lp = solve_lp(rows, {"x": 1, "y": 1}, ["x", "y"])
    assert lp.objective == 2
    assert lp.values["x"] == 1 and lp.values["y"] == 1


def test_ladder_of_thirty_steps_is_integral():
    names = [f"nsb_l{k}" for k in range(30)]
    rows = [row("ground", 0, **{names[0]: 1})]
    rows += [row(f"step{k}", 1, **{names[k]: 1, names[k - 1]: -1})
             for k in range(1, 30)]
    lp = solve_lp(rows, {v: 1 for v in names}, names)
    assert lp.objective == sum(range(30))
    assert all(lp.values[v].denominator == 1 for v in names)
    assert [int(lp.values[v]) for v in names] == list(range(30))
    assert lp.pivots > 0


def test_mixed_sign_constants_take_both_setup_paths():
    # one row starts from an artificial basis, the other from its surplus
    rows = [row("pos", 4, x=1, y=1), row("neg", -3, x=-1)]
    lp = solve_lp(rows, {"x": 2, "y": 1}, ["x", "y"])
    assert lp.values["x"] == 0 and lp.values["y"] == 4
