"""Policy iteration over the min/max-carry systems.

Start from the all-worst-case policy (every carry = 1), solve the policied
LP, then let the solution argue for cheaper carry branches: a branch line
evaluated at the demand coordinates (error widths zeroed, which can only
overestimate the line) that comes out strictly negative proves its
``max(line, 0)`` collapses to 0 at every feasible point, so switching the
site is a guaranteed win.  Switches never go back toward the worst case and
ties keep the incumbent, so policies form a strictly advancing sequence —
no cycles, and the objective strictly decreases until the process stops.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import solver
from .constraints import ConstraintSystem, Policy, all_c_policy
from .solver import Solution

DEFAULT_MAX_ITERS = 1000


@dataclass
class PIIteration:
    policy: tuple[str, ...]
    objective: int
    values: dict[str, int]


@dataclass
class PITrace:
    iterations: list[PIIteration]
    stopped: str          # policy-converged | no-improvement | iteration-limit
    winner: int           # index of the accepted iteration

    def objectives(self) -> list[int]:
        return [it.objective for it in self.iterations]

    def as_dict(self) -> dict:
        return {
            "schema": 1,
            "stopped": self.stopped,
            "winner": self.winner,
            "iterations": [
                {"policy": "".join(it.policy), "objective": it.objective}
                for it in self.iterations
            ],
        }


def improve_policy(system: ConstraintSystem, policy: Policy,
                   values: dict[str, int]) -> tuple[str, ...]:
    """One greedy improvement pass at a solved point (see module docstring
    for why zeroed error widths and strict negativity are required)."""
    point = {v: values[v] for v in system.nsb_variables()}
    out = []
    for site, cur in zip(system.sites, policy):
        a = site.affines["A"].evaluate(point, 0)
        b = site.affines["B"].evaluate(point, 0)
        new = cur
        if cur == "C":
            if a < 0 or b < 0:
                new = "A" if a <= b else "B"
        elif cur == "A":
            if b < a:
                new = "B"
        else:
            if a < b:
                new = "A"
        out.append(new)
    return tuple(out)


def tune_pi(system: ConstraintSystem,
            max_iters: int = DEFAULT_MAX_ITERS) -> tuple[Solution, PITrace]:
    """Iterate policied solves until no policy change or no objective gain.

    Returns the winning solution with its error widths refit (smallest
    total error width among optima with the same demand coordinates).
    """
    policy = all_c_policy(system)
    seen = {policy}
    iterations: list[PIIteration] = []
    best: Solution | None = None
    best_policy = policy
    winner = 0
    stopped = "iteration-limit"
    for _ in range(max_iters):
        sol = solver.solve_policied(system, policy)
        iterations.append(PIIteration(tuple(policy), sol.objective,
                                      sol.values))
        if best is not None and sol.objective >= best.objective:
            stopped = "no-improvement"
            break
        best = sol
        best_policy = policy
        winner = len(iterations) - 1
        new = improve_policy(system, policy, sol.values)
        if new == tuple(policy):
            stopped = "policy-converged"
            break
        if new in seen:
            raise RuntimeError(f"policy repeated: {''.join(new)}")
        seen.add(new)
        policy = new
    assert best is not None
    final = solver.refit_error_widths(system, best_policy, best)
    return final, PITrace(iterations, stopped, winner)
