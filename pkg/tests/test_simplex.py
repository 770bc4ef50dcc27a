"""Bundled solver tests: pinned examples, duels against the exact oracle."""

import math

import numpy as np
import pytest

from sparta import simplex
from sparta.lp import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    SizeLimitError,
)

import _lp_oracle as oracle


def test_single_bound_minimum():
    lp = LinearProgram(name="one-var")
    lp.add_variable("x", lb=3.0, obj=1.0)
    res = simplex.solve(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(3.0, abs=1e-9)


def test_two_variable_polygon_vertex():
    lp = LinearProgram(name="polygon")
    x = lp.add_variable("x", obj=1.0)
    y = lp.add_variable("y", obj=1.0)
    lp.add_constraint("c1", [(x, 1.0), (y, 2.0)], ">=", 4.0)
    lp.add_constraint("c2", [(x, 3.0), (y, 1.0)], ">=", 6.0)
    res = simplex.solve(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(2.8, abs=1e-9)
    assert res.x[x] == pytest.approx(1.6, abs=1e-9)
    assert res.x[y] == pytest.approx(1.2, abs=1e-9)


def test_contradictory_rows_infeasible():
    lp = LinearProgram(name="contradict")
    x = lp.add_variable("x", lb=-math.inf)
    lp.add_constraint("ge", [(x, 1.0)], ">=", 1.0)
    lp.add_constraint("le", [(x, 1.0)], "<=", 0.0)
    res = simplex.solve(lp)
    assert res.status == INFEASIBLE


def test_unbounded_direction():
    lp = LinearProgram(name="unbounded")
    lp.add_variable("x", obj=-1.0)
    res = simplex.solve(lp)
    assert res.status == UNBOUNDED


def test_objective_constant_carries_through():
    lp = LinearProgram(name="const")
    lp.objective_constant = 7.5
    x = lp.add_variable("x", lb=1.0, ub=2.0, obj=2.0)
    lp.add_constraint("r", [(x, 1.0)], "<=", 5.0)
    res = simplex.solve(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(9.5, abs=1e-9)


def test_equality_row():
    lp = LinearProgram(name="equality")
    x = lp.add_variable("x", ub=3.0, obj=2.0)
    y = lp.add_variable("y", obj=3.0)
    lp.add_constraint("sum", [(x, 1.0), (y, 1.0)], "=", 5.0)
    res = simplex.solve(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(12.0, abs=1e-9)
    assert res.x[0] == pytest.approx(3.0, abs=1e-8)
    assert res.x[1] == pytest.approx(2.0, abs=1e-8)


def test_free_variable():
    lp = LinearProgram(name="free")
    x = lp.add_variable("x", lb=-math.inf, ub=math.inf, obj=1.0)
    y = lp.add_variable("y", obj=1.0)
    lp.add_constraint("r", [(x, 1.0), (y, 1.0)], ">=", 2.0)
    res = simplex.solve(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(2.0, abs=1e-9)


def test_upper_bound_flips():
    lp = LinearProgram(name="flips")
    x = lp.add_variable("x", ub=4.0, obj=-1.0)
    y = lp.add_variable("y", ub=8.0, obj=-1.0)
    lp.add_constraint("cap", [(x, 1.0), (y, 1.0)], "<=", 10.0)
    res = simplex.solve(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-10.0, abs=1e-9)


def test_negative_lower_bound():
    lp = LinearProgram(name="neg-bound")
    lp.add_variable("x", lb=-5.0, obj=1.0)
    res = simplex.solve(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-5.0, abs=1e-9)


def test_degenerate_cycling_candidate():
    # Beale's classic cycling construction; anti-cycling must still finish.
    lp = LinearProgram(name="beale")
    x1 = lp.add_variable("x1", obj=-0.75)
    x2 = lp.add_variable("x2", obj=150.0)
    x3 = lp.add_variable("x3", obj=-0.02)
    x4 = lp.add_variable("x4", obj=6.0)
    lp.add_constraint("r1", [(x1, 0.25), (x2, -60.0), (x3, -0.04), (x4, 9.0)], "<=", 0.0)
    lp.add_constraint("r2", [(x1, 0.5), (x2, -90.0), (x3, -0.02), (x4, 3.0)], "<=", 0.0)
    lp.add_constraint("r3", [(x3, 1.0)], "<=", 1.0)
    res = simplex.solve(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-0.05, abs=1e-9)


def test_size_limit_enforced():
    lp = LinearProgram(name="too-big")
    for j in range(5):
        lp.add_variable(("x", j), obj=1.0)
    with pytest.raises(SizeLimitError):
        simplex.solve(lp, size_limit=4)


def test_deterministic_resolve():
    rng = np.random.default_rng(7)
    lp = oracle.random_lp(rng, max_vars=8, max_rows=8)
    first = simplex.solve(lp)
    second = simplex.solve(lp)
    assert first.status == second.status
    if first.status == OPTIMAL:
        assert first.objective == pytest.approx(second.objective, abs=1e-12)


def test_oracle_agrees_with_vertex_enumeration():
    # validates the rational-simplex oracle itself on exhaustively checkable LPs
    rng = np.random.default_rng(2024)
    for _ in range(30):
        lp = oracle.random_lp(rng, max_vars=4, max_rows=5, box_only=True)
        status_s, obj_s = oracle.oracle_solve(lp)
        status_v, obj_v = oracle.box_vertex_solve(lp)
        assert status_s == status_v
        if status_s == oracle.OPTIMAL:
            assert obj_s == pytest.approx(obj_v, abs=1e-6)


def test_duels_against_exact_oracle():
    failures = oracle.run_duels(40, seed=90125, max_vars=12, max_rows=12)
    assert not failures, "\n".join(failures)


def test_duel_wide_instance():
    # wider-than-tall duel, close to the production shape
    failures = oracle.run_duels(4, seed=11, max_vars=30, max_rows=10)
    assert not failures, "\n".join(failures)
