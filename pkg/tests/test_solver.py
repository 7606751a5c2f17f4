from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from unitsym import solver
from unitsym.constraints import Atom, Constraint, LinExpr

from oracles import brute_force_model, random_system

x, y, n = LinExpr.var("x"), LinExpr.var("y"), LinExpr.var("len(str)")


def test_unit_tree_node2_system() -> None:
    c = Constraint.of(
        Atom.compare(x, ">=", LinExpr.of(10)),
        Atom.compare(x - y, "==", LinExpr.of(5)),
        Atom.compare(n, ">", LinExpr.of(10)),
    )
    model = solver.satisfiable(c)
    assert model is not None and c.holds(model)


def test_empty_conjunction() -> None:
    assert solver.satisfiable(Constraint()) == {}


def test_contradiction() -> None:
    c = Constraint.of(Atom.compare(x, "<", LinExpr.of(0)), Atom.compare(x, ">", LinExpr.of(0)))
    assert solver.satisfiable(c) is None


def test_parity_after_substitution_is_unsat() -> None:
    z = LinExpr.var("z")
    c = Constraint.of(
        Atom.compare(z, "==", LinExpr.of(0)),
        Atom.compare(x.scale(2) - y.scale(2) - z, "==", LinExpr.of(5)),
    )
    assert solver.satisfiable(c) is None


def test_chained_equalities_without_integer_point() -> None:
    # x + 6n = 7 and x + 3n = 2 force 3n = 5
    c = Constraint.of(
        Atom.compare(x.scale(2) + n.scale(12), "==", LinExpr.of(14)),
        Atom.compare(x.scale(-3) - n.scale(9), "==", LinExpr.of(-6)),
    )
    assert solver.satisfiable(c) is None


def test_lengths_are_non_negative() -> None:
    c = Constraint.of(Atom.compare(n, "<", LinExpr.of(3)))
    model = solver.satisfiable(c)
    assert model is not None and 0 <= model["len(str)"] < 3
    assert solver.satisfiable(Constraint.of(Atom.compare(n, "<", LinExpr.of(0)))) is None


def test_length_upper_bound() -> None:
    c = Constraint.of(Atom.compare(n, ">", LinExpr.of(solver.MAX_STRING_LEN)))
    assert solver.satisfiable(c) is None


def test_preferred_point_is_followed() -> None:
    c = Constraint.of(Atom.compare(x, ">=", LinExpr.of(10)))
    assert solver.satisfiable(c, prefer={"x": 500}) == {"x": 500}
    assert solver.satisfiable(c) == {"x": 10}


def test_disequality_chain() -> None:
    atoms = [Atom.compare(x, "!=", LinExpr.of(k)) for k in range(-5, 6)]
    atoms.append(Atom.compare(x, ">=", LinExpr.of(-5)))
    atoms.append(Atom.compare(x, "<=", LinExpr.of(6)))
    assert solver.satisfiable(Constraint.of(*atoms)) == {"x": 6}


def test_parity_infeasible_over_integers() -> None:
    # 2x == 2y + 1 has rational but no integer solutions
    c = Constraint.of(Atom.compare(x.scale(2), "==", y.scale(2) + 1))
    assert solver.Solver(int_box=(-50, 50)).solve(c) is None


def test_non_integer_coefficient_is_out_of_domain() -> None:
    c = Constraint.of(Atom(LinExpr((("x", 0.5),), 0), "<"))
    with pytest.raises(solver.DomainExceeded):
        solver.satisfiable(c)


def test_materialize_string() -> None:
    s = solver.materialize_string(11)
    assert len(s) == 11 and s.isalnum()
    assert solver.materialize_string(0) == b""
    assert solver.materialize_string(11, seed=3) == solver.materialize_string(11, seed=3)
    with pytest.raises(solver.LengthOutOfRange):
        solver.materialize_string(4097)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32))
def test_models_are_sound_and_complete_on_small_box(seed: int) -> None:
    c, names, radius = random_system(random.Random(seed))
    model = solver.satisfiable(c)
    if model is not None:
        assert all(a.holds(model) for a in c.atoms)
        assert all(v >= 0 for k, v in model.items() if k.startswith("len("))
    if brute_force_model(c, names, radius) is not None:
        assert model is not None
