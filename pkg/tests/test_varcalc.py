import random

import pytest
import sympy as sp
from hypothesis import given, strategies as st

from orbita.jetspace import JetContext
from orbita.liegroup import GroupAction, LieGroupChart, MovingFrame, invariant_contact_basis
from orbita.reduction import ReducedChart, syzygies
from orbita.symcore import is_zero, parse, sym
from orbita.varcalc import (
    TotalDiffOperator, VariationalProblem, a_operators, euler_operator, horizontal_table, ibp_table,
    invariant_el_system, rctx_total_derivative, section_coefficient, upstairs_euler,
)

from .generators import poly

Y, V, V1 = sym("y"), sym("v"), sym("v[1]")


@pytest.fixture(scope="module")
def se2_ops(se2):
    table = horizontal_table(se2.chart, se2.basis, se2.r_o)
    rules = ibp_table(se2.chart, se2.basis, se2.r_o, table)
    A = a_operators(se2.chart, se2.basis, se2.r_o, rules)
    return table, rules, A


def ops(rc):
    D = lambda e, i: rctx_total_derivative(rc, e, i)
    mul = lambda f: TotalDiffOperator.multiplication(rc.rctx.k, parse(f) if isinstance(f, str) else f, D)
    return mul, TotalDiffOperator.derivative(rc.rctx.k, 1, D)


# -- Euler operator ---------------------------------------------------------------

@pytest.mark.parametrize("L,expected", [("v", "1"), ("v[1]^2/2", "-v[1,1]"), ("v^2/2", "v"), ("y", "0")])
def test_euler_operator_examples(se2, L, expected):
    assert is_zero(euler_operator(se2.chart, parse(L), 0) - parse(expected))


@given(seed=st.integers(0, 2**32))
def test_euler_operator_kills_divergences(se2, r3, seed):
    rng = random.Random(seed)
    for rc in (se2.chart, r3.chart):
        syms = list(rc.y) + rc.rctx.coordinates(2)[rc.rctx.k:]
        F = poly(rng, rng.sample(syms, 3), terms=3, degree=2)
        i = rng.randint(1, rc.rctx.k)
        div = rctx_total_derivative(rc, F, i)
        for a in range(rc.rctx.q):
            assert is_zero(euler_operator(rc, div, a))


# -- operators ------------------------------------------------------------------------

def test_leibniz_expansion_matches_double_application(se2):
    mul, Dy = ops(se2.chart)
    B = mul("v[1]") + mul("v") @ Dy
    square = B @ B
    f = parse("v[1]*y + v^2")
    assert is_zero(square(f) - B(B(f)))
    assert square.order == 2


@given(st.sampled_from(["v", "y*v[1]", "v[1,1] + y^2"]), st.sampled_from(["v[1]", "y", "v*y"]))
def test_operator_composition_is_associative(se2, f, g):
    mul, Dy = ops(se2.chart)
    P, Q, R = mul(f) @ Dy, mul(g) + Dy, Dy @ mul(f)
    assert ((P @ Q) @ R).equals(P @ (Q @ R))
    h = parse("v*v[1] + y")
    assert is_zero(((P @ Q) @ R)(h) - P(Q(R(h))))


# -- horizontal table and integration by parts ------------------------------------------

def test_se2_horizontal_table(se2_ops):
    table, _, _ = se2_ops
    rows = table.rows
    assert is_zero(rows[(0, ())][(0, (1,), 1)] - 1 / V)
    assert is_zero(rows[(0, (1,))][(0, (), 1)] + Y**2 / V)
    assert is_zero(rows[(0, (1,))][(0, (1, 1), 1)] + 1 / V)
    assert is_zero(rows[(0, (1, 1))][(0, (), 1)] + Y)
    assert is_zero(rows[(0, (1, 1))][(0, (1, 1), 1)] + V1 / V)
    assert is_zero(rows[(0, (1, 1))][(0, (1, 1, 1), 1)] + 1 / V)


def test_se2_integration_by_parts_rules(se2, se2_ops):
    _, rules, _ = se2_ops
    mul, Dy = ops(se2.chart)
    second = rules[(0, (1, 1))].operators
    assert second[(0, (1,))].equals(-(mul("v[1]") + mul("v") @ Dy))
    assert second[(0, ())].equals(mul("-y^2"))
    top = rules[(0, (1, 1, 1))].operators
    assert top[(0, (1, 1))].equals(-(mul("2*v[1]") + mul("v") @ Dy))
    assert top[(0, ())].equals(mul("-v*y"))


def test_se2_a_operator(se2, se2_ops):
    _, _, A = se2_ops
    mul, Dy = ops(se2.chart)
    B = mul("v[1]") + mul("v") @ Dy
    expected = (B @ B + mul("y^2")) @ (mul("2*v[1]") + mul("v") @ Dy) - mul("v*y")
    assert A[0][0].equals(expected)


def test_classical_integration_by_parts_for_the_trivial_group():
    G = LieGroupChart([], [], [], [])
    action = GroupAction(G, JetContext(("x",), ("u",), 0), ["x"], ["u"])
    frame = MovingFrame([], 0)
    rc = ReducedChart(action, frame, ["y"], ["v"], ["x"], ["u"])
    basis = invariant_contact_basis(action, frame, 2)
    rules = ibp_table(rc, basis, 2)
    mul, Dy = ops(rc)
    assert rules[(0, (1,))].operators[(0, ())].equals(-Dy)
    assert a_operators(rc, basis, 2, rules)[0][0].equals(mul("1"))


# -- invariant Euler-Lagrange equations ------------------------------------------------------

def test_curvature_lagrangian_gives_trivial_system(se2, se2_ops):
    _, _, A = se2_ops
    assert invariant_el_system(VariationalProblem(se2.chart, "y"), A) == [0]


def test_se2_el_matches_upstairs_euler_operator(se2, se2_ops):
    _, _, A = se2_ops
    rc = se2.chart
    Lbar = parse("v^2/2")
    reduced = invariant_el_system(VariationalProblem(rc, Lbar), A)[0]
    # upstairs Lagrangian: Lbar dy = Lbar * (D_x y) dx
    det = sp.Matrix(rc.jacobian).det()
    upstairs = upstairs_euler(rc.ctx, rc.lift(Lbar) * det, 0)
    c = section_coefficient(rc, se2.basis)[0][0]
    assert is_zero(upstairs - c * det * rc.lift(reduced))


def test_variational_problem_rejects_upstairs_symbols(se2):
    with pytest.raises(ValueError):
        VariationalProblem(se2.chart, "u[1]")


def test_el_system_ignores_syzygy_multiples(r3):
    rc = r3.chart
    A = a_operators(rc, r3.basis, r3.r_o)
    L = parse("v[a=1]*v[a=1; I=2] + y[1]*v[a=3]^2")
    base = invariant_el_system(VariationalProblem(rc, L), A)
    relation = syzygies(rc).equations[0]
    other = invariant_el_system(VariationalProblem(rc, L + parse("y[1]*v[a=2]") * relation), A)
    for a, b in zip(base, other):
        assert is_zero(rc.lift(a - b))
