import pytest
from hypothesis import given, strategies as st

from orbita.exterior import DifferentialForm, form_is_zero, horizontal_class
from orbita.jetspace import total_derivative
from orbita.reduction import (
    CommutationFailure, NotYetFree, check_commutation, ideal_dimensions, in_span, invariant_total_derivative,
    reduced_contact_forms, reduced_ideal_generators, syzygies,
)
from orbita.symcore import is_zero, parse, sym

from .oracles import FIRST_JETS, OMEGA_1, OMEGA_2, SYZYGY_1, SYZYGY_2, constant_recombination


# -- invariant total derivatives ------------------------------------------------------

def test_derivatives_of_base_coordinates(r3):
    rc = r3.chart
    for i in (1, 2):
        for j, y in enumerate(rc.y_exprs, start=1):
            assert is_zero(invariant_total_derivative(rc, y, i) - (1 if i == j else 0))


def test_r3_derivative_oracle(r3):
    got = invariant_total_derivative(r3.chart, parse("u[1,1]"), 1)
    expected = parse("(u[1,1,1]*u[2,2] - u[1,1,2]*u[1,2])/(u[1,1]*u[2,2] - u[1,2]^2)")
    assert is_zero(got - expected)


def test_se2_derivative_is_a_ratio_of_total_derivatives(se2):
    rc = se2.chart
    ctx = rc.ctx.with_order(4)
    v, y = rc.v_exprs[0], rc.y_exprs[0]
    expected = total_derivative(v, 1, ctx) / total_derivative(y, 1, ctx)
    assert is_zero(invariant_total_derivative(rc, v, 1) - expected)


def test_lift_of_reduced_jets(se2):
    rc = se2.chart
    assert is_zero(rc.lift(sym("v[1]")) - invariant_total_derivative(rc, rc.v_exprs[0], 1))


@given(text=st.sampled_from(["u[1,1]", "u[1,2]*u[2,2]", "u[1]*u[2,2]"]))
def test_invariant_total_derivatives_commute(r3, text):
    rc = r3.chart
    F = parse(text)
    a = invariant_total_derivative(rc, invariant_total_derivative(rc, F, 1), 2)
    b = invariant_total_derivative(rc, invariant_total_derivative(rc, F, 2), 1)
    assert is_zero(a - b)


# -- reduced contact forms ------------------------------------------------------------

def test_reduced_contact_forms(se2, r3):
    (theta,) = reduced_contact_forms(se2.chart, 1)
    assert theta == DifferentialForm.dcoord(sym("v")) - DifferentialForm.dcoord(sym("y"), sym("v[1]"))
    thetas = reduced_contact_forms(r3.chart, 1)
    assert len(thetas) == 3
    assert thetas[2].coefficient("d(y[2])") == -sym("v[a=3; I=2]")
    assert reduced_contact_forms(r3.chart, 0) == []


def test_lifted_reduced_contact_forms_are_contact(se2, r3):
    for ws in (se2, r3):
        rc = ws.chart
        ctx = rc.ctx.with_order(rc.upstairs_order(rc.vjet(0)) + 1)
        for theta in reduced_contact_forms(rc, 1):
            assert form_is_zero(horizontal_class(rc.lift_form(theta), ctx))


# -- syzygies ---------------------------------------------------------------------------

def test_r3_syzygies_span_the_reference_pair(r3):
    found = syzygies(r3.chart).equations
    assert len(found) == 2
    for target in (SYZYGY_1, SYZYGY_2):
        assert in_span(target, found, FIRST_JETS)
    for eq in found:
        assert in_span(eq, [SYZYGY_1, SYZYGY_2], FIRST_JETS)


def test_syzygies_vanish_after_lifting(r3):
    for eq in syzygies(r3.chart).equations:
        assert is_zero(r3.chart.lift(eq))


def test_curves_have_no_syzygies(se2):
    assert syzygies(se2.chart).equations == ()


# -- reduced ideal ----------------------------------------------------------------------

def test_r3_second_order_two_forms(r3):
    gens = reduced_ideal_generators(r3.chart, 2, r3.r_o)
    assert gens.one_forms == []
    assert constant_recombination(gens.two_forms, [OMEGA_1, OMEGA_2]) is not None


def test_r3_third_order_is_generated_by_contact_forms(r3):
    gens = reduced_ideal_generators(r3.chart, 3, r3.r_o)
    assert gens.two_forms == [] and len(gens.one_forms) == 3


def test_reduced_coordinates_need_enough_jets(se2):
    with pytest.raises(NotYetFree):
        reduced_ideal_generators(se2.chart, 1, se2.r_o)


def test_r3_commutation(r3):
    report = check_commutation(r3.chart, 3)
    assert report.passed
    with pytest.raises(CommutationFailure) as info:
        check_commutation(r3.chart, 2)
    assert info.value.report.obstruction
    assert ideal_dimensions(r3.chart, 2)["obstruction"] == 2


def test_se2_commutation(se2):
    assert check_commutation(se2.chart, 4).passed
