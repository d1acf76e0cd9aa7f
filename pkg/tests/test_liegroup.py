import itertools
import random

import pytest
import sympy as sp
from hypothesis import given, strategies as st

from orbita.exterior import DifferentialForm, coord_label, d, form_is_zero, horizontal_class, pullback, wedge
from orbita.jetspace import JetContext, contact_forms
from orbita.liegroup import (
    EquivarianceFailure, GroupAction, JacobiViolation, LieGroupChart, MovingFrame, ce_cohomology,
    ce_differential, check_invariant, check_jacobi, invariant_contact_basis, invariantize, maurer_cartan_right,
    structure_constants, verify_frame,
)
from orbita.symcore import is_zero, parse, sym

KAPPA = parse("u[1,1]*(1 + u[1]^2)^(-3/2)")
KAPPA_S = parse("u[1,1,1]*(1 + u[1]^2)^(-2) - 3*u[1]*u[1,1]^2*(1 + u[1]^2)^(-3)")


def abelian(n):
    names = [f"g{i}" for i in range(1, n + 1)]
    return LieGroupChart(names, [f"{g}_a + {g}_b" for g in names], ["0"] * n, [f"-{g}" for g in names])


def constants(n, brackets):
    """c[i][j][k] from {(j, k): {i: value}} with the sign convention d mu = -1/2 c mu^mu."""
    c = [[[sp.S.Zero] * n for _ in range(n)] for _ in range(n)]
    for (j, k), out in brackets.items():
        for i, val in out.items():
            c[i][j][k] = sp.Integer(val)
            c[i][k][j] = -sp.Integer(val)
    return c


ALGEBRAS = {
    "abelian3": constants(3, {}),
    "so3": constants(3, {(0, 1): {2: 1}, (1, 2): {0: 1}, (2, 0): {1: 1}}),
    "heisenberg": constants(3, {(0, 1): {2: 1}}),
    "sl2": constants(3, {(0, 1): {1: 2}, (0, 2): {2: -2}, (1, 2): {0: 1}}),
    "aff1": constants(2, {(0, 1): {1: 1}}),
}


# -- groups and Maurer-Cartan forms ------------------------------------------------

def test_group_laws_verify(se2):
    assert se2.action.group.verify()
    assert abelian(3).verify()


def test_abelian_maurer_cartan_forms():
    G = abelian(3)
    assert maurer_cartan_right(G) == [DifferentialForm.dcoord(s) for s in G.symbols]
    c = structure_constants(G)
    assert all(x == 0 for plane in c for row in plane for x in row)


def test_se2_maurer_cartan_forms(se2):
    G = se2.action.group
    phi, c1, c2 = G.symbols
    mu = maurer_cartan_right(G)
    dphi, dc1, dc2 = (DifferentialForm.dcoord(s) for s in (phi, c1, c2))
    assert mu[0] == dphi
    assert mu[1] == dc1 + dphi * c2
    assert mu[2] == dc2 - dphi * c1


def test_se2_structure_equations(se2):
    G = se2.action.group
    mu = maurer_cartan_right(G)
    c = structure_constants(G)
    for i in range(3):
        rhs = DifferentialForm.zero(2)
        for j, k in itertools.product(range(3), repeat=2):
            rhs = rhs + wedge(mu[j], mu[k]) * (sp.Rational(1, 2) * c[i][j][k])
        assert form_is_zero(d(mu[i]) + rhs)
    # rotation bracket moves one translation into the other
    nonzero = {(i, j, k) for i, j, k in itertools.product(range(3), repeat=3) if c[i][j][k] != 0}
    assert {(j, k) for _, j, k in nonzero} == {(0, 1), (1, 0), (0, 2), (2, 0)}


def test_jacobi_violation_detected():
    c = constants(3, {(0, 1): {2: 1}, (1, 2): {0: 1}, (2, 0): {1: 2}})
    c[2][0][1] += 3
    c[2][1][0] -= 3
    c[0][0][2] = sp.Integer(1)
    c[0][2][0] = sp.Integer(-1)
    with pytest.raises(JacobiViolation):
        check_jacobi(c)


@pytest.mark.parametrize("name", sorted(ALGEBRAS))
def test_reference_algebras_satisfy_jacobi(name):
    assert check_jacobi(ALGEBRAS[name])


# -- Lie algebra cohomology ----------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_abelian_cohomology_dimensions(n):
    c = constants(n, {})
    assert [len(ce_cohomology(c, t)) for t in range(n + 1)] == [sp.binomial(n, t) for t in range(n + 1)]


def test_se2_cohomology(se2):
    c = structure_constants(se2.action.group)
    assert [len(ce_cohomology(c, t)) for t in range(4)] == [1, 1, 1, 1]
    (h1,) = ce_cohomology(c, 1)
    assert h1.labels() == {"eps[1]"}


@given(st.sampled_from(sorted(ALGEBRAS)), st.integers(0, 3))
def test_cocycles_are_closed_and_independent(name, t):
    c = ALGEBRAS[name]
    n = len(c)
    reps = ce_cohomology(c, t)
    structure = ce_differential(c)
    for w in reps:
        assert form_is_zero(d(w, structure))
    if not reps or t == 0:
        return
    # independent modulo coboundaries
    labels = [f"eps[{i + 1}]" for i in range(n)]
    basis = list(itertools.combinations(labels, t))
    coboundaries = [d(DifferentialForm(t - 1, {S: 1}), structure)
                    for S in itertools.combinations(labels, t - 1)]
    rank = lambda forms: sp.Matrix([[w.coefficient(*S) for S in basis] for w in forms]).rank() if forms else 0
    assert rank(coboundaries + reps) == rank(coboundaries) + len(reps)


# -- prolonged action --------------------------------------------------------------

def test_translations_fix_derivatives(r3):
    images = r3.action.prolonged(2)
    for s in r3.action.ctx.jets(2):
        if r3.action.ctx.classify(s)[1]:
            assert images[s] == s


def test_se2_prolonged_slope(se2):
    image = se2.action.prolonged(1)[sym("u[1]")]
    expected = parse("(sin(phi) + u[1]*cos(phi))/(cos(phi) - u[1]*sin(phi))")
    assert is_zero(image - expected)


def test_identity_acts_trivially(se2):
    images = se2.action.transform(se2.action.group.identity, 2)
    for s, img in images.items():
        assert is_zero(img - s)


@given(seed=st.integers(0, 2**16))
def test_action_axioms(se2, seed):
    assert se2.action.verify(r=1, samples=2, seed=seed)


@given(seed=st.integers(0, 2**16))
def test_prolonged_action_preserves_contact(se2, seed):
    A = se2.action
    rng = random.Random(seed)
    g = A.group.sample(rng)
    phi = A.transform(g, 3)
    ctx = A.ctx.with_order(3)
    for theta in contact_forms(ctx, 2):
        assert form_is_zero(horizontal_class(pullback(phi, theta), ctx), seed=seed)


# -- moving frames and invariantization -------------------------------------------------

def test_frames_are_equivariant(se2, r3):
    assert verify_frame(se2.action, se2.frame)["max_residual"] < 1e-12
    assert verify_frame(r3.action, r3.frame)["max_residual"] < 1e-12


def test_perturbed_frame_is_rejected(se2):
    comps = list(se2.frame.components)
    comps[0] = -comps[0]
    with pytest.raises(EquivarianceFailure):
        verify_frame(se2.action, MovingFrame(comps, se2.frame.order))


def test_curvature_from_invariantization(se2):
    assert is_zero(invariantize(se2.action, se2.frame, "u[1,1]") - KAPPA)
    assert is_zero(invariantize(se2.action, se2.frame, "u[1,1,1]") - KAPPA_S)


def test_invariantizing_an_invariant_is_identity(se2):
    assert is_zero(invariantize(se2.action, se2.frame, KAPPA) - KAPPA)


@given(text=st.sampled_from(["u[1,1]", "u[1,1,1]", "u[1,1]^2 + u[1,1,1]", "x*u[1]"]))
def test_invariantized_functions_are_invariant(se2, text):
    assert check_invariant(se2.action, invariantize(se2.action, se2.frame, text), samples=3)


# -- invariant contact bases ----------------------------------------------------------

def test_r3_standard_contact_forms_are_invariant(r3):
    basis = invariant_contact_basis(r3.action, r3.frame, 2)
    standard = contact_forms(r3.action.ctx.with_order(2), 2)
    assert len(basis) == 3
    # translations leave the standard forms invariant: they pass the invariance check as an explicit basis
    from orbita.liegroup import ContactBasisElement

    explicit = [ContactBasisElement(0, (), standard[0]), ContactBasisElement(0, (1,), standard[1]),
                ContactBasisElement(0, (2,), standard[2])]
    assert invariant_contact_basis(r3.action, r3.frame, 2, explicit=explicit) == explicit


def test_se2_filtered_basis(se2):
    basis = se2.basis
    assert [el.index for el in basis] == [(), (1,), (1, 1), (1, 1, 1)]


def test_trivial_group_returns_standard_contact_forms():
    G = LieGroupChart([], [], [], [])
    ctx = JetContext(("x",), ("u",), 0)
    A = GroupAction(G, ctx, ["x"], ["u"])
    basis = invariant_contact_basis(A, MovingFrame([], 0), 3)
    assert [el.form for el in basis] == contact_forms(ctx.with_order(3), 3)
