"""Conservation laws of the reduced equations from Lie algebra cohomology."""
from __future__ import annotations

from dataclasses import dataclass

import sympy as sp

from .exterior import DifferentialForm, d, form_is_zero, horizontal_class, substitute_labels, to_str_form
from .liegroup import GroupAction, MovingFrame, ce_cohomology, ce_labels, pullback_maurer_cartan, structure_constants
from .reduction import ReducedChart
from .symcore import DEFAULT_SEED, SymcoreError, is_zero, simplify


class NotInvariantCoefficient(SymcoreError):
    pass


class NotClosed(SymcoreError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class ConservationLaw:
    degree: int
    cocycle: DifferentialForm
    form: DifferentialForm

    def to_json(self):
        return {"degree": self.degree, "cocycle": to_str_form(self.cocycle), "form": to_str_form(self.form)}


def conservation_laws(A: GroupAction, rho: MovingFrame, rc: ReducedChart, max_degree=None, *, seed=DEFAULT_SEED):
    """One reduced horizontal form per cohomology class of degree 1..max_degree."""
    k = A.ctx.k
    max_degree = k - 1 if max_degree is None else max_degree
    if A.group.dim == 0:
        return []
    c = structure_constants(A.group, seed=seed)
    zetas = dict(zip(ce_labels(A.group.dim), pullback_maurer_cartan(A.group, rho, seed=seed)))
    hctx = A.ctx.with_order(rho.order + 1)
    laws = []
    for t in range(1, min(max_degree, k - 1) + 1):
        for cocycle in ce_cohomology(c, t):
            upstairs = substitute_labels(cocycle, zetas)
            horizontal = horizontal_class(upstairs, hctx).simplified()
            reduced = rc.push_down_horizontal(horizontal)
            _check_invariant_coefficients(rc, horizontal, reduced, seed)
            laws.append(ConservationLaw(t, cocycle, reduced.simplified()))
    return laws


def _check_invariant_coefficients(rc, horizontal, reduced, seed):
    lifted = rc.lift_form(reduced)
    back = horizontal_class(lifted, rc.ctx.with_order(0))
    # compare over dx, where the lifted dy^i equals D_j y^i dx^j
    diff = (back - horizontal).simplified()
    if not form_is_zero(diff, seed=seed):
        raise NotInvariantCoefficient("horizontal coefficients do not descend to the reduced chart")


def horizontal_differential(rc: ReducedChart, w: DifferentialForm) -> DifferentialForm:
    """Formal d0 on the reduced jet space: dv^a_I -> v^a_{Ii} dy^i after d."""
    return horizontal_class(d(w), rc.rctx).simplified()


def verify_closedness(w: DifferentialForm, rc: ReducedChart, *, seed=DEFAULT_SEED):
    """Certify d0 w = 0 modulo syzygies by lifting the horizontal residual."""
    h = horizontal_differential(rc, w)
    worst = []
    for labels, coeff in h.terms.items():
        if coeff == 0:
            continue
        if not is_zero(rc.lift(coeff), seed=seed):
            raise NotClosed(f"horizontal differential does not vanish: {to_str_form(h)}", residual=h)
        worst.append(labels)
    return {"closed": True, "terms_vanishing_by_syzygy": len(worst)}
