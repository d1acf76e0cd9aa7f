"""Invariant variational calculus on the reduced jet space.

Contact classes ``[eta_I ^ dy]`` are never modelled abstractly.  Every
computation works with coefficient vectors over the filtered invariant
contact basis, together with explicit rewrite rules that trade a top-order
class for lower ones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import sympy as sp

from .exterior import Coframe, DifferentialForm, coord_label, d, label_symbol
from .liegroup import ContactBasisElement
from .reduction import ReducedChart
from .symcore import (
    DEFAULT_SEED,
    Inconsistent,
    RankDeficient,
    SymcoreError,
    as_expr,
    is_zero,
    jet_name,
    multi_indices_upto,
    simplify,
    solve_linear,
    to_str,
)


# ---------------------------------------------------------------------------
# total differential operators


def _counts(I, k):
    c = [0] * k
    for i in I:
        c[i - 1] += 1
    return tuple(c)


def _index(counts):
    return tuple(i + 1 for i, n in enumerate(counts) for _ in range(n))


@dataclass
class TotalDiffOperator:
    """sum_I A_I d^|I|/dy^I acting through the reduced total derivatives.

    ``coefficients`` maps a sorted multi-index to its coefficient.
    ``derivation(e, i)`` is the total derivative used for application and
    composition.  ``label`` records how the operator was built.
    """

    k: int
    coefficients: dict
    derivation: object = field(repr=False)
    label: str = ""

    def __post_init__(self):
        clean = {}
        for I, c in self.coefficients.items():
            I = tuple(sorted(I))
            clean[I] = clean.get(I, sp.S.Zero) + sp.sympify(c)
        self.coefficients = {I: c for I, c in clean.items() if c != 0}
        if not self.label:
            self.label = self.expanded_str()

    @classmethod
    def multiplication(cls, k, f, derivation):
        return cls(k, {(): f}, derivation, label=f"({to_str(f)})")

    @classmethod
    def derivative(cls, k, i, derivation, name="d/dy"):
        return cls(k, {(i,): 1}, derivation, label=f"{name}[{i}]" if k > 1 else name)

    @property
    def order(self):
        return max((len(I) for I in self.coefficients), default=0)

    def _dmulti(self, e, I):
        for i in I:
            e = self.derivation(e, i)
        return e

    def __call__(self, f):
        f = as_expr(f)
        return sum((c * self._dmulti(f, I) for I, c in self.coefficients.items()), sp.S.Zero)

    def __add__(self, other):
        t = dict(self.coefficients)
        for I, c in other.coefficients.items():
            t[I] = t.get(I, sp.S.Zero) + c
        return TotalDiffOperator(self.k, t, self.derivation, label=f"{self.label} + {other.label}")

    def __neg__(self):
        return TotalDiffOperator(
            self.k, {I: -c for I, c in self.coefficients.items()}, self.derivation, label=f"-({self.label})"
        )

    def __sub__(self, other):
        return self + (-other)

    def __matmul__(self, other):
        """Composition self o other, expanded with the Leibniz rule."""
        out = {}
        for I, a in self.coefficients.items():
            n = _counts(I, self.k)
            for K, b in other.coefficients.items():
                for m in itertools.product(*(range(ni + 1) for ni in n)):
                    weight = 1
                    for ni, mi in zip(n, m):
                        weight *= comb(ni, mi)
                    db = self._dmulti(b, _index(m))
                    rest = tuple(ni - mi for ni, mi in zip(n, m))
                    key = tuple(sorted(K + _index(rest)))
                    out[key] = out.get(key, sp.S.Zero) + weight * a * db
        return TotalDiffOperator(self.k, out, self.derivation, label=f"({self.label})({other.label})")

    def scaled(self, f):
        f = sp.sympify(f)
        return TotalDiffOperator(
            self.k, {I: f * c for I, c in self.coefficients.items()}, self.derivation,
            label=f"({to_str(f)})*({self.label})",
        )

    def simplified(self):
        return TotalDiffOperator(
            self.k, {I: simplify(c) for I, c in self.coefficients.items()}, self.derivation, label=self.label
        )

    def expanded_str(self):
        if not self.coefficients:
            return "0"
        parts = []
        for I in sorted(self.coefficients, key=lambda I: (len(I), I)):
            c = to_str(simplify(self.coefficients[I]))
            if not I:
                parts.append(f"({c})")
            else:
                dname = "d^{}/dy^[{}]".format(len(I), ",".join(map(str, I))) if self.k > 1 else f"d^{len(I)}/dy^{len(I)}"
                parts.append(f"({c})*{dname}")
        return " + ".join(parts)

    def equals(self, other, *, seed=DEFAULT_SEED):
        keys = set(self.coefficients) | set(other.coefficients)
        return all(
            is_zero(self.coefficients.get(I, 0) - other.coefficients.get(I, 0), seed=seed) for I in keys
        )

    def to_json(self):
        return {
            "composition": self.label,
            "expanded": {",".join(map(str, I)): to_str(simplify(c)) for I, c in self.coefficients.items()},
        }


def zero_operator(k, derivation):
    return TotalDiffOperator(k, {}, derivation, label="0")


# ---------------------------------------------------------------------------
# Euler operator


def euler_operator(rc: ReducedChart, L, a: int):
    """E_a(L) = sum_I (-d/dy)^I dL/dv^a_I over sorted multi-indices I (``a`` 0-based)."""
    L = as_expr(L)
    rctx = rc.rctx
    out = sp.S.Zero
    for s in L.free_symbols:
        c = rctx.classify(s)
        if c is None or c[0] != a:
            continue
        term = sp.diff(L, s)
        for i in c[1]:
            term = -rctx_total_derivative(rc, term, i)
        out += term
    return out


def rctx_total_derivative(rc: ReducedChart, e, i):
    from .jetspace import total_derivative

    return total_derivative(e, i, rc.rctx)


@dataclass
class VariationalProblem:
    chart: ReducedChart
    lagrangian: object

    def __post_init__(self):
        self.lagrangian = as_expr(self.lagrangian)
        allowed = set(self.chart.y)
        for s in self.lagrangian.free_symbols:
            if s not in allowed and self.chart.rctx.classify(s) is None:
                raise ValueError(f"Lagrangian uses {s}, which is not a reduced coordinate")


# ---------------------------------------------------------------------------
# table of horizontal differentiation


@dataclass
class HorizontalTable:
    """Rows J -> {(K, i): c} with d0[eta_J] = sum c [eta_K ^ dy^i]."""

    k: int
    rows: dict
    top: int


def _coframe_on_section(rc: ReducedChart, basis, r_o):
    """Coframe {eta_K, dy^i, du_J (|J| = r_o)} restricted to the cross-section."""
    ctx = rc.ctx
    coords = ctx.coordinates(r_o)
    clabels = [coord_label(s) for s in coords]
    labels, forms = [], []
    for el in basis:
        labels.append(eta_label(el, ctx.q))
        forms.append(el.form)
    for i, y in enumerate(rc.y_exprs):
        labels.append(f"d({rc.y[i].name})")
        forms.append(DifferentialForm(1, {(coord_label(s),): sp.diff(y, s) for s in coords if y.has(s)}))
    for s in ctx.jets(r_o, exact=True):
        labels.append(coord_label(s) + "'")
        forms.append(DifferentialForm.dcoord(s))
    restricted = [f.map_coefficients(rc.restrict) for f in forms]
    return labels, Coframe(labels, restricted, coordinates=clabels, seed=rc.seed), forms


def eta_label(el: ContactBasisElement, q: int) -> str:
    idx = ",".join(map(str, el.index))
    if q == 1:
        return f"eta[{idx}]" if idx else "eta[0]"
    return f"eta[a={el.alpha + 1}; I={idx}]" if idx else f"eta[a={el.alpha + 1}]"


def horizontal_table(rc: ReducedChart, basis, r_o: int) -> HorizontalTable:
    """Coefficients of d0 on the filtered basis, as reduced functions."""
    ctx = rc.ctx
    labels, cf, _ = _coframe_on_section(rc, basis, r_o)
    ylabels = [f"d({y.name})" for y in rc.y]
    keyed = {eta_label(el, ctx.q): el for el in basis}
    rows = {}
    top = max(len(el.index) for el in basis)
    for el in basis:
        if len(el.index) >= top:
            continue
        dform = d(el.form).map_coefficients(rc.restrict)
        dec = cf.decompose(dform)
        row = {}
        for pair, c in dec.terms.items():
            etas = [l for l in pair if l in keyed]
            ys = [l for l in pair if l in ylabels]
            if len(etas) == 2:
                continue  # quadratic in contact forms
            if len(etas) == 1 and len(ys) == 1:
                # store as coefficient of eta ^ dy^i
                sign = 1 if pair.index(etas[0]) == 0 else -1
                K = keyed[etas[0]]
                row[(K.alpha, K.index, ylabels.index(ys[0]) + 1)] = rc.push_down(sign * c)
                continue
            if is_zero(c, seed=rc.seed):
                continue
            raise Inconsistent(f"d of {labels} has a non-contact component on {pair}", residual=c)
        rows[(el.alpha, el.index)] = row
    return HorizontalTable(ctx.k, rows, top)


# ---------------------------------------------------------------------------
# integration by parts rules


@dataclass
class IBPRule:
    """f [eta_(alpha,I) ^ dy] = sum T_(alpha',J)(f) [eta_(alpha',J) ^ dy]."""

    alpha: int
    index: tuple
    operators: dict  # (alpha', J) -> TotalDiffOperator


def ibp_table(rc: ReducedChart, basis, r_o: int, table: HorizontalTable | None = None):
    """Integration-by-parts rules for every basis element of positive order.

    Level by level, the rows (J, i) with |J| = r of the horizontal table are
    combined (a particular left inverse W of the top-order block) so that
    each top class is isolated.
    """
    table = table or horizontal_table(rc, basis, r_o)
    k, q = rc.ctx.k, rc.ctx.q
    deriv = lambda e, i: rctx_total_derivative(rc, e, i)
    rules = {}
    for r in range(table.top):
        rows = [(a, J, i) for J in multi_indices_upto(k, r) if len(J) == r for a in range(q) for i in range(1, k + 1)]
        cols = [(a, I) for I in multi_indices_upto(k, r + 1) if len(I) == r + 1 for a in range(q)]
        C = [[table.rows[(a, J)].get((b, I, i), sp.S.Zero) for (b, I) in cols] for (a, J, i) in rows]
        for (a, J, i), row in zip(rows, C):
            for (b, K, i2), c in table.rows[(a, J)].items():
                if len(K) > r + 1 and not is_zero(c, seed=rc.seed):
                    raise Inconsistent(f"table row {J} reaches order {len(K)}")
        CT = [[C[rr][cc] for rr in range(len(rows))] for cc in range(len(cols))]
        for ci, (b, I) in enumerate(cols):
            e = [sp.S.One if j == ci else sp.S.Zero for j in range(len(cols))]
            try:
                w = solve_linear(CT, e, particular=True, seed=rc.seed)
            except (Inconsistent, RankDeficient) as exc:
                raise Inconsistent(f"cannot isolate the class of order {I}") from exc
            ops = {}
            for (a, J, i), wi in zip(rows, w):
                wi = simplify(wi)
                if wi == 0:
                    continue
                # d/dy^i o (w .)  ->  contributes to (a, J)
                op = TotalDiffOperator.derivative(k, i, deriv) @ TotalDiffOperator.multiplication(k, wi, deriv)
                ops[(a, J)] = ops[(a, J)] + op if (a, J) in ops else op
                for (b2, K, i2), c in table.rows[(a, J)].items():
                    if i2 != i or len(K) > r:
                        continue
                    m = TotalDiffOperator.multiplication(k, -simplify(wi * c), deriv)
                    ops[(b2, K)] = ops[(b2, K)] + m if (b2, K) in ops else m
            rules[(b, I)] = IBPRule(b, I, {key: op.simplified() for key, op in ops.items()})
    return rules


# ---------------------------------------------------------------------------
# A operators


def contact_coefficients(rc: ReducedChart, basis, r_o: int):
    """p^* thetabar^a over the filtered basis: list (per a) of {(alpha, I): coefficient}."""
    from .reduction import reduced_contact_forms

    ctx = rc.ctx
    labels, cf, _ = _coframe_on_section(rc, basis, r_o)
    keyed = {eta_label(el, ctx.q): el for el in basis}
    out = []
    for tb in reduced_contact_forms(rc, 1):
        lifted = rc.lift_form(tb).map_coefficients(rc.restrict)
        dec = cf.decompose(lifted)
        coeffs = {}
        for (lab,), c in dec.terms.items():
            if lab in keyed:
                el = keyed[lab]
                coeffs[(el.alpha, el.index)] = rc.push_down(c)
            elif not is_zero(c, seed=rc.seed):
                raise Inconsistent(f"lifted reduced contact form has a {lab} component")
        out.append(coeffs)
    return out


def a_operators(rc: ReducedChart, basis, r_o: int, rules=None, coefficients=None):
    """Matrix A[a][alpha] of total differential operators.

    p^* [thetabar^a ^ f dy] = sum_alpha (A[a][alpha] f) [eta^alpha ^ dy]
    modulo horizontally exact terms.
    """
    k, q = rc.ctx.k, rc.ctx.q
    deriv = lambda e, i: rctx_total_derivative(rc, e, i)
    rules = rules if rules is not None else ibp_table(rc, basis, r_o)
    coefficients = coefficients if coefficients is not None else contact_coefficients(rc, basis, r_o)
    result = []
    for coeffs in coefficients:
        pending = {key: TotalDiffOperator.multiplication(k, c, deriv) for key, c in coeffs.items()}
        for level in range(r_o, 0, -1):
            for key in [kk for kk in pending if len(kk[1]) == level]:
                op = pending.pop(key)
                for target, t_op in rules[key].operators.items():
                    composed = t_op @ op
                    pending[target] = pending[target] + composed if target in pending else composed
        result.append([pending.get((alpha, ()), zero_operator(k, deriv)).simplified() for alpha in range(q)])
    return result


def invariant_el_system(vp: VariationalProblem, A):
    """Reduced equations sum_a A[a][alpha](E_a(L)) for each alpha."""
    rc = vp.chart
    E = [euler_operator(rc, vp.lagrangian, a) for a in range(rc.rctx.q)]
    q = len(A[0]) if A else 0
    return [simplify(sum((A[a][alpha](E[a]) for a in range(len(A))), sp.S.Zero)) for alpha in range(q)]


def section_coefficient(rc: ReducedChart, basis):
    """c with eta^alpha (order zero) = c^alpha_beta theta^beta, as upstairs expressions."""
    from .jetspace import contact_forms

    ctx = rc.ctx
    thetas = contact_forms(ctx, 1)
    out = []
    for el in basis:
        if el.index:
            continue
        row = [simplify(el.form.coefficient(coord_label(ctx.jet(b)))) for b in range(ctx.q)]
        out.append(row)
    return out


def upstairs_euler(ctx, L, alpha):
    """Classical Euler operator on the upstairs jet space."""
    from .jetspace import total_derivative

    L = as_expr(L)
    out = sp.S.Zero
    for s in L.free_symbols:
        c = ctx.classify(s)
        if c is None or c[0] != alpha:
            continue
        term = sp.diff(L, s)
        for i in c[1]:
            term = -total_derivative(term, i, ctx)
        out += term
    return out


__all__ = [
    "HorizontalTable",
    "IBPRule",
    "TotalDiffOperator",
    "VariationalProblem",
    "a_operators",
    "contact_coefficients",
    "euler_operator",
    "horizontal_table",
    "ibp_table",
    "invariant_el_system",
    "section_coefficient",
    "upstairs_euler",
]
