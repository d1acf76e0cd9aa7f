"""Jet coordinates, total derivatives, contact forms and PDE prolongation."""
from __future__ import annotations

from dataclasses import dataclass, field

import sympy as sp

from .exterior import DifferentialForm, coord_label, label_symbol, pullback
from .symcore import as_expr, jet_name, multi_indices, multi_indices_upto, split_jet_name


@dataclass(frozen=True)
class JetContext:
    """Jet space of ``dependents`` over ``independents`` up to ``order``.

    Names follow the parser grammar: independents ``x[1]``, ``x[2]`` (or
    ``x``), dependents ``u`` or ``v[a=1]``; jets are built with
    :func:`jet_name`.
    """

    independents: tuple
    dependents: tuple
    order: int = 0

    def __post_init__(self):
        object.__setattr__(self, "independents", tuple(self.independents))
        object.__setattr__(self, "dependents", tuple(self.dependents))
        if not self.independents or not self.dependents:
            raise ValueError("need at least one independent and one dependent variable")

    @property
    def k(self):
        return len(self.independents)

    @property
    def q(self):
        return len(self.dependents)

    @property
    def x(self):
        return [sp.Symbol(n) for n in self.independents]

    def jet(self, alpha, I=()) -> sp.Symbol:
        base = self.dependents[alpha] if isinstance(alpha, int) else alpha
        return sp.Symbol(jet_name(base, I))

    def jets(self, order=None, exact=False):
        """Jet symbols of all dependents, up to (or exactly at) ``order``."""
        r = self.order if order is None else order
        idx = multi_indices(self.k, r) if exact else multi_indices_upto(self.k, r)
        return [self.jet(a, I) for I in idx for a in range(self.q)]

    def coordinates(self, order=None):
        return self.x + self.jets(order)

    def with_order(self, r):
        return JetContext(self.independents, self.dependents, r)

    def classify(self, s):
        """(dependent index, multi-index) for a jet symbol, else None."""
        try:
            base, I = split_jet_name(s.name)
        except ValueError:
            return None
        if base in self.dependents:
            return self.dependents.index(base), I
        return None

    def jet_order(self, e) -> int:
        orders = [len(c[1]) for s in sp.sympify(e).free_symbols if (c := self.classify(s))]
        return max(orders, default=-1)

    def shift(self, s, i):
        """u_J -> u_{J i} (``i`` is 1-based)."""
        return sp.Symbol(jet_name(s.name, (i,)))

    def horizontal_differentials(self, labels):
        out = {}
        for l in labels:
            s = label_symbol(l)
            if s is not None and self.classify(s) is not None:
                out[l] = DifferentialForm(
                    1, {(coord_label(xi),): self.shift(s, i + 1) for i, xi in enumerate(self.x)}
                )
        return out


def total_derivative(e, i: int, ctx: JetContext):
    """D_i e with ``i`` 1-based; the order grows as needed."""
    e = sp.sympify(e)
    out = sp.diff(e, ctx.x[i - 1])
    for s in e.free_symbols:
        if ctx.classify(s) is not None:
            out += ctx.shift(s, i) * sp.diff(e, s)
    return out


def iterated_total_derivative(e, J, ctx: JetContext):
    for i in J:
        e = total_derivative(e, i, ctx)
    return e


def contact_forms(ctx: JetContext, order=None):
    """theta_J = du_J - u_{Ji} dx^i for |J| < order."""
    r = ctx.order if order is None else order
    out = []
    for I in multi_indices_upto(ctx.k, r - 1):
        for a in range(ctx.q):
            s = ctx.jet(a, I)
            form = DifferentialForm.dcoord(s)
            for i, xi in enumerate(ctx.x):
                form = form - DifferentialForm.dcoord(xi, ctx.shift(s, i + 1))
            out.append(form)
    return out


@dataclass(frozen=True)
class PDESystem:
    ctx: JetContext
    equations: tuple = field(default=())

    def __post_init__(self):
        eqs = tuple(sp.sympify(e) for e in self.equations)
        object.__setattr__(self, "equations", eqs)
        top = max((self.ctx.jet_order(e) for e in eqs), default=-1)
        if top > self.ctx.order:
            raise ValueError(f"equation of order {top} exceeds context order {self.ctx.order}")


def prolong_pde(system: PDESystem, steps: int = 1) -> PDESystem:
    eqs = list(system.equations)
    seen = {sp.expand(e) for e in eqs}
    frontier = list(eqs)
    ctx = system.ctx
    for _ in range(steps):
        new = []
        for e in frontier:
            for i in range(1, ctx.k + 1):
                de = total_derivative(e, i, ctx)
                key = sp.expand(de)
                if key not in seen:  # mixed partials repeat
                    seen.add(key)
                    new.append(de)
        eqs.extend(new)
        frontier = new
    return PDESystem(ctx.with_order(ctx.order + steps), tuple(eqs))


def holonomic_map(ctx: JetContext, f, symbols):
    """Jet symbol -> derivative of the section ``f`` (list of Exprs in x)."""
    f = [as_expr(fa) for fa in f]
    out = {}
    for s in symbols:
        c = ctx.classify(s)
        if c is not None:
            a, I = c
            out[s] = sp.diff(f[a], *[ctx.x[i - 1] for i in I]) if I else f[a]
    return out


def holonomic_substitute(e, f, ctx: JetContext):
    """Evaluate a jet expression or form on the prolongation of the section ``f``."""
    if isinstance(e, DifferentialForm):
        syms = {label_symbol(l) for l in e.labels()} - {None}
        for c in e.terms.values():
            syms |= c.free_symbols
        return pullback(holonomic_map(ctx, f, syms), e).simplified()
    e = as_expr(e)
    return sp.simplify(e.xreplace(holonomic_map(ctx, f, e.free_symbols)))
