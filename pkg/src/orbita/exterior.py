"""Differential forms over a coordinate chart or a named coframe."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import sympy as sp

from .symcore import (
    DEFAULT_SEED,
    RankDeficient,
    SymcoreError,
    is_zero,
    simplify,
    solve_linear,
    to_str,
)


class SingularCoframe(SymcoreError):
    pass


_COORD = re.compile(r"^d\((?P<name>.+)\)$")
_SPLIT = re.compile(r"(\d+)")


def coord_label(s) -> str:
    return f"d({s.name if isinstance(s, sp.Symbol) else s})"


def label_symbol(label: str):
    """Symbol behind a coordinate-differential label, or None."""
    m = _COORD.match(label)
    return sp.Symbol(m.group("name")) if m else None


def label_key(label: str):
    return tuple(int(t) if t.isdigit() else t for t in _SPLIT.split(label))


def _sort_with_sign(labels):
    """Sort labels, returning (sign, sorted tuple) or (0, None) on repeats."""
    labels = list(labels)
    if len(set(labels)) != len(labels):
        return 0, None
    keys = [label_key(l) for l in labels]
    sign = 1
    # insertion sort counting transpositions
    for i in range(1, len(labels)):
        j = i
        while j > 0 and keys[j - 1] > keys[j]:
            keys[j - 1], keys[j] = keys[j], keys[j - 1]
            labels[j - 1], labels[j] = labels[j], labels[j - 1]
            sign = -sign
            j -= 1
    return sign, tuple(labels)


@dataclass(frozen=True)
class DifferentialForm:
    """Homogeneous form: sorted label tuples mapped to coefficients."""

    degree: int
    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for labels, c in self.terms.items():
            if len(labels) != self.degree:
                raise ValueError("mixed-degree form")
            sign, key = _sort_with_sign(labels)
            if sign == 0:
                continue
            c = sp.sympify(c) * sign
            clean[key] = clean.get(key, sp.S.Zero) + c
        object.__setattr__(self, "terms", {k: v for k, v in clean.items() if v != 0})

    # construction -----------------------------------------------------
    @classmethod
    def zero(cls, degree=0):
        return cls(degree, {})

    @classmethod
    def function(cls, f):
        return cls(0, {(): f})

    @classmethod
    def basis(cls, label: str, coeff=1):
        return cls(1, {(label,): coeff})

    @classmethod
    def dcoord(cls, s, coeff=1):
        return cls(1, {(coord_label(s),): coeff})

    # algebra ----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, DifferentialForm):
            if not other.terms:
                return self
            if not self.terms:
                return other
            if other.degree != self.degree:
                raise ValueError("cannot add forms of different degree")
            t = dict(self.terms)
            for k, v in other.terms.items():
                t[k] = t.get(k, sp.S.Zero) + v
            return DifferentialForm(self.degree, t)
        return self + DifferentialForm.function(other)

    __radd__ = __add__

    def __neg__(self):
        return DifferentialForm(self.degree, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, f):
        if isinstance(f, DifferentialForm):
            return wedge(self, f)
        f = sp.sympify(f)
        return DifferentialForm(self.degree, {k: v * f for k, v in self.terms.items()})

    __rmul__ = __mul__

    def __xor__(self, other):
        return wedge(self, other)

    def __eq__(self, other):
        return isinstance(other, DifferentialForm) and form_is_zero(self - other)

    __hash__ = None

    def coefficient(self, *labels):
        sign, key = _sort_with_sign(labels)
        if sign == 0:
            return sp.S.Zero
        return sign * self.terms.get(key, sp.S.Zero)

    def labels(self) -> set:
        return {l for k in self.terms for l in k}

    def map_coefficients(self, f):
        return DifferentialForm(self.degree, {k: f(v) for k, v in self.terms.items()})

    def simplified(self):
        return self.map_coefficients(simplify)

    def __repr__(self):
        return f"DifferentialForm({to_str_form(self)})"

    def __str__(self):
        return to_str_form(self)


def wedge(a: DifferentialForm, b: DifferentialForm) -> DifferentialForm:
    t = {}
    for ka, va in a.terms.items():
        for kb, vb in b.terms.items():
            key = ka + kb
            t[key] = t.get(key, sp.S.Zero) + va * vb
    return DifferentialForm(a.degree + b.degree, {}) if not t else _from_unsorted(a.degree + b.degree, t)


def _from_unsorted(deg, t):
    out = {}
    for labels, c in t.items():
        sign, key = _sort_with_sign(labels)
        if sign:
            out[key] = out.get(key, sp.S.Zero) + sign * c
    return DifferentialForm(deg, out)


def d_function(f) -> DifferentialForm:
    f = sp.sympify(f)
    return DifferentialForm(1, {(coord_label(s),): sp.diff(f, s) for s in f.free_symbols})


def d(a: DifferentialForm, structure: dict | None = None) -> DifferentialForm:
    """Exterior derivative.

    Coordinate labels satisfy d(d(x)) = 0.  Named coframe labels need
    their derivative supplied in ``structure`` (label -> 2-form).
    """
    out = DifferentialForm.zero(a.degree + 1)
    for labels, c in a.terms.items():
        out = out + wedge(d_function(c), DifferentialForm(a.degree, {labels: 1}))
        for pos, l in enumerate(labels):
            if label_symbol(l) is not None:
                continue
            if structure is None or l not in structure:
                raise ValueError(f"no structure equation for label {l!r}")
            left = DifferentialForm(pos, {labels[:pos]: c})
            right = DifferentialForm(len(labels) - pos - 1, {labels[pos + 1:]: 1})
            out = out + (-1) ** pos * wedge(wedge(left, structure[l]), right)
    return out


def substitute_labels(a: DifferentialForm, one_forms: dict, coeff_map=None) -> DifferentialForm:
    """Replace 1-form labels by 1-forms (labels absent from the map stay)."""
    out = DifferentialForm.zero(a.degree)
    for labels, c in a.terms.items():
        if coeff_map is not None:
            c = coeff_map(c)
        term = DifferentialForm.function(c)
        for l in labels:
            term = wedge(term, one_forms[l] if l in one_forms else DifferentialForm.basis(l))
        out = out + term
    return out


def pullback(phi: dict, a: DifferentialForm) -> DifferentialForm:
    """Pull back along ``phi`` (symbol -> Expr); unmapped coordinates are fixed."""
    phi = {k: sp.sympify(v) for k, v in phi.items()}
    cache = {}
    for labels in a.terms:
        for l in labels:
            s = label_symbol(l)
            if s is not None and s in phi and l not in cache:
                cache[l] = d_function(phi[s])
    return substitute_labels(a, cache, coeff_map=lambda c: c.xreplace(phi))


def form_is_zero(a: DifferentialForm, **kw) -> bool:
    return all(is_zero(c, **kw) for c in a.terms.values())


def to_str_form(a: DifferentialForm) -> str:
    if not a.terms:
        return "0"
    out = ""
    for labels in sorted(a.terms, key=lambda k: [label_key(l) for l in k]):
        coeff = a.terms[labels]
        neg = coeff.could_extract_minus_sign()
        c = to_str(-coeff if neg else coeff)
        basis = "^".join(labels)
        if not basis:
            term = c
        elif c == "1":
            term = basis
        else:
            term = f"({c})*{basis}"
        if out:
            out += (" - " if neg else " + ") + term
        else:
            out = ("-" if neg else "") + term
    return out


@dataclass
class Coframe:
    """Ordered named 1-forms spanning the span of the coordinate differentials they use."""

    labels: list
    forms: list
    coordinates: list = None
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if len(self.labels) != len(self.forms):
            raise ValueError("labels and forms differ in length")
        if self.coordinates is None:
            cl = set()
            for f in self.forms:
                cl |= f.labels()
            self.coordinates = sorted(cl, key=label_key)
        n = len(self.coordinates)
        if n != len(self.forms):
            raise SingularCoframe(f"{len(self.forms)} forms over {n} differentials")
        # rows: forms, columns: coordinate differentials
        self.matrix = [[f.coefficient(c) for c in self.coordinates] for f in self.forms]
        # express each coordinate differential over the coframe: solve M^T x = e_c
        transposed = [[self.matrix[r][c] for r in range(n)] for c in range(n)]
        rhs = [[sp.S.One if i == j else sp.S.Zero for i in range(n)] for j in range(n)]
        try:
            cols = solve_linear(transposed, rhs, seed=self.seed)
        except RankDeficient as exc:
            raise SingularCoframe("coframe matrix is singular") from exc
        self.inverse = {
            c: DifferentialForm(1, {(self.labels[r],): cols[j][r] for r in range(n)})
            for j, c in enumerate(self.coordinates)
        }

    def decompose(self, a: DifferentialForm) -> DifferentialForm:
        extra = a.labels() - set(self.coordinates) - set(self.labels)
        if any(label_symbol(l) is not None for l in extra):
            raise SingularCoframe(f"form uses differentials outside the coframe: {sorted(extra)}")
        return substitute_labels(a, self.inverse).simplified()

    def recompose(self, a: DifferentialForm) -> DifferentialForm:
        return substitute_labels(a, dict(zip(self.labels, self.forms)))


def decompose(a: DifferentialForm, cf: Coframe) -> DifferentialForm:
    return cf.decompose(a)


def horizontal_class(a: DifferentialForm, ctx) -> DifferentialForm:
    """Drop contact components: d(u_J) becomes sum_i u_{Ji} d(x_i)."""
    return substitute_labels(a, ctx.horizontal_differentials(a.labels()))
