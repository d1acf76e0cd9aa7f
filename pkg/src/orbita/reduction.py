"""Orbit reduction: invariant coordinates, invariant derivatives, syzygies and reduced ideals."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy.linalg import null_space

from .exterior import DifferentialForm, coord_label, d, form_is_zero, horizontal_class, label_key, pullback
from .jetspace import JetContext, PDESystem, contact_forms, total_derivative
from .liegroup import GroupAction, MovingFrame, _tidy, invariantize
from .symcore import (
    DEFAULT_SEED,
    RankDeficient,
    SymcoreError,
    as_expr,
    is_zero,
    jet_name,
    multi_indices,
    multi_indices_upto,
    nullspace,
    sample_rational,
    simplify,
    solve_linear,
    to_float,
)


class SingularHorizontalFrame(SymcoreError):
    pass


class RankEstimateUnstable(SymcoreError):
    pass


class NotYetFree(SymcoreError):
    pass


class CommutationFailure(SymcoreError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class ReducedChart:
    """Invariant coordinates y (base), v (fiber) and their invariant derivatives.

    ``y_names``/``v_names`` are grammar names for the reduced chart (for
    example ``y[1]`` and ``v[a=2]``); ``y_exprs``/``v_exprs`` define them on
    the upstairs jet space.
    """

    action: GroupAction
    frame: MovingFrame
    y_names: list
    v_names: list
    y_exprs: list
    v_exprs: list
    seed: int = DEFAULT_SEED
    _lift: dict = field(default_factory=dict, repr=False)
    _section: dict = field(default_factory=dict, repr=False)
    _levels_done: int = field(default=-1, repr=False)

    def __post_init__(self):
        self.y_exprs = [as_expr(e) for e in self.y_exprs]
        self.v_exprs = [as_expr(e) for e in self.v_exprs]
        if len(self.y_names) != self.ctx.k or len(self.y_exprs) != self.ctx.k:
            raise ValueError("need one invariant base coordinate per independent variable")
        self.rctx = JetContext(tuple(self.y_names), tuple(self.v_names), 0)
        for n, e in zip(self.y_names, self.y_exprs):
            self._lift[sp.Symbol(n)] = e
        for n, e in zip(self.v_names, self.v_exprs):
            self._lift[sp.Symbol(n)] = e
        k = self.ctx.k
        J = sp.Matrix(k, k, lambda i, j: total_derivative(self.y_exprs[i], j + 1, self.ctx))
        det = simplify(J.det())
        if is_zero(det, seed=self.seed):
            raise SingularHorizontalFrame("horizontal differentials of the base invariants are dependent")
        self.jacobian = [[_tidy(e) for e in row] for row in J.tolist()]
        # inv_jt[i][j]: entry of (J^T)^-1, so dF/dy^i = sum_j inv_jt[i][j] D_j F
        self.inv_jt = [[_tidy(e) for e in row] for row in J.T.inv().tolist()]
        # inv_j[j][i]: dx^j = sum_i inv_j[j][i] dy^i on the horizontal level
        self.inv_j = [[_tidy(e) for e in row] for row in J.inv().tolist()]

    # chart bookkeeping ----------------------------------------------------
    @property
    def ctx(self):
        return self.action.ctx

    @property
    def y(self):
        return [sp.Symbol(n) for n in self.y_names]

    def vjet(self, a, I=()):
        return self.rctx.jet(a, I)

    def invariant_total_derivative(self, F, i: int):
        """d F / d y^i for an invariant F given in jet variables (``i`` 1-based)."""
        DF = [total_derivative(F, j + 1, self.ctx) for j in range(self.ctx.k)]
        return _tidy(sum(self.inv_jt[i - 1][j] * DF[j] for j in range(self.ctx.k)))

    def lift(self, e):
        """Reduced expression -> expression in upstairs jet variables."""
        e = as_expr(e)
        return e.xreplace({s: self.lift_symbol(s) for s in e.free_symbols if self._is_reduced(s)})

    def _is_reduced(self, s):
        return s in self._lift or self.rctx.classify(s) is not None

    def lift_symbol(self, s):
        if s in self._lift:
            return self._lift[s]
        c = self.rctx.classify(s)
        if c is None:
            raise KeyError(s)
        a, I = c
        parent = self.vjet(a, I[:-1])
        # derivative order is symmetric, so peel the last index
        val = self.invariant_total_derivative(self.lift_symbol(parent), I[-1])
        self._lift[s] = val
        return val

    def lift_form(self, w: DifferentialForm) -> DifferentialForm:
        syms = {s for c in w.terms.values() for s in c.free_symbols}
        from .exterior import label_symbol

        syms |= {label_symbol(l) for l in w.labels()} - {None}
        phi = {s: self.lift_symbol(s) for s in syms if self._is_reduced(s)}
        return pullback(phi, w)

    def upstairs_order(self, s) -> int:
        return self.ctx.jet_order(self.lift_symbol(s))

    def reduced_coordinates(self, r: int):
        """Reduced symbols whose lift lives on J^r, ordered y, v, v_I by |I|."""
        out = [s for s in self.y if self.upstairs_order(s) <= r]
        n = 0
        while True:
            level = [self.vjet(a, I) for I in multi_indices(self.ctx.k, n) for a in range(self.rctx.q)]
            keep = [s for s in level if self.upstairs_order(s) <= r]
            if not keep:
                break
            out.extend(keep)
            n += 1
        return out

    def max_v_index(self, r: int) -> int:
        """Largest |I| with every v^a_I defined on J^r, or -1."""
        n = -1
        while all(
            self.upstairs_order(self.vjet(a, I)) <= r
            for I in multi_indices(self.ctx.k, n + 1)
            for a in range(self.rctx.q)
        ):
            n += 1
        return n

    # cross-section and push-down ------------------------------------------
    def normalized_coordinates(self) -> dict:
        if "normalized" not in self._section:
            norm = {}
            for s in self.ctx.coordinates(self.frame.order):
                val = invariantize(self.action, self.frame, s)
                if not val.free_symbols:
                    norm[s] = val
            self._section["normalized"] = norm
            self._section["inverse"] = {}
        return self._section["normalized"]

    def restrict(self, F):
        """Restriction of an upstairs expression to the cross-section."""
        return simplify(as_expr(F).xreplace(self.normalized_coordinates()))

    def _extend_section(self, L: int):
        norm = self.normalized_coordinates()
        inverse = self._section["inverse"]
        for level in range(self._levels_done + 1, L + 1):
            if level == 0:
                unknowns = [s for s in self.ctx.x + self.ctx.jets(0) if s not in norm]
            else:
                unknowns = [s for s in self.ctx.jets(level, exact=True) if s not in norm]
            if not unknowns:
                self._levels_done = level
                continue
            eqs = []
            for c in self.reduced_coordinates(level):
                if self.upstairs_order(c) == level or (level == 0 and self.upstairs_order(c) <= 0):
                    cK = self.restrict(self.lift_symbol(c))
                    if any(cK.has(u) for u in unknowns):
                        eqs.append((c, cK))
            A = []
            rhs = []
            for c, cK in eqs:
                row = [simplify(sp.diff(cK, u)) for u in unknowns]
                if any(r.has(u) for r in row for u in unknowns):
                    raise NotYetFree(f"invariant {c} is nonlinear in its top jets on the cross-section")
                rest = simplify(cK - sum(r * u for r, u in zip(row, unknowns)))
                A.append([r.xreplace(inverse) for r in row])
                rhs.append(c - rest.xreplace(inverse))
            rows = _independent_rows(A, len(unknowns), self.seed)
            if len(rows) < len(unknowns):
                raise NotYetFree(f"jets of order {level} are not determined by the reduced coordinates")
            sol = solve_linear([A[i] for i in rows], [rhs[i] for i in rows], seed=self.seed)
            for u, val in zip(unknowns, sol):
                inverse[u] = simplify(val)
            self._levels_done = level

    def push_down(self, F):
        """Rewrite an invariant upstairs expression in reduced coordinates."""
        FK = self.restrict(F)
        order = self.ctx.jet_order(FK)
        self._extend_section(max(order, 0))
        return simplify(FK.xreplace(self._section["inverse"]))

    def push_down_horizontal(self, w: DifferentialForm) -> DifferentialForm:
        """Rewrite an invariant horizontal form over dx as a reduced form over dy."""
        dx_to_dy = {
            coord_label(xj): DifferentialForm(
                1, {(coord_label(yi),): self.inv_j[j][i] for i, yi in enumerate(self.y)}
            )
            for j, xj in enumerate(self.ctx.x)
        }
        from .exterior import substitute_labels

        over_y = substitute_labels(w, dx_to_dy)
        return over_y.map_coefficients(self.push_down)


def _independent_rows(A, ncols, seed, trials=3):
    """Greedy choice of rows spanning the row space, probed at random points."""
    if not A:
        return []
    syms = sorted({s for row in A for e in row for s in sp.sympify(e).free_symbols}, key=lambda s: s.name)
    rng = random.Random(seed)
    choices = []
    for _ in range(trials):
        pt = {s: sample_rational(rng) for s in syms}
        M = np.array([[to_float(e, pt) for e in row] for row in A])
        chosen = []
        for i in range(len(A)):
            trial = M[chosen + [i]]
            if np.linalg.matrix_rank(trial, tol=1e-9 * max(1.0, np.abs(M).max())) > len(chosen):
                chosen.append(i)
            if len(chosen) == ncols:
                break
        choices.append(tuple(chosen))
    if len(set(choices)) != 1:
        raise RankEstimateUnstable("row choice differs between random points")
    return list(choices[0])


def invariant_total_derivative(rc: ReducedChart, F, i: int):
    return rc.invariant_total_derivative(as_expr(F), i)


def reduced_total_derivative(rc: ReducedChart, e, i: int):
    """Formal d/dy^i on the reduced jet space."""
    return total_derivative(e, i, rc.rctx)


def reduced_contact_forms(rc: ReducedChart, order: int):
    """thetabar^a_I = dv^a_I - v^a_{Ii} dy^i for |I| < order."""
    out = []
    for I in multi_indices_upto(rc.ctx.k, order - 1):
        for a in range(rc.rctx.q):
            s = rc.vjet(a, I)
            form = DifferentialForm.dcoord(s)
            for i, yi in enumerate(rc.y):
                form = form - DifferentialForm.dcoord(yi, rc.rctx.shift(s, i + 1))
            out.append(form)
    return out


# ---------------------------------------------------------------------------
# syzygies


def syzygies(rc: ReducedChart, *, seed=DEFAULT_SEED, probes=3) -> PDESystem:
    """Relations sum lambda_{a,i} v^a_i + lambda_0 = 0 among first invariant derivatives."""
    ctx = rc.ctx
    vorder = max(rc.upstairs_order(rc.vjet(a)) for a in range(rc.rctx.q))
    top = ctx.jets(vorder + 1, exact=True)
    firsts = [rc.vjet(a, (i,)) for a in range(rc.rctx.q) for i in range(1, ctx.k + 1)]
    lifts = [rc.lift_symbol(s) for s in firsts]
    P = [[simplify(sp.diff(L, t)) for t in top] for L in lifts]
    # relations: lambda . P = 0
    PT = [[P[r][c] for r in range(len(P))] for c in range(len(top))]
    kernel = nullspace(PT, seed=seed)
    _confirm_rank(PT, len(firsts) - len(kernel), seed, probes)
    rsys = rc.rctx.with_order(1)
    zero_top = {t: sp.S.Zero for t in top}
    eqs = []
    for lam in kernel:
        lam0 = -simplify(sum(l * L for l, L in zip(lam, lifts)).xreplace(zero_top))
        expr = rc.push_down(lam0) + sum(rc.push_down(l) * s for l, s in zip(lam, firsts))
        num, _ = sp.fraction(sp.together(expr))
        eqs.append(sp.expand(num))
    for e in eqs:
        if not is_zero(rc.lift(e), seed=seed):
            raise SymcoreError("syzygy does not vanish on the lifted invariants")
    return PDESystem(rsys, tuple(eqs))


def _confirm_rank(M, expected, seed, probes):
    if not M or not M[0]:
        return
    syms = sorted({s for row in M for e in row for s in sp.sympify(e).free_symbols}, key=lambda s: s.name)
    rng = random.Random(seed + 1)
    for _ in range(probes):
        pt = {s: sample_rational(rng) for s in syms}
        A = np.array([[to_float(e, pt) for e in row] for row in M])
        if np.linalg.matrix_rank(A, tol=1e-9 * max(1.0, np.abs(A).max())) != expected:
            raise RankEstimateUnstable("numeric rank disagrees with the exact rank")


def in_span(target, generators, variables, *, seed=DEFAULT_SEED) -> bool:
    """Whether ``target`` is a combination of ``generators`` with coefficients free of ``variables``.

    Expressions are compared as polynomials in ``variables``.
    """
    variables = list(variables)
    polys = [sp.Poly(sp.expand(g), *variables) for g in generators]
    tpoly = sp.Poly(sp.expand(target), *variables)
    monos = sorted({m for p in polys + [tpoly] for m in p.monoms()})
    A = [[p.coeff_monomial(m) for p in polys] for m in monos]
    b = [tpoly.coeff_monomial(m) for m in monos]
    try:
        solve_linear(A, b, particular=True, seed=seed)
    except SymcoreError:
        return False
    return True


# ---------------------------------------------------------------------------
# reduced ideal generators


@dataclass
class IdealGenerators:
    order: int
    one_forms: list
    two_forms: list
    provenance: dict = field(default_factory=dict)


def _basis_one_forms(rc, r):
    return [DifferentialForm.dcoord(s) for s in rc.reduced_coordinates(r)]


def _mod_contact(w: DifferentialForm, ctx: JetContext, r: int) -> DifferentialForm:
    """Replace du_J (|J| < r) by u_{Ji} dx^i, i.e. reduce modulo contact forms."""
    from .exterior import label_symbol, substitute_labels

    subs = {}
    for l in w.labels():
        s = label_symbol(l)
        c = ctx.classify(s) if s is not None else None
        if c is not None and len(c[1]) < r:
            subs[l] = DifferentialForm(1, {(coord_label(xi),): ctx.shift(s, i + 1) for i, xi in enumerate(ctx.x)})
    return substitute_labels(w, subs)


def _symbolic_generators(rc: ReducedChart, r: int, seed):
    ctx = rc.ctx
    coords = rc.reduced_coordinates(r)
    # dy before dv so that pivots land on base directions first
    basis = [DifferentialForm.dcoord(s) for s in coords]
    lifted = [_mod_contact(rc.lift_form(b), ctx, r) for b in basis]
    dthetas = [_mod_contact(d(t), ctx, r) for t in contact_forms(ctx, r)]

    def solve(deg):
        if deg == 1:
            cands = [((i,), f) for i, f in enumerate(lifted)]
            extra = []
        else:
            cands = [((i, j), lifted[i] ^ lifted[j]) for i, j in itertools.combinations(range(len(lifted)), 2)]
            extra = dthetas
        cols = sorted({k for _, f in cands for k in f.terms} | {k for f in extra for k in f.terms},
                      key=lambda k: [label_key(l) for l in k])
        A = [[f.coefficient(*k) for _, f in cands] + [-f.coefficient(*k) for f in extra] for k in cols]
        if not A:
            return []
        ker = nullspace(A, seed=seed)
        vecs = [v[: len(cands)] for v in ker]
        vecs = [v for v in vecs if any(x != 0 for x in v)]
        if not vecs:
            return []
        R, piv = _rref_rows(vecs, seed)
        out = []
        for row in R:
            if all(x == 0 for x in row):
                continue
            form = DifferentialForm.zero(deg)
            for (idx, _), c in zip(cands, row):
                if c != 0:
                    lab = tuple(basis[i] for i in idx)
                    w = lab[0] if deg == 1 else lab[0] ^ lab[1]
                    form = form + w * rc.push_down(c)
            out.append(_primitive(form))
        return out

    ones = solve(1)
    twos = solve(2)
    if ones and twos:
        twos = _drop_generated(rc, twos, ones, basis, r)
    return ones, twos


def _rref_rows(vecs, seed):
    from .symcore import rref

    return rref(vecs, seed=seed)


def _primitive(form: DifferentialForm) -> DifferentialForm:
    """Clear denominators and common factors of the coefficients."""
    coeffs = [sp.together(c) for c in form.terms.values()]
    if not coeffs:
        return form
    dens = [sp.fraction(c)[1] for c in coeffs]
    lcm = sp.lcm_list(dens) if len(dens) > 1 else dens[0]
    scaled = {k: sp.expand(sp.cancel(v * lcm)) for k, v in form.terms.items()}
    vals = list(scaled.values())
    g = vals[0]
    for v in vals[1:]:
        g = sp.gcd(g, v)
    if g != 0:
        scaled = {k: sp.cancel(v / g) for k, v in scaled.items()}
    return DifferentialForm(form.degree, scaled)


def _drop_generated(rc, twos, ones, basis, r):
    point = _random_jet_point(rc.ctx, r, rc.seed)
    gen = []
    for w in ones:
        lw = rc.lift_form(w)
        for b in basis:
            gen.append(_vec2(lw ^ rc.lift_form(b), rc.ctx, r, point))
        gen.append(_vec2(d(lw), rc.ctx, r, point))
    keep = []
    for w in twos:
        v = _vec2(rc.lift_form(w), rc.ctx, r, point)
        M = np.array(gen + [v])
        if _rank(M) > _rank(np.array(gen)):
            keep.append(w)
            gen.append(v)
    return keep


def reduced_ideal_generators(rc: ReducedChart, r: int, r_o: int, *, seed=DEFAULT_SEED) -> IdealGenerators:
    """Generators of the reduced ideal at order ``r``.

    Below ``r_o`` the generators are found by solving for reduced forms
    whose lift lies in the contact ideal; from ``r_o`` on the reduced
    contact forms generate, which is confirmed numerically.
    """
    n = rc.max_v_index(r)
    if n < 0 or any(rc.upstairs_order(s) > r for s in rc.y):
        raise NotYetFree(f"reduced coordinates are not all defined on J^{r}")
    prov = {"order": r, "y": [str(e) for e in rc.y_exprs], "v": [str(e) for e in rc.v_exprs]}
    if r < r_o:
        ones, twos = _symbolic_generators(rc, r, seed)
        return IdealGenerators(r, ones, twos, prov)
    thetas = reduced_contact_forms(rc, rc.max_v_index(r))
    report = ideal_dimensions(rc, r, seed=seed)
    prov["dimensions"] = report
    if report["obstruction"] or report["one_forms"] != report["contact_span"]:
        raise NotYetFree(f"order {r} reduced ideal is not generated by reduced contact forms: {report}")
    return IdealGenerators(r, thetas, [], prov)


# ---------------------------------------------------------------------------
# pointwise linear algebra


def _random_jet_point(ctx, r, seed):
    rng = random.Random(seed)
    return {s: sample_rational(rng) for s in ctx.coordinates(r + 1)}


def _rank(M, tol=1e-8):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int((s > tol * max(1.0, s[0])).sum())


def _grad(e, coords, point):
    e = sp.sympify(e)
    return np.array([to_float(sp.diff(e, s), point) if e.has(s) else 0.0 for s in coords])


def _vec1(w: DifferentialForm, ctx, r, point):
    coords = ctx.coordinates(r)
    return np.array([to_float(w.coefficient(coord_label(s)), point) for s in coords])


def _vec2(w: DifferentialForm, ctx, r, point):
    coords = ctx.coordinates(r)
    labs = [coord_label(s) for s in coords]
    return np.array([to_float(w.coefficient(a, b), point) for a, b in itertools.combinations(labs, 2)])


def _wedge_vec(a, b):
    n = len(a)
    return np.array([a[i] * b[j] - a[j] * b[i] for i, j in itertools.combinations(range(n), 2)])


def _intersection(A, B):
    """Basis (rows) of rowspace(A) intersected with rowspace(B)."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if A.size == 0 or B.size == 0:
        return np.zeros((0, A.shape[1] if A.size else B.shape[1]))
    A = _orth_rows(A)
    B = _orth_rows(B)
    N = null_space(np.hstack([A.T, -B.T]), rcond=1e-9)
    if N.size == 0:
        return np.zeros((0, A.shape[1]))
    return _orth_rows((A.T @ N[: A.shape[0]]).T)


def _orth_rows(M, tol=1e-9):
    M = np.atleast_2d(M)
    if M.size == 0:
        return M
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    keep = s > tol * max(1.0, s[0] if len(s) else 1.0)
    return vt[keep]


def ideal_dimensions(rc: ReducedChart, r: int, *, seed=DEFAULT_SEED):
    """Pointwise dimensions describing the reduced ideal at order ``r``.

    ``one_forms``: 1-forms of the reduced ideal; ``contact_span``: span of
    the lifted reduced contact forms (and their intersection with the
    former); ``two_forms``: degree-two part of the reduced ideal;
    ``generated``: the part of it generated by the 1-forms;
    ``obstruction`` = two_forms - generated.
    """
    ctx = rc.ctx
    point = _random_jet_point(ctx, r, seed)
    coords = ctx.coordinates(r)
    V = _orth_rows(np.array([_grad(rc.lift_symbol(s), coords, point) for s in rc.reduced_coordinates(r)]))
    C = np.array([_vec1(t, ctx, r, point) for t in contact_forms(ctx, r)]) if r > 0 else np.zeros((0, len(coords)))
    I1 = _intersection(V, C)
    thetas = [rc.lift_form(t) for t in reduced_contact_forms(rc, rc.max_v_index(r))]
    T = np.array([_vec1(t, ctx, r, point) for t in thetas]) if thetas else np.zeros((0, len(coords)))
    # degree two
    L2 = _orth_rows(np.array([_wedge_vec(V[i], V[j]) for i, j in itertools.combinations(range(len(V)), 2)]))
    ideal2 = [_wedge_vec(c, e) for c in C for e in np.eye(len(coords))]
    ideal2 += [_vec2(d(t), ctx, r, point) for t in contact_forms(ctx, r)]
    I2 = _intersection(L2, np.array(ideal2)) if ideal2 else np.zeros((0, L2.shape[1]))
    gen = [_wedge_vec(w, v) for w in I1 for v in V]
    gen += [_vec2(d(t), ctx, r, point) for t in thetas]
    G2 = _orth_rows(np.array(gen)) if gen else np.zeros((0, L2.shape[1]))
    contact = _rank(T) if len(T) else 0
    joint = _rank(np.vstack([I1, T])) if len(T) and len(I1) else max(len(I1), contact)
    generated = _in_dim(I2, G2)
    return {
        "order": r,
        "reduced_dim": int(len(V)),
        "one_forms": int(len(I1)),
        "contact_span": int(contact),
        "contact_joint": int(joint),
        "two_forms": int(len(I2)),
        "generated": generated,
        "obstruction": int(len(I2)) - generated,
    }


def _in_dim(I2, G2):
    """Dimension of I2 intersected with span(G2)."""
    if len(I2) == 0 or len(G2) == 0:
        return 0
    return int(len(_intersection(I2, G2)))


@dataclass
class CommutationReport:
    order: int
    passed: bool
    levels: list
    obstruction: list = field(default_factory=list)


def check_commutation(rc: ReducedChart, r: int, *, r_o=None, seed=DEFAULT_SEED) -> CommutationReport:
    """Certify that reducing the prolonged system equals prolonging the reduced one.

    At orders r and r+1 the reduced ideal must be generated by the lifted
    reduced contact forms; then reduction at r+1 is the prolongation of
    the contact system at r.
    """
    levels = [ideal_dimensions(rc, s, seed=seed) for s in (r, r + 1)]
    ok = all(
        lv["obstruction"] == 0 and lv["one_forms"] == lv["contact_span"] == lv["contact_joint"] for lv in levels
    )
    report = CommutationReport(r, ok, levels)
    if not ok:
        bad = next(lv for lv in levels if not (lv["obstruction"] == 0 and lv["one_forms"] == lv["contact_span"]))
        if bad["order"] == r and (r_o is None or r < r_o):
            try:
                gens = _symbolic_generators(rc, r, seed)
                report.obstruction = gens[1]
            except SymcoreError:
                pass
        raise CommutationFailure(
            f"reduction at order {bad['order']} is not generated by reduced contact forms "
            f"({bad['obstruction']} independent 2-forms missing)",
            report=report,
        )
    return report
