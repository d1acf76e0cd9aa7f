"""Lie groups in coordinates and their actions on jets."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field

import mpmath
import sympy as sp

from .exterior import (
    Coframe,
    DifferentialForm,
    SingularCoframe,
    coord_label,
    d,
    d_function,
    form_is_zero,
    horizontal_class,
    pullback,
)
from .jetspace import JetContext, contact_forms, total_derivative
from .symcore import (
    DEFAULT_SAMPLES,
    DEFAULT_SEED,
    RankDeficient,
    SymcoreError,
    as_expr,
    is_zero,
    sample_rational,
    simplify,
    solve_linear,
)


class SingularJacobian(SymcoreError):
    pass


class JacobiViolation(SymcoreError):
    pass


class NonTransversal(SymcoreError):
    pass


class EquivarianceFailure(SymcoreError):
    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class FreeActionFailure(SymcoreError):
    pass


class GroupLawFailure(SymcoreError):
    pass


def _mp(x):
    with mpmath.workdps(30):
        return mpmath.mpf(x.numerator) / x.denominator


def _numeric(e, subs):
    """Float value of ``e`` after substituting numbers."""
    v = sp.sympify(e).xreplace(subs)
    return complex(sp.N(v, 30)).real


@dataclass
class LieGroupChart:
    """Coordinates with multiplication, identity and inverse.

    ``multiplication`` is written in the coordinate names suffixed with
    ``_a`` (left factor) and ``_b`` (right factor).
    """

    coordinates: list
    multiplication: list
    identity: list
    inverse: list

    def __post_init__(self):
        self.coordinates = [str(c) for c in self.coordinates]
        self.multiplication = [as_expr(e) for e in self.multiplication]
        self.identity = [as_expr(e) for e in self.identity]
        self.inverse = [as_expr(e) for e in self.inverse]
        if not (len(self.multiplication) == len(self.identity) == len(self.inverse) == self.dim):
            raise ValueError("group law has the wrong number of components")

    @property
    def dim(self):
        return len(self.coordinates)

    @property
    def symbols(self):
        return [sp.Symbol(c) for c in self.coordinates]

    def _ab(self, a, b):
        subs = {}
        for c, x, y in zip(self.coordinates, a, b):
            subs[sp.Symbol(c + "_a")] = sp.sympify(x)
            subs[sp.Symbol(c + "_b")] = sp.sympify(y)
        return subs

    def multiply(self, a, b):
        subs = self._ab(a, b)
        return [m.xreplace(subs) for m in self.multiplication]

    def invert(self, g):
        subs = dict(zip(self.symbols, [sp.sympify(x) for x in g]))
        return [e.xreplace(subs) for e in self.inverse]

    def sample(self, rng, radius=sp.Rational(1, 2)):
        return [sp.Rational(sample_rational(rng)) * radius / 3 for _ in range(self.dim)]

    def verify(self, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED):
        """Check identity, inverse and associativity at random elements."""
        rng = random.Random(seed)
        for _ in range(samples):
            a, b, c = self.sample(rng), self.sample(rng), self.sample(rng)
            checks = [
                (self.multiply(self.identity, a), a),
                (self.multiply(a, self.identity), a),
                (self.multiply(a, self.invert(a)), self.identity),
                (self.multiply(self.multiply(a, b), c), self.multiply(a, self.multiply(b, c))),
            ]
            for lhs, rhs in checks:
                for x, y in zip(lhs, rhs):
                    if abs(_numeric(x - y, {})) > 1e-20:
                        raise GroupLawFailure(f"group law fails at a={a}, b={b}, c={c}")
        return True


def maurer_cartan_right(G: LieGroupChart, seed=DEFAULT_SEED):
    """Right-invariant forms mu = (dm(a,g)/da at a=e)^-1 dg."""
    if G.dim == 0:
        return []
    g = G.symbols
    a = [sp.Symbol(c + "_a") for c in G.coordinates]
    m = G.multiply(a, g)
    at_e = dict(zip(a, G.identity))
    M = [[simplify(sp.diff(mi, aj).xreplace(at_e)) for aj in a] for mi in m]
    rhs = [[sp.S.One if i == j else sp.S.Zero for i in range(G.dim)] for j in range(G.dim)]
    try:
        cols = solve_linear(M, rhs, seed=seed)
    except RankDeficient as exc:
        raise SingularJacobian("multiplication Jacobian at the identity is singular") from exc
    # cols[j] is column j of M^-1
    return [
        DifferentialForm(1, {(coord_label(g[j]),): cols[j][i] for j in range(G.dim)}).simplified()
        for i in range(G.dim)
    ]


def mc_labels(n, name="mu"):
    return [f"{name}[{i + 1}]" for i in range(n)]


def structure_constants(G: LieGroupChart, seed=DEFAULT_SEED):
    """c[i][j][k] with d mu^i = -1/2 c^i_jk mu^j ^ mu^k."""
    n = G.dim
    mus = maurer_cartan_right(G, seed=seed)
    if n == 0:
        return []
    labels = mc_labels(n)
    cf = Coframe(labels, mus, coordinates=[coord_label(s) for s in G.symbols], seed=seed)
    c = [[[sp.S.Zero] * n for _ in range(n)] for _ in range(n)]
    for i in range(n):
        dm = cf.decompose(d(mus[i]))
        for j, k in itertools.combinations(range(n), 2):
            coeff = simplify(dm.coefficient(labels[j], labels[k]))
            if coeff.free_symbols:
                if not all(is_zero(sp.diff(coeff, s), seed=seed) for s in coeff.free_symbols):
                    raise JacobiViolation("structure functions are not constant")
                coeff = sp.nsimplify(sp.N(coeff.xreplace({s: 0 for s in coeff.free_symbols}), 40), rational=True)
            c[i][j][k] = -coeff
            c[i][k][j] = coeff
    check_jacobi(c)
    return c


def check_jacobi(c):
    """Raise JacobiViolation unless the constants define a Lie algebra."""
    n = len(c)
    for i, j, k, m in itertools.product(range(n), repeat=4):
        if c[m][j][k] != -c[m][k][j]:
            raise JacobiViolation("structure constants are not antisymmetric")
        total = sum(
            c[l][j][k] * c[m][l][i] + c[l][k][i] * c[m][l][j] + c[l][i][j] * c[m][l][k] for l in range(n)
        )
        if total != 0:
            raise JacobiViolation(f"Jacobi identity fails for indices ({i},{j},{k}) component {m}")
    return True


def ce_labels(n):
    return mc_labels(n, "eps")


def ce_differential(c):
    """Structure map eps^i -> -1/2 c^i_jk eps^j ^ eps^k as 2-forms."""
    n = len(c)
    labels = ce_labels(n)
    return {
        labels[i]: DifferentialForm(
            2, {(labels[j], labels[k]): -c[i][j][k] for j, k in itertools.combinations(range(n), 2)}
        )
        for i in range(n)
    }


def _ce_matrix(c, t):
    """Matrix of d_CE from degree t to t+1 in the sorted-subset bases."""
    n = len(c)
    labels = ce_labels(n)
    src = list(itertools.combinations(range(n), t))
    dst = list(itertools.combinations(range(n), t + 1))
    structure = ce_differential(c)
    M = sp.zeros(len(dst), len(src))
    for col, S in enumerate(src):
        form = DifferentialForm(t, {tuple(labels[i] for i in S): 1})
        image = d(form, structure)
        for row, T in enumerate(dst):
            M[row, col] = image.coefficient(*[labels[i] for i in T])
    return M, src, dst


def ce_cohomology(c, t: int):
    """Representative cocycles of H^t of the Lie algebra, as forms in eps labels."""
    n = len(c)
    if t < 0 or t > n:
        return []
    labels = ce_labels(n)
    src = list(itertools.combinations(range(n), t))
    if t < n:
        D, _, _ = _ce_matrix(c, t)
        cocycles = D.nullspace()
    else:
        cocycles = [sp.eye(len(src))[:, i] for i in range(len(src))]
    if t > 0:
        B, _, _ = _ce_matrix(c, t - 1)
        image = B.columnspace()
    else:
        image = []
    chosen = list(image)
    reps = []
    for z in cocycles:
        trial = sp.Matrix.hstack(*(chosen + [z])) if chosen else z
        if trial.rank() > len(chosen):
            chosen.append(z)
            reps.append(z)
    return [
        DifferentialForm(t, {tuple(labels[i] for i in S): z[r] for r, S in enumerate(src)}) for z in reps
    ]


@dataclass
class GroupAction:
    """Point action X(g; x, u), U(g; x, u) of a chart on a jet base."""

    group: LieGroupChart
    ctx: JetContext
    X: list
    U: list
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.X = [as_expr(e) for e in self.X]
        self.U = [as_expr(e) for e in self.U]
        if len(self.X) != self.ctx.k or len(self.U) != self.ctx.q:
            raise ValueError("action has the wrong number of components")

    def prolonged(self, r: int) -> dict:
        """Map every coordinate of J^r to its transform (g symbolic)."""
        if r in self._cache:
            return self._cache[r]
        ctx = self.ctx
        if r == 0:
            out = dict(zip(ctx.x, self.X))
            out.update({ctx.jet(a): self.U[a] for a in range(ctx.q)})
            self._cache[0] = out
            return out
        prev = self.prolonged(r - 1)
        Winv = self._w_inverse()
        out = dict(prev)
        from .symcore import multi_indices

        for J in multi_indices(ctx.k, r - 1):
            for a in range(ctx.q):
                UJ = prev[ctx.jet(a, J)]
                DU = [total_derivative(UJ, j, ctx) for j in range(1, ctx.k + 1)]
                for i in range(1, ctx.k + 1):
                    target = ctx.jet(a, J + (i,))
                    if target in out:
                        continue
                    val = sum(Winv[j][i - 1] * DU[j] for j in range(ctx.k))
                    out[target] = _tidy(val)
        self._cache[r] = out
        return out

    def _w_inverse(self):
        if "Winv" not in self._cache:
            ctx = self.ctx
            W = sp.Matrix(ctx.k, ctx.k, lambda i, j: total_derivative(self.X[i], j + 1, ctx))
            det = simplify(W.det())
            if is_zero(det):
                raise NonTransversal("horizontal Jacobian of the action is identically zero")
            self._cache["Winv"] = [[_tidy(e) for e in row] for row in W.inv().tolist()]
        return self._cache["Winv"]

    def transform(self, g, r: int) -> dict:
        """Prolonged action map with group parameters fixed to ``g``."""
        subs = dict(zip(self.group.symbols, [sp.sympify(v) for v in g]))
        return {k: v.xreplace(subs) for k, v in self.prolonged(r).items()}

    def act(self, g, point: dict, r: int) -> dict:
        """Numeric image of a jet point."""
        subs = dict(zip(self.group.symbols, [sp.sympify(v) for v in g]))
        subs.update({k: sp.sympify(v) for k, v in point.items()})
        return {k: _numeric(v, subs) for k, v in self.prolonged(r).items()}

    def verify(self, r=0, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED):
        """Identity acts trivially and the action composes with the group law."""
        rng = random.Random(seed)
        coords = self.ctx.coordinates(r)
        for _ in range(samples):
            z = {s: sp.Rational(sample_rational(rng)) / 3 for s in coords}
            g, h = self.group.sample(rng), self.group.sample(rng)
            ez = self.act(self.group.identity, z, r)
            hz = self.act(h, z, r)
            ghz = self.act(g, hz, r)
            mz = self.act(self.group.multiply(g, h), z, r)
            for s in coords:
                if abs(ez[s] - float(z[s])) > 1e-9 or abs(ghz[s] - mz[s]) > 1e-9 * (1 + abs(mz[s])):
                    raise GroupLawFailure(f"action axiom fails at {s}")
        return True


def _tidy(e):
    e = sp.sympify(e)
    try:
        return sp.factor_terms(sp.cancel(sp.together(e)))
    except sp.PolynomialError:
        return e


@dataclass
class MovingFrame:
    """Group coordinates as functions on jets of order ``order``."""

    components: list
    order: int

    def __post_init__(self):
        self.components = [as_expr(e) for e in self.components]


def _frame_point(ctx, r, rng):
    # small coordinates keep angle-type frames on a single branch
    return {s: sp.Rational(sample_rational(rng)) / 3 for s in ctx.coordinates(r)}


def verify_frame(A: GroupAction, rho: MovingFrame, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED):
    """Check rho(g z) g = rho(z) numerically; returns the max residual."""
    G = A.group
    if len(rho.components) != G.dim:
        raise EquivarianceFailure("frame has the wrong number of components")
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(samples):
        z = _frame_point(A.ctx, rho.order, rng)
        g = G.sample(rng)
        gz = A.act(g, z, rho.order)
        rho_gz = [_numeric(c, {k: sp.Float(v, 30) for k, v in gz.items()}) for c in rho.components]
        rho_z = [_numeric(c, z) for c in rho.components]
        back = [_numeric(e, {}) for e in G.multiply(rho_gz, g)]
        res = max(abs(p - q) for p, q in zip(back, rho_z)) if G.dim else 0.0
        worst = max(worst, res)
        if res > 1e-8:
            raise EquivarianceFailure(f"frame is not right-equivariant (residual {res:.3g})", witness=(z, g))
    return {"samples": samples, "max_residual": worst}


def frame_substitution(A: GroupAction, rho: MovingFrame):
    return dict(zip(A.group.symbols, rho.components))


def invariantize(A: GroupAction, rho: MovingFrame, e):
    """e evaluated at rho(z) . z."""
    e = as_expr(e)
    r = max(A.ctx.jet_order(e), 0)
    fsub = frame_substitution(A, rho)
    images = {k: v.xreplace(fsub) for k, v in A.prolonged(r).items()}
    return _tidy(e.xreplace(images))


def check_invariant(A: GroupAction, e, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED, tol=1e-9):
    """Numerically confirm e(g z) = e(z) at random (g, z)."""
    e = as_expr(e)
    r = max(A.ctx.jet_order(e), 0)
    rng = random.Random(seed)
    for _ in range(samples):
        z = _frame_point(A.ctx, r, rng)
        g = A.group.sample(rng)
        gz = A.act(g, z, r)
        lhs = _numeric(e, {k: sp.Float(v, 30) for k, v in gz.items()})
        rhs = _numeric(e, z)
        if abs(lhs - rhs) > tol * (1 + abs(rhs)):
            return False
    return True


@dataclass
class ContactBasisElement:
    alpha: int
    index: tuple
    form: DifferentialForm


def frozen_contact_basis(A: GroupAction, rho: MovingFrame, r: int):
    """eta_J = (A_g^* theta_J) at g = rho(z), differentiating with g held fixed."""
    ctx = A.ctx
    from .symcore import multi_indices_upto

    images = A.prolonged(r)
    coords = ctx.coordinates(r)
    fsub = frame_substitution(A, rho)
    out = []
    for J in multi_indices_upto(ctx.k, r - 1):
        for a in range(ctx.q):
            UJ = images[ctx.jet(a, J)]
            form = _d_restricted(UJ, coords)
            for i in range(ctx.k):
                form = form - _d_restricted(images[ctx.x[i]], coords) * images[ctx.jet(a, J + (i + 1,))]
            form = form.map_coefficients(lambda c: _tidy(c.xreplace(fsub)))
            out.append(ContactBasisElement(a, J, form))
    return out


def _d_restricted(f, coords):
    f = sp.sympify(f)
    return DifferentialForm(1, {(coord_label(s),): sp.diff(f, s) for s in coords if f.has(s)})


def invariant_contact_basis(A: GroupAction, rho: MovingFrame, r: int, explicit=None, *, seed=DEFAULT_SEED,
                            samples=4, check=True):
    """Invariant contact forms spanning each filtration level of the contact ideal.

    Without ``explicit`` the forms come from freezing the group parameters
    at the frame.  ``explicit`` is a list of ``ContactBasisElement`` over jet
    differentials; it is checked for being contact, filtered and invariant.
    """
    ctx = A.ctx
    if A.group.dim == 0:
        thetas = contact_forms(ctx, r)
        from .symcore import multi_indices_upto

        idx = [(a, J) for J in multi_indices_upto(ctx.k, r - 1) for a in range(ctx.q)]
        return [ContactBasisElement(a, J, f) for (a, J), f in zip(idx, thetas)]
    basis = explicit if explicit is not None else frozen_contact_basis(A, rho, r)
    if check:
        check_contact_basis(A, basis, r, seed=seed, samples=samples)
    return basis


def check_contact_basis(A: GroupAction, basis, r, *, seed=DEFAULT_SEED, samples=4):
    ctx = A.ctx.with_order(r)
    for el in basis:
        if not form_is_zero(horizontal_class(el.form, ctx), seed=seed):
            raise FreeActionFailure(f"basis form {el.index} is not a contact form")
    # filtration: forms of order <= s span the same space as theta_J, |J| <= s
    thetas = contact_forms(ctx, r)
    from .symcore import multi_indices_upto

    idx = [J for J in multi_indices_upto(ctx.k, r - 1) for _ in range(ctx.q)]
    rng = random.Random(seed)
    for _ in range(2):
        pt = {s: sample_rational(rng) for s in ctx.coordinates(r + 1)}
        for level in range(r):
            sub_eta = [el.form for el in basis if len(el.index) <= level]
            sub_theta = [t for t, J in zip(thetas, idx) if len(J) <= level]
            if _span_rank(sub_eta + sub_theta, pt) != len(sub_theta) or _span_rank(sub_eta, pt) != len(sub_theta):
                raise FreeActionFailure(f"basis does not span filtration level {level}")
    # invariance under random group elements
    for _ in range(samples):
        g = A.group.sample(rng)
        phi = A.transform(g, r)
        pt = {s: sample_rational(rng) / 3 for s in ctx.coordinates(r + 1)}
        for el in basis:
            pulled = pullback(phi, el.form)
            diff = pulled - el.form
            for coeff in diff.terms.values():
                val = _numeric(coeff, {k: sp.Rational(v) for k, v in pt.items()})
                if abs(val) > 1e-8:
                    raise FreeActionFailure(f"basis form {el.index} is not invariant")
    return True


def _span_rank(forms, pt):
    import numpy as np

    from .exterior import label_key

    labels = sorted({l for f in forms for k in f.terms for l in k}, key=label_key)
    subs = {k: sp.Rational(v) for k, v in pt.items()}
    rows = [[_numeric(f.coefficient(l), subs) for l in labels] for f in forms]
    if not rows or not labels:
        return 0
    return int(np.linalg.matrix_rank(np.array(rows, dtype=float), tol=1e-9))


def pullback_maurer_cartan(G: LieGroupChart, rho: MovingFrame, seed=DEFAULT_SEED):
    """zeta^l = rho^* mu^l as forms over jet differentials."""
    mus = maurer_cartan_right(G, seed=seed)
    phi = dict(zip(G.symbols, rho.components))
    return [pullback(phi, m).map_coefficients(_tidy) for m in mus]


__all__ = [
    "ContactBasisElement",
    "EquivarianceFailure",
    "FreeActionFailure",
    "GroupAction",
    "GroupLawFailure",
    "JacobiViolation",
    "LieGroupChart",
    "MovingFrame",
    "NonTransversal",
    "SingularCoframe",
    "SingularJacobian",
    "ce_cohomology",
    "check_contact_basis",
    "check_invariant",
    "check_jacobi",
    "d_function",
    "frozen_contact_basis",
    "invariant_contact_basis",
    "invariantize",
    "maurer_cartan_right",
    "pullback_maurer_cartan",
    "structure_constants",
    "verify_frame",
]
