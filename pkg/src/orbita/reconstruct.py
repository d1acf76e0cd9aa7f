"""Numeric reconstruction of upstairs solutions from reduced solutions.

Along a reduced solution parametrized by t, the invariant relations
``c(j u) = c(t)`` are linear in their top jets, so every jet of the
solved orders is a function of the lower jets and t.  The remaining jets
and t are integrated with fixed-step RK4 along coordinate directions
(first x^1, then fibers along x^2 for surfaces).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.optimize import least_squares

from .jetspace import total_derivative
from .liegroup import GroupAction
from .reduction import ReducedChart
from .symcore import SymcoreError, as_expr, multi_indices

DEFAULT_STEP = 1e-3


class StepFailure(SymcoreError):
    pass


class ToleranceExceeded(SymcoreError):
    pass


class NoMatch(SymcoreError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class ReducedSolution:
    """k-parameter family t -> values of reduced coordinates.

    ``values`` maps reduced symbols to callables of the parameter vector;
    ``gradients`` gives their derivatives with respect to t.
    """

    k: int
    values: dict
    gradients: dict
    source: str = ""

    @classmethod
    def from_expressions(cls, params, exprs: dict):
        params = [sp.Symbol(p) if isinstance(p, str) else p for p in params]
        vals, grads = {}, {}
        for s, e in exprs.items():
            s = sp.Symbol(s) if isinstance(s, str) else s
            e = as_expr(e)
            f = sp.lambdify(params, e, modules="math")
            g = sp.lambdify(params, [sp.diff(e, p) for p in params], modules="math")
            vals[s] = lambda t, f=f: float(f(*t))
            grads[s] = lambda t, g=g: np.array(g(*t), dtype=float)
        src = "; ".join(f"{s} = {e}" for s, e in exprs.items())
        return cls(len(params), vals, grads, src)

    @classmethod
    def from_csv(cls, path):
        """Curve samples: a column ``t`` followed by one column per reduced coordinate."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        t = np.array([float(r["t"]) for r in rows])
        vals, grads = {}, {}
        for name in rows[0]:
            if name == "t":
                continue
            spline = CubicSpline(t, [float(r[name]) for r in rows])
            der = spline.derivative()
            vals[sp.Symbol(name)] = lambda tt, s=spline: float(s(tt[0]))
            grads[sp.Symbol(name)] = lambda tt, s=der: np.array([float(s(tt[0]))])
        return cls(1, vals, grads, str(path))


@dataclass
class _Relation:
    symbol: sp.Symbol
    order: int
    top: list  # jets of that order
    coeffs: object  # callable(jets) -> list of d c/d top
    rest: object  # callable(jets) -> c with top jets set to zero
    total: list  # callables for D_j c (or None if not computable)


@dataclass
class ReconstructedSolution:
    k: int
    grid: list  # coordinate arrays along each direction
    jets: dict  # symbol -> array of shape grid
    params: np.ndarray  # shape grid + (k,)
    independent: list
    error_estimate: float = 0.0

    def points(self):
        """Rows (x..., u...) of the sampled submanifold."""
        cols = [np.asarray(self.jets[s]).ravel() for s in self.independent]
        return np.column_stack(cols)


@dataclass
class Reconstructor:
    chart: ReducedChart
    solution: ReducedSolution
    step: float = DEFAULT_STEP
    _relations: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        ctx = self.chart.ctx
        if self.solution.k != ctx.k:
            raise ValueError("reduced solution has the wrong dimension")
        rels = []
        for s in self.solution.values:
            lifted = self.chart.lift_symbol(s)
            order = ctx.jet_order(lifted)
            rels.append((s, lifted, order))
        rels.sort(key=lambda r: r[2])
        self.solved_orders = sorted({r[2] for r in rels})
        lo, hi = self.solved_orders[0], self.solved_orders[-1]
        if self.solved_orders != list(range(lo, hi + 1)):
            raise ValueError("relations leave a gap in the solved jet orders")
        self.state_jets = ctx.x + [s for s in ctx.jets(lo - 1)] if lo > 0 else list(ctx.x)
        self.all_jets = ctx.coordinates(hi)
        args = self.all_jets + [ctx.jet(a, I) for a in range(ctx.q) for I in _next_level(ctx, hi)]
        self._args = args
        for s, lifted, order in rels:
            top = ctx.jets(order, exact=True)
            zero = {t: 0 for t in top}
            coeffs = sp.lambdify(args, [sp.diff(lifted, t) for t in top], modules="math")
            rest = sp.lambdify(args, lifted.xreplace(zero), modules="math")
            total = []
            for j in range(1, ctx.k + 1):
                Dc = total_derivative(lifted, j, ctx)
                total.append(sp.lambdify(args, Dc, modules="math") if ctx.jet_order(Dc) <= hi else None)
            self._relations.append(_Relation(s, order, top, coeffs, rest, total))
        for j in range(ctx.k):
            if not any(rel.total[j] is not None for rel in self._relations):
                raise ValueError("no relation can be differentiated along the solution")

    # pointwise completion -------------------------------------------------
    def complete(self, state: dict, t):
        """Fill in solved jets from the relations at parameter t."""
        vals = dict(state)
        vals.update({s: 0.0 for s in self._args if s not in vals})
        for order in self.solved_orders:
            rels = [r for r in self._relations if r.order == order]
            top = rels[0].top
            argv = [vals[s] for s in self._args]
            try:
                A = np.array([r.coeffs(*argv) for r in rels], dtype=float)
                b = np.array([self.solution.values[r.symbol](t) - r.rest(*argv) for r in rels])
            except (ZeroDivisionError, ValueError, OverflowError) as exc:
                raise StepFailure(f"pole while solving order-{order} jets") from exc
            sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
            if rank < len(top) or not np.all(np.isfinite(sol)):
                raise StepFailure(f"order-{order} jets are not determined here")
            vals.update(dict(zip(top, sol)))
        return vals

    def _rhs(self, j, state_vec, t):
        """Derivative of (state, t) along x^{j+1}."""
        ctx = self.chart.ctx
        state = dict(zip(self.state_jets, state_vec))
        vals = self.complete(state, t)
        argv = [vals[s] for s in self._args]
        dstate = []
        for s in self.state_jets:
            if s in ctx.x:
                dstate.append(1.0 if s == ctx.x[j] else 0.0)
            else:
                dstate.append(vals[ctx.shift(s, j + 1)])
        rows, rhs = [], []
        for r in self._relations:
            if r.total[j] is None:
                continue
            rows.append(self.solution.gradients[r.symbol](t))
            rhs.append(r.total[j](*argv))
        dt = np.linalg.pinv(np.array(rows, dtype=float)) @ np.array(rhs, dtype=float)
        out = np.concatenate([np.array(dstate, dtype=float), dt])
        if not np.all(np.isfinite(out)):
            raise StepFailure("non-finite derivative")
        return out

    def _integrate(self, j, state_vec, t, length):
        n = int(round(abs(length) / self.step))
        h = np.sign(length) * self.step if n else 0.0
        y = np.concatenate([np.asarray(state_vec, dtype=float), np.asarray(t, dtype=float)])
        m = len(self.state_jets)
        path = [y.copy()]
        f = lambda z: self._rhs(j, z[:m], z[m:])
        for _ in range(n):
            k1 = f(y)
            k2 = f(y + h / 2 * k1)
            k3 = f(y + h / 2 * k2)
            k4 = f(y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            path.append(y.copy())
        return np.array(path)

    def run(self, initial: dict, t0, lengths, axes=(0, 1)):
        """Integrate from ``initial`` (values of the state jets) at parameter t0.

        ``lengths`` gives the extent along each independent variable.  For
        surfaces, ``axes`` picks the spine direction first; the sample grid
        is always indexed (x^1, x^2).
        """
        ctx = self.chart.ctx
        state0 = np.array([float(initial[s]) for s in self.state_jets])
        m = len(self.state_jets)
        t0 = np.atleast_1d(np.asarray(t0, dtype=float))
        if ctx.k == 1:
            samples = self._integrate(0, state0, t0, lengths[0])
        elif ctx.k == 2:
            first, second = axes
            spine = self._integrate(first, state0, t0, lengths[first])
            samples = np.array([self._integrate(second, row[:m], row[m:], lengths[second]) for row in spine])
            if first == 1:
                samples = np.transpose(samples, (1, 0, 2))
        else:
            raise NotImplementedError("reconstruction is implemented for one or two independent variables")
        jets = {}
        flat = samples.reshape(-1, samples.shape[-1])
        completed = [self.complete(dict(zip(self.state_jets, row[:m])), row[m:]) for row in flat]
        shape = samples.shape[:-1]
        for s in self.all_jets:
            jets[s] = np.array([c[s] for c in completed]).reshape(shape)
        params = samples[..., m:]
        grid = [np.asarray(jets[x]) for x in ctx.x]
        return ReconstructedSolution(ctx.k, grid, jets, params, list(ctx.x) + [ctx.jet(a) for a in range(ctx.q)])


def _next_level(ctx, hi):
    return multi_indices(ctx.k, hi + 1)


def reconstruct(chart: ReducedChart, solution: ReducedSolution, initial: dict, t0, lengths, step=DEFAULT_STEP,
                tol=1e-6, axes=(0, 1), estimate_error=True):
    """Sample the upstairs solution over ``solution`` starting from ``initial``.

    The global error is estimated by step doubling (Richardson, RK4) on the
    shared samples, and the projection of the result is compared with the
    reduced solution; either exceeding ``tol`` raises ToleranceExceeded.
    """
    rec = Reconstructor(chart, solution, step)
    out = rec.run(initial, t0, lengths, axes)
    out.error_estimate = 0.0
    if estimate_error and all(round(abs(L) / step) % 2 == 0 for L in lengths):
        coarse = Reconstructor(chart, solution, 2 * step).run(initial, t0, lengths, axes)
        sub = tuple(slice(None, None, 2) for _ in range(chart.ctx.k))
        fine = np.column_stack([np.asarray(out.jets[s])[sub].ravel() for s in out.independent])
        out.error_estimate = float(np.max(np.abs(fine - coarse.points()))) / 15
        if out.error_estimate > tol:
            raise ToleranceExceeded(f"estimated integration error {out.error_estimate:.3g} exceeds {tol:.3g}")
    worst = projection_residual(chart, solution, out)
    if worst > tol:
        raise ToleranceExceeded(f"projection deviates from the reduced solution by {worst:.3g}")
    return out


def projection_residual(chart: ReducedChart, solution: ReducedSolution, rec: ReconstructedSolution):
    """Max |c(j u) - c(t)| over the reduced coordinates defining the solution."""
    worst = 0.0
    flat_params = rec.params.reshape(-1, rec.params.shape[-1])
    for s, fn in solution.values.items():
        lifted = chart.lift_symbol(s)
        syms = sorted(lifted.free_symbols, key=lambda z: z.name)
        f = sp.lambdify(syms, lifted, modules="math")
        cols = [np.asarray(rec.jets[z]).ravel() for z in syms]
        for i, t in enumerate(flat_params):
            val = f(*[c[i] for c in cols])
            worst = max(worst, abs(val - fn(t)))
    return worst


def _apply(action: GroupAction, g, pts):
    """Act on rows (x..., u...) with group parameters ``g``."""
    ctx = action.ctx
    syms = list(action.group.symbols) + ctx.x + [ctx.jet(a) for a in range(ctx.q)]
    fns = [sp.lambdify(syms, e, modules="numpy") for e in action.X + action.U]
    cols = [np.full(len(pts), gi) for gi in g] + [pts[:, i] for i in range(pts.shape[1])]
    return np.column_stack([np.broadcast_to(f(*cols), (len(pts),)) for f in fns])


def group_relate(action: GroupAction, s1: ReconstructedSolution, s2: ReconstructedSolution, tol=1e-6):
    """Group element g with g . s1 lying on s2, fitted by least squares.

    Returns (g, residual); raises NoMatch when the residual exceeds ``tol``.
    """
    k = action.ctx.k
    if k == 1:
        x2 = np.asarray(s2.grid[0]).ravel()
        u2 = np.asarray(s2.jets[action.ctx.jet(0)]).ravel()
        order = np.argsort(x2)
        surface = CubicSpline(x2[order], u2[order])
        lo, hi = x2.min(), x2.max()

        def on_surface(p):
            inside = (p[:, 0] >= lo) & (p[:, 0] <= hi)
            return p[inside, 1] - surface(p[inside, 0]), inside
    elif k == 2:
        xs = np.asarray(s2.grid[0])[:, 0]
        ys = np.asarray(s2.grid[1])[0, :]
        surface = RectBivariateSpline(xs, ys, np.asarray(s2.jets[action.ctx.jet(0)]), kx=3, ky=3)
        box = (xs.min(), xs.max(), ys.min(), ys.max())

        def on_surface(p):
            inside = (p[:, 0] >= box[0]) & (p[:, 0] <= box[1]) & (p[:, 1] >= box[2]) & (p[:, 1] <= box[3])
            return p[inside, 2] - surface.ev(p[inside, 0], p[inside, 1]), inside
    else:
        raise NotImplementedError
    pts = s1.points()
    start2 = s2.points()[0]

    def fit(g):
        moved = _apply(action, g, pts)
        res, inside = on_surface(moved)
        full = np.zeros(len(pts))
        full[inside] = res
        missing = len(pts) - inside.sum()
        # keep the optimizer near overlapping configurations
        anchor = _apply(action, g, pts[:1])[0] - start2
        return np.concatenate([full, 1e-3 * anchor, np.full(1, 1e-3 * missing)])

    g0 = _initial_guess(action, s1, s2)
    best = least_squares(fit, g0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    moved = _apply(action, best.x, pts)
    res, inside = on_surface(moved)
    residual = float(np.max(np.abs(res))) if inside.any() else np.inf
    if inside.sum() < max(4, len(pts) // 10) or residual > tol:
        raise NoMatch(f"no group element relates the reconstructions (residual {residual:.3g})", residual)
    return best.x, residual


def _initial_guess(action: GroupAction, s1, s2):
    """Match the first prolonged sample point of s1 to that of s2."""
    ctx = action.ctx
    order = 1
    syms = ctx.coordinates(order)
    z1 = {s: float(np.asarray(s1.jets[s]).ravel()[0]) for s in syms if s in s1.jets}
    z2 = {s: float(np.asarray(s2.jets[s]).ravel()[0]) for s in syms if s in s2.jets}
    images = action.prolonged(order)
    gsyms = action.group.symbols
    fns = {s: sp.lambdify(gsyms + syms, images[s], modules="math") for s in z1}

    def mismatch(g):
        args = list(g) + [z1.get(s, 0.0) for s in syms]
        return np.array([fns[s](*args) - z2[s] for s in z1])

    return least_squares(mismatch, np.zeros(len(gsyms))).x


def to_csv(rec: ReconstructedSolution, path, symbols=None):
    symbols = symbols or rec.independent
    cols = [np.asarray(rec.jets[s]).ravel() for s in symbols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([s.name for s in symbols])
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
