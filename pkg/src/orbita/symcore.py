"""Exact expression kernel.

Expressions are sympy trees restricted to rational arithmetic, rational
powers and a closed whitelist of elementary functions.  Zero testing is
structural canonicalization followed by evaluation at seeded random
rational points at high precision.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import sympy as sp
from sympy.printing.precedence import PRECEDENCE, precedence
from sympy.printing.str import StrPrinter

DEFAULT_SEED = 42
DEFAULT_SAMPLES = 8

_MP_DPS = 50
_ZERO_TOL = mpmath.mpf("1e-25")

FUNCTIONS = {
    "sqrt": sp.sqrt,
    "atan": sp.atan,
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "log": sp.log,
}
_FUNC_CLASSES = (sp.atan, sp.sin, sp.cos, sp.exp, sp.log)


class SymcoreError(Exception):
    pass


class ParseError(SymcoreError):
    def __init__(self, msg, text=None, pos=None):
        self.text = text
        self.pos = pos
        if text is not None and pos is not None:
            msg = f"{msg} at column {pos + 1}: {text!r}"
        super().__init__(msg)


class DivisionByZero(SymcoreError):
    pass


class PoleError(SymcoreError):
    pass


class DomainError(SymcoreError):
    pass


class IndeterminateAtAllSamples(SymcoreError):
    pass


class Inconsistent(SymcoreError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class RankDeficient(SymcoreError):
    def __init__(self, msg, free=()):
        super().__init__(msg)
        self.free = tuple(free)


# ---------------------------------------------------------------------------
# multi-indices and variable names


def multi_index(*entries) -> tuple:
    """Normalized (sorted) multi-index."""
    if len(entries) == 1 and isinstance(entries[0], (tuple, list)):
        entries = entries[0]
    return tuple(sorted(int(e) for e in entries))


def multi_indices(k: int, order: int) -> list[tuple]:
    """All normalized multi-indices over 1..k of length exactly ``order``."""
    out = [()]
    for _ in range(order):
        out = [I + (i,) for I in out for i in range(I[-1] if I else 1, k + 1)]
    return out


def multi_indices_upto(k: int, order: int) -> list[tuple]:
    return [I for n in range(order + 1) for I in multi_indices(k, n)]


_BRACKET = re.compile(r"^(?P<base>[A-Za-z_][A-Za-z0-9_]*)(?:\[(?P<inner>[^\]]*)\])?$")


def _fmt_index(I) -> str:
    return ",".join(str(i) for i in I)


def jet_name(base: str, I=()) -> str:
    """Name of the jet coordinate of ``base`` along multi-index ``I``.

    ``u`` + (1,1) -> ``u[1,1]``; ``v[a=2]`` + (1,) -> ``v[a=2; I=1]``.
    """
    I = multi_index(I)
    m = _BRACKET.match(base)
    if m is None:
        raise ValueError(f"bad variable name {base!r}")
    inner = m.group("inner")
    if inner is None:
        return f"{base}[{_fmt_index(I)}]" if I else base
    comp, J = _parse_inner(inner)
    return _format_name(m.group("base"), comp, multi_index(J + I))


def split_jet_name(name: str):
    """Inverse of :func:`jet_name`: returns (base, I)."""
    m = _BRACKET.match(name)
    if m is None:
        raise ValueError(f"bad variable name {name!r}")
    inner = m.group("inner")
    if inner is None:
        return name, ()
    comp, I = _parse_inner(inner)
    if comp is None:
        return m.group("base"), I
    return f"{m.group('base')}[a={comp}]", I


def _parse_inner(inner: str):
    inner = inner.replace(" ", "")
    if not inner:
        return None, ()
    if inner.startswith("a="):
        parts = inner.split(";")
        comp = int(parts[0][2:])
        I = ()
        if len(parts) > 1:
            rest = parts[1]
            if not rest.startswith("I="):
                raise ValueError(inner)
            rest = rest[2:]
            I = multi_index([int(t) for t in rest.split(",") if t])
        return comp, I
    return None, multi_index([int(t) for t in inner.split(",") if t])


def _format_name(base, comp, I):
    if comp is None:
        return f"{base}[{_fmt_index(I)}]" if I else base
    if I:
        return f"{base}[a={comp}; I={_fmt_index(I)}]"
    return f"{base}[a={comp}]"


def normalize_name(name: str) -> str:
    m = _BRACKET.match(name.replace(" ", "").replace(";I=", "; I="))
    if m is None:
        raise ValueError(f"bad variable name {name!r}")
    if m.group("inner") is None:
        return name
    comp, I = _parse_inner(m.group("inner"))
    return _format_name(m.group("base"), comp, I)


def sym(name: str) -> sp.Symbol:
    return sp.Symbol(normalize_name(name))


ROLES = (
    "independent",
    "dependent",
    "jet",
    "group",
    "invariant_base",
    "invariant_fiber",
    "invariant_jet",
    "auxiliary",
)


@dataclass(frozen=True)
class Variable:
    """A named coordinate with a fixed role."""

    name: str
    role: str
    base: str | None = None
    index: tuple = field(default=())

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    @property
    def symbol(self) -> sp.Symbol:
        return sp.Symbol(self.name)


# ---------------------------------------------------------------------------
# parser


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\[[^\]]*\])?)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str):
    pos = 0
    toks = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError("unexpected character", text, pos)
        kind = m.lastgroup
        val = m.group(kind)
        if kind == "op" and val == "**":
            val = "^"
        toks.append((kind, val, m.start(kind)))
        pos = m.end()
    toks.append(("end", None, len(text)))
    return toks


class _Parser:
    def __init__(self, text, names=None, hooks=None):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.names = names  # optional whitelist of bare names
        self.hooks = hooks or {}

    def peek(self):
        return self.toks[self.i]

    def take(self, val=None):
        tok = self.toks[self.i]
        if val is not None and tok[1] != val:
            raise ParseError(f"expected {val!r}", self.text, tok[2])
        self.i += 1
        return tok

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            raise ParseError("trailing input", self.text, self.peek()[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            t = self.term()
            e = e + t if op == "+" else e - t
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            t = self.unary()
            if op == "*":
                e = e * t
            else:
                if t == 0:
                    raise DivisionByZero("division by literal zero")
                e = e / t
        return e

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return -self.unary()
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            exp = self.unary()
            if not exp.is_Rational:
                raise ParseError("exponent must be rational", self.text, self.peek()[2])
            return sp.Pow(base, exp)
        return base

    def atom(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            if "." in val:
                return sp.Rational(Fraction(val))
            return sp.Integer(int(val))
        if kind == "name":
            self.take()
            if self.peek()[1] == "(" and "[" not in val:
                if val in self.hooks:
                    self.take("(")
                    inner = self.expr()
                    self.take(")")
                    return self.hooks[val](inner)
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", self.text, pos)
                self.take("(")
                arg = self.expr()
                self.take(")")
                return FUNCTIONS[val](arg)
            try:
                name = normalize_name(val)
            except ValueError:
                raise ParseError(f"bad variable {val!r}", self.text, pos) from None
            if self.names is not None and name not in self.names:
                raise ParseError(f"unknown variable {name!r}", self.text, pos)
            return sp.Symbol(name)
        if val == "(":
            self.take()
            e = self.expr()
            self.take(")")
            return e
        raise ParseError("unexpected token", self.text, pos)


def parse(text: str, names=None, hooks=None) -> sp.Expr:
    """Parse an expression in the kernel grammar.

    ``u[1,1]`` is a jet coordinate, ``v[a=2; I=1,1]`` a component jet, and
    ``^`` takes rational exponents such as ``^(3/2)``.
    """
    return _Parser(text, names=names, hooks=hooks).parse()


def as_expr(e) -> sp.Expr:
    """Coerce a grammar string or number to an expression."""
    if isinstance(e, str):
        return parse(e)
    return sp.sympify(e)


# ---------------------------------------------------------------------------
# printer


class _GrammarPrinter(StrPrinter):
    def _print_Pow(self, expr, rational=False):
        b, e = expr.as_base_exp()
        if e.is_Rational and e < 0 and not rational:
            # StrPrinter's Mul handles denominators; standalone negative powers
            num = sp.Pow(b, -e)
            return "1/%s" % self.parenthesize(num, PRECEDENCE["Mul"] + 1)
        bs = self.parenthesize(b, PRECEDENCE["Pow"], strict=False)
        if precedence(b) <= PRECEDENCE["Pow"] and not b.is_Symbol and not isinstance(b, sp.Function):
            bs = "(%s)" % self._print(b)
        if e.is_Integer:
            return f"{bs}^{e}"
        return f"{bs}^({e.p}/{e.q})"

    def _print_Rational(self, expr):
        if expr.q == 1:
            return str(expr.p)
        return f"{expr.p}/{expr.q}"


_printer = _GrammarPrinter({"order": None})


def to_str(e) -> str:
    """Print ``e`` in the grammar accepted by :func:`parse`."""
    return _printer.doprint(sp.sympify(e))


# ---------------------------------------------------------------------------
# arithmetic and canonical form


def simplify(e):
    """Canonical form: rational-function normal form over the atom set."""
    e = sp.sympify(e)
    if e.is_Number:
        return e
    try:
        return sp.cancel(sp.together(e))
    except (sp.PolynomialError, TypeError, ValueError):
        return sp.expand(e)


def arith(a, b, op: str):
    a, b = sp.sympify(a), sp.sympify(b)
    if op == "+":
        return simplify(a + b)
    if op == "-":
        return simplify(a - b)
    if op in ("*", "×"):
        return simplify(a * b)
    if op in ("/", "÷"):
        if is_zero(b):
            raise DivisionByZero(f"divisor {to_str(b)} is identically zero")
        return simplify(a / b)
    raise ValueError(op)


def diff(e, v):
    return sp.diff(sp.sympify(e), v)


def check_functions(e):
    """Reject applied functions outside the whitelist."""
    for f in sp.sympify(e).atoms(sp.Function):
        if not isinstance(f, _FUNC_CLASSES):
            raise ParseError(f"function {f.func} not in whitelist")


# ---------------------------------------------------------------------------
# evaluation and zero testing


def sample_rational(rng: random.Random) -> Fraction:
    den = rng.randint(100, 3000)
    num = rng.randint(-3 * den, 3 * den)
    return Fraction(num, den)


_MP_FUNCS = {sp.atan: mpmath.atan, sp.sin: mpmath.sin, sp.cos: mpmath.cos, sp.exp: mpmath.exp,
             sp.log: mpmath.log}


def _tree_value(e, point, memo):
    """mpmath value of a sympy tree; shared subtrees are evaluated once."""
    hit = memo.get(e)
    if hit is not None:
        return hit
    if e.is_Symbol:
        val = _to_mpf(point[e])
    elif e.is_Rational:
        val = mpmath.mpf(int(e.p)) / int(e.q)
    elif e.is_Number or e.is_NumberSymbol:
        val = mpmath.mpf(sp.N(e, _MP_DPS))
    elif e.is_Add:
        val = mpmath.fsum(_tree_value(t, point, memo) for t in e.args)
    elif e.is_Mul:
        val = mpmath.fprod(_tree_value(t, point, memo) for t in e.args)
    elif e.is_Pow:
        base = _tree_value(e.base, point, memo)
        ex = e.exp
        if ex.is_Integer:
            if base == 0 and ex < 0:
                raise ZeroDivisionError
            val = base ** int(ex)
        else:
            val = mpmath.power(base, _tree_value(ex, point, memo))
    elif e.func in _MP_FUNCS:
        val = _MP_FUNCS[e.func](_tree_value(e.args[0], point, memo))
    else:
        raise ValueError(f"cannot evaluate {e.func}")
    memo[e] = val
    return val


def _num_eval(e, point: dict):
    """High-precision value and term scale; ``point`` maps symbol -> Fraction/float."""
    with mpmath.workdps(_MP_DPS):
        memo = {}
        val = _tree_value(e, point, memo)
        scale = mpmath.mpf(1)
        if e.is_Add:
            scale = max(scale, mpmath.fsum(abs(memo[t]) for t in e.args))
        return val, scale


def _to_mpf(x):
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    if isinstance(x, sp.Rational):
        return mpmath.mpf(int(x.p)) / int(x.q)
    return mpmath.mpf(x)


def to_float(e, point: dict) -> float:
    """Float value at ``point`` (symbol -> number), computed at high precision."""
    e = sp.sympify(e)
    if not e.free_symbols:
        return float(sp.N(e, 30))
    val, _ = _num_eval(e, point)
    if isinstance(val, mpmath.mpc):
        val = val.real
    return float(val)


def random_point(symbols, rng: random.Random) -> dict:
    return {s: sample_rational(rng) for s in symbols}


def is_zero(e, *, samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED, point_sampler=None) -> bool:
    """Probabilistic identity test.

    Structural canonicalization first; otherwise ``samples`` seeded random
    rational points are tried, skipping poles.  ``point_sampler(rng)`` may
    supply points on a restricted domain.
    """
    e = sp.sympify(e)
    if e == 0:
        return True
    if e.is_Number:
        return False
    if not e.free_symbols:
        with mpmath.workdps(_MP_DPS):
            v = sp.N(e, _MP_DPS)
        return abs(complex(v)) < 1e-30
    rng = random.Random(seed)
    free = sorted(e.free_symbols, key=lambda s: s.name)
    good = 0
    tries = 0
    while good < samples and tries < 10 * samples:
        tries += 1
        pt = point_sampler(rng) if point_sampler else random_point(free, rng)
        try:
            val, scale = _num_eval(e, pt)
        except (ZeroDivisionError, ValueError, OverflowError):
            continue
        if not mpmath.isfinite(val) or not mpmath.isfinite(scale):
            continue
        if abs(val) > _ZERO_TOL * scale:
            return False
        good += 1
    if good == 0:
        raise IndeterminateAtAllSamples(f"every sample hit a pole: {to_str(e)[:200]}")
    return True


def evaluate(e, assignment: dict):
    """Value of ``e`` under ``assignment`` (symbol or name -> number).

    Exact rational when possible, float otherwise.
    """
    e = sp.sympify(e)
    subs = {}
    for k, v in assignment.items():
        s = k if isinstance(k, sp.Symbol) else sp.Symbol(normalize_name(k))
        if isinstance(v, float):
            subs[s] = sp.Float(v, 30)
        else:
            subs[s] = sp.Rational(Fraction(v)) if not isinstance(v, sp.Basic) else v
    missing = e.free_symbols - set(subs)
    if missing:
        raise ValueError(f"unassigned variables: {sorted(map(str, missing))}")
    for p in sp.preorder_traversal(e):
        if isinstance(p, sp.Pow) and p.exp.is_Rational and not p.exp.is_Integer:
            bv = p.base.xreplace(subs)
            if bv.is_number and bv.is_extended_real and bv.is_negative:
                raise DomainError(f"negative base {bv} under fractional power")
        if isinstance(p, sp.log):
            av = p.args[0].xreplace(subs)
            if av.is_number and av.is_extended_real and not av.is_positive:
                raise DomainError("log of non-positive value")
    val = e.xreplace(subs)
    if val.has(sp.zoo, sp.nan, sp.oo, -sp.oo):
        raise PoleError(f"pole of {to_str(e)[:120]}")
    if val.is_Rational:
        return Fraction(int(val.p), int(val.q))
    num = complex(sp.N(val, 30))
    if abs(num.imag) > 1e-20:
        raise DomainError("complex value")
    return num.real


# ---------------------------------------------------------------------------
# linear algebra over the expression field


def rref(A, *, seed: int = DEFAULT_SEED, samples: int = DEFAULT_SAMPLES):
    """Reduced row echelon form over the expression field.

    Returns (R, pivots).  Pivot non-vanishing is certified with is_zero.
    """
    if not A:
        return [], []
    R, pivots = _rref_cols(A, len(A[0]), seed=seed, samples=samples)
    for i in range(len(pivots), len(R)):
        R[i] = [sp.S.Zero] * len(R[i])
    return R, pivots


def nullspace(A, *, seed: int = DEFAULT_SEED, samples: int = DEFAULT_SAMPLES):
    """Basis of {x : A x = 0} over the expression field."""
    if not A:
        return []
    R, pivots = rref(A, seed=seed, samples=samples)
    n = len(A[0])
    basis = []
    for f in (j for j in range(n) if j not in pivots):
        x = [sp.S.Zero] * n
        x[f] = sp.S.One
        for row, p in enumerate(pivots):
            x[p] = simplify(-R[row][f])
        basis.append(x)
    return basis


def solve_linear(A, b, *, particular: bool = False, seed: int = DEFAULT_SEED, samples: int = DEFAULT_SAMPLES):
    """Solve A X = b by fraction-field Gaussian elimination.

    ``b`` may be a vector or a list of right-hand-side vectors (columns).
    Overdetermined systems have their residual certified; when free
    variables remain, raises RankDeficient unless ``particular`` is set, in
    which case the free variables are set to zero.
    """
    m = len(A)
    n = len(A[0]) if m else 0
    multi = bool(b) and isinstance(b[0], (list, tuple))
    B = [list(col) for col in b] if multi else [list(b)]
    aug = [list(A[i]) + [B[j][i] for j in range(len(B))] for i in range(m)]
    # pivot only among the coefficient columns
    R, pivots = _rref_cols(aug, n, seed=seed, samples=samples)
    rank = len(pivots)
    for i in range(rank, m):
        for j in range(n, n + len(B)):
            if R[i][j] != 0 and not is_zero(R[i][j], seed=seed, samples=samples):
                raise Inconsistent("nonzero residual in linear system", residual=R[i][j])
    free = [j for j in range(n) if j not in pivots]
    if free and not particular:
        raise RankDeficient(f"rank {rank} < {n}", free=free)
    sols = []
    for j in range(len(B)):
        x = [sp.S.Zero] * n
        for row, p in enumerate(pivots):
            x[p] = R[row][n + j]
        sols.append(x)
    return sols if multi else sols[0]


def _rref_cols(M, ncols, *, seed, samples):
    M = [[simplify(x) for x in row] for row in M]
    nrows = len(M)
    width = len(M[0]) if nrows else 0
    pivots = []
    r = 0
    for c in range(ncols):
        if r >= nrows:
            break
        cands = [i for i in range(r, nrows) if M[i][c] != 0 and not is_zero(M[i][c], seed=seed, samples=samples)]
        for i in range(r, nrows):
            if i not in cands:
                M[i][c] = sp.S.Zero
        if not cands:
            continue
        p = min(cands, key=lambda i: sp.count_ops(M[i][c]))
        M[r], M[p] = M[p], M[r]
        piv = M[r][c]
        M[r] = [simplify(x / piv) for x in M[r]]
        for i in range(nrows):
            if i != r and M[i][c] != 0:
                f = M[i][c]
                M[i] = [simplify(M[i][j] - f * M[r][j]) for j in range(width)]
        pivots.append(c)
        r += 1
    return M, pivots


def numeric_rank(rows, tol: float = 1e-9) -> int:
    """Rank of a float matrix by SVD with relative tolerance."""
    import numpy as np

    a = np.asarray(rows, dtype=float)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0:
        return 0
    return int((s > tol * s[0]).sum())
