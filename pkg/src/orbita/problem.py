"""Sectioned problem files (``*.orb``).

A file is a list of ``[section]`` blocks holding ``key = value`` lines;
``#`` starts a comment.  Lists of plain names are whitespace separated,
expressions use the kernel grammar.  Indexed keys (``law.phi``,
``initial.u[1]``) avoid splitting expressions on commas.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import sympy as sp

from .exterior import DifferentialForm, d_function
from .jetspace import JetContext, PDESystem
from .liegroup import ContactBasisElement, GroupAction, LieGroupChart, MovingFrame, invariant_contact_basis, \
    pullback_maurer_cartan
from .reduction import ReducedChart
from .symcore import DEFAULT_SAMPLES, DEFAULT_SEED, ParseError, parse

SECTIONS = ("base", "group", "action", "frame", "orders", "invariants", "coframe", "pde", "lagrangian",
            "reduced_solution")
_SECTION = re.compile(r"^\[(\w+)\]$")


class ProblemError(Exception):
    """Malformed problem file, with the offending location."""

    def __init__(self, msg, path=None, line=None):
        self.msg, self.path, self.line = msg, path, line
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + msg)


@dataclass
class Entry:
    value: str
    line: int


@dataclass
class Orders:
    stabilization: int
    coframe: int
    ideal: int


@dataclass
class Problem:
    path: str
    sections: dict = field(default_factory=dict)  # name -> {key: Entry}

    # -- raw access -----------------------------------------------------------
    def has(self, section):
        return section in self.sections

    def section(self, name):
        if name not in self.sections:
            raise ProblemError(f"missing [{name}] section", self.path)
        return self.sections[name]

    def get(self, section, key, default=None):
        sec = self.sections.get(section, {})
        return sec[key].value if key in sec else default

    def require(self, section, key):
        sec = self.section(section)
        if key not in sec:
            raise ProblemError(f"[{section}] needs a '{key}' entry", self.path)
        return sec[key].value

    def expr(self, section, key):
        entry = self.section(section)[key]
        return self._parse(entry)

    def _parse(self, entry: Entry):
        try:
            return parse(entry.value)
        except ParseError as exc:
            raise ProblemError(f"{exc} in {entry.value!r}", self.path, entry.line) from exc

    def _fail(self, section, key, msg):
        sec = self.sections.get(section, {})
        raise ProblemError(msg, self.path, sec[key].line if key in sec else None)

    # -- typed views ----------------------------------------------------------
    @property
    def context(self) -> JetContext:
        ind = self.require("base", "independent").split()
        dep = self.require("base", "dependent").split()
        return JetContext(tuple(ind), tuple(dep), 0)

    @property
    def orders(self) -> Orders:
        vals = []
        for key in ("r_s", "r_cf", "r_o"):
            raw = self.require("orders", key)
            try:
                vals.append(int(raw))
            except ValueError:
                self._fail("orders", key, f"order {key} must be an integer, got {raw!r}")
        return Orders(*vals)

    def group(self) -> LieGroupChart:
        coords = self.require("group", "coordinates").split()
        law = [self.require("group", f"law.{c}") for c in coords]
        ident = [self.require("group", f"identity.{c}") for c in coords]
        inv = [self.require("group", f"inverse.{c}") for c in coords]
        return LieGroupChart(coords, law, ident, inv)

    def action(self) -> GroupAction:
        ctx = self.context
        X = [self.require("action", s.name) for s in ctx.x]
        U = [self.require("action", ctx.jet(a).name) for a in range(ctx.q)]
        return GroupAction(self.group(), ctx, X, U)

    def frame(self) -> MovingFrame:
        coords = self.require("group", "coordinates").split()
        comps = [self.require("frame", c) for c in coords]
        order = self.require("frame", "order")
        return MovingFrame(comps, int(order))

    def invariant_names(self):
        """(horizontal names, fiber names, their upstairs expressions) in file order."""
        ybase = self.require("base", "reduced_independent")
        vbase = self.require("base", "reduced_dependent")
        ys, vs, yexprs, vexprs = [], [], [], []
        for key, entry in self.section("invariants").items():
            base = key.split("[", 1)[0]
            self._parse(entry)
            if base == ybase:
                ys.append(key)
                yexprs.append(entry.value)
            elif base == vbase:
                vs.append(key)
                vexprs.append(entry.value)
            else:
                raise ProblemError(f"invariant {key!r} is neither {ybase} nor {vbase}", self.path, entry.line)
        return ys, vs, yexprs, vexprs

    def chart(self, action=None, frame=None, seed=None) -> ReducedChart:
        action = action or self.action()
        frame = frame or self.frame()
        ys, vs, yexprs, vexprs = self.invariant_names()
        kwargs = {} if seed is None else {"seed": seed}
        return ReducedChart(action, frame, ys, vs, yexprs, vexprs, **kwargs)

    def lagrangian(self):
        if not self.has("lagrangian"):
            return None
        sec = self.section("lagrangian")
        if len(sec) != 1:
            raise ProblemError("[lagrangian] holds exactly one entry", self.path)
        (entry,) = sec.values()
        return self._parse(entry)

    def pde(self):
        if not self.has("pde"):
            return None
        eqs = [self._parse(e) for e in self.section("pde").values()]
        ctx = self.context
        order = max(ctx.jet_order(e) for e in eqs)
        return PDESystem(ctx.with_order(order), eqs)

    def basis(self, action, frame, chart, r, *, seed, samples=4):
        """Invariant contact basis up to order r: explicit [coframe] or frozen."""
        explicit = self.coframe(action, frame, chart, r) if self.has("coframe") else None
        return invariant_contact_basis(action, frame, r, explicit=explicit, seed=seed, samples=samples)

    def coframe(self, action, frame, chart, r):
        """Parse [coframe] entries into contact basis elements.

        Keys are labels ``eta[0]``, ``eta[1,1]`` (one dependent variable) or
        ``eta[a=1; I=1]``; values are linear in ``zeta[i]`` (pulled-back
        Maurer-Cartan forms) and ``d(...)`` of reduced expressions, with
        reduced coefficients.
        """
        zetas = pullback_maurer_cartan(action.group, frame)
        q = action.ctx.q
        out = []
        for key, entry in self.section("coframe").items():
            alpha, index = _eta_key(key, q, self, entry)
            if len(index) >= r:
                continue
            holders = {}

            def dhook(inner, holders=holders):
                s = sp.Symbol(f"__d{len(holders)}")
                holders[s] = inner
                return s

            try:
                e = parse(entry.value, hooks={"d": dhook})
            except ParseError as exc:
                raise ProblemError(f"{exc} in {entry.value!r}", self.path, entry.line) from exc
            atoms = dict(holders)
            for s in e.free_symbols:
                m = re.fullmatch(r"zeta\[(\d+)\]", s.name)
                if m:
                    i = int(m.group(1))
                    if not 1 <= i <= len(zetas):
                        raise ProblemError(f"{s.name} is out of range", self.path, entry.line)
                    atoms[s] = zetas[i - 1]
            form = DifferentialForm.zero(1)
            rest = sp.expand(e)
            for s, val in atoms.items():
                coeff = sp.diff(e, s)
                if coeff.free_symbols & set(atoms):
                    raise ProblemError("coframe entries must be linear in forms", self.path, entry.line)
                piece = val if isinstance(val, DifferentialForm) else d_function(chart.lift(val))
                form = form + piece * chart.lift(coeff)
                rest = rest.subs(s, 0)
            if sp.simplify(rest) != 0:
                raise ProblemError("coframe entry has a term without a form", self.path, entry.line)
            out.append(ContactBasisElement(alpha, index, form))
        out.sort(key=lambda el: (len(el.index), el.index, el.alpha))
        return out

    def reduced_solution(self):
        """(ReducedSolution, initial state, start parameters, extents, step)."""
        from .reconstruct import DEFAULT_STEP, ReducedSolution

        sec = self.section("reduced_solution")
        ctx = self.context
        params = self.require("reduced_solution", "parameters").split()
        if "file" in sec:
            path = Path(self.path).parent / sec["file"].value
            sol = ReducedSolution.from_csv(path)
        else:
            reserved = ("parameters", "file", "step")
            exprs = {k: self._parse(e) for k, e in sec.items() if k not in reserved and "." not in k}
            sol = ReducedSolution.from_expressions(params, exprs)
        initial = {sp.Symbol(k.split(".", 1)[1]): self._number(e) for k, e in sec.items() if k.startswith("initial.")}
        start = [self._number(sec[f"start.{p}"]) if f"start.{p}" in sec else 0.0 for p in params]
        lengths = []
        for x in ctx.x:
            key = f"length.{x.name}"
            if key not in sec:
                raise ProblemError(f"[reduced_solution] needs '{key}'", self.path)
            lengths.append(self._number(sec[key]))
        step = self._number(sec["step"]) if "step" in sec else DEFAULT_STEP
        return sol, initial, start, lengths, step

    def _number(self, entry: Entry) -> float:
        try:
            return float(entry.value)
        except ValueError:
            return float(self._parse(entry))


def _eta_key(key, q, problem, entry):
    m = re.fullmatch(r"eta\[(?:a=(\d+)(?:;\s*I=([\d,]+))?|([\d,]+))\]", key)
    if not m:
        raise ProblemError(f"bad coframe label {key!r}", problem.path, entry.line)
    if m.group(3) is not None:
        if q != 1:
            raise ProblemError("labels need a= with several dependent variables", problem.path, entry.line)
        idx = tuple(int(i) for i in m.group(3).split(","))
        return 0, () if idx == (0,) else idx
    alpha = int(m.group(1)) - 1
    idx = tuple(int(i) for i in m.group(2).split(",")) if m.group(2) else ()
    return alpha, idx


def _top_level_equals(line):
    depth = 0
    for i, ch in enumerate(line):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        elif ch == "=" and depth == 0:
            return i
    return None


def loads(text: str, path="<string>") -> Problem:
    prob = Problem(str(path))
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1)
            if current not in SECTIONS:
                raise ProblemError(f"unknown section [{current}]", path, no)
            if current in prob.sections:
                raise ProblemError(f"section [{current}] appears twice", path, no)
            prob.sections[current] = {}
            continue
        if current is None:
            raise ProblemError("entry outside of a section", path, no)
        cut = _top_level_equals(line)
        if cut is None:
            raise ProblemError(f"expected 'key = value', got {line!r}", path, no)
        key, value = line[:cut].strip(), line[cut + 1:].strip()
        if not key or not value:
            raise ProblemError("empty key or value", path, no)
        if key in prob.sections[current]:
            raise ProblemError(f"duplicate key {key!r}", path, no)
        prob.sections[current][key] = Entry(value, no)
    if "base" not in prob.sections:
        raise ProblemError("missing [base] section", path)
    _check_expressions(prob)
    return prob


# entries that hold plain expressions and are parsed eagerly so errors carry lines
_EXPR_SECTIONS = {"action", "invariants", "lagrangian", "pde"}


def _check_expressions(prob: Problem):
    for name in _EXPR_SECTIONS & set(prob.sections):
        for entry in prob.sections[name].values():
            prob._parse(entry)
    for name in ("group", "frame"):
        for key, entry in prob.sections.get(name, {}).items():
            if key not in ("coordinates", "order"):
                prob._parse(entry)


class Workspace:
    """Objects built from a problem, constructed on first use and cached."""

    def __init__(self, problem: Problem, seed=DEFAULT_SEED, samples=DEFAULT_SAMPLES):
        self.problem, self.seed, self.samples = problem, seed, samples
        self._cache = {}

    @classmethod
    def bundled(cls, name, **kwargs):
        return cls(load(bundled(name)), **kwargs)

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def action(self) -> GroupAction:
        return self._get("action", self.problem.action)

    @property
    def frame(self) -> MovingFrame:
        return self._get("frame", self.problem.frame)

    @property
    def chart(self) -> ReducedChart:
        return self._get("chart", lambda: self.problem.chart(self.action, self.frame, seed=self.seed))

    @property
    def r_o(self) -> int:
        return self.problem.orders.ideal

    @property
    def basis(self):
        return self._get("basis", lambda: self.problem.basis(self.action, self.frame, self.chart, self.r_o,
                                                              seed=self.seed, samples=self.samples))


def load(path) -> Problem:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemError(f"cannot read problem file: {exc.strerror}", str(path)) from exc
    return loads(text, str(path))


def bundled(name: str) -> Path:
    """Path of a bundled example (``se2`` or ``r3``)."""
    return Path(__file__).parent / "data" / f"{name}.orb"
