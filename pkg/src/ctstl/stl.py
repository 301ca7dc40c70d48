"""Signal temporal logic over linear predicates.

Formulas are immutable trees.  Predicates are affine functions of the state,
``row . x + offset >= 0``.  Grammar accepted by :func:`parse`::

    formula := or
    or      := and ('|' and)*
    and     := until ('&' until)*
    until   := unary ('U' '[' a ',' b ']' unary)?
    unary   := '!' unary | ('G' | 'F') '[' a ',' b ']' unary | atom
    atom    := '(' formula ')' | 'true' | 'false' | linexpr cmp linexpr
    cmp     := '>=' | '<=' | '>' | '<'

Strict comparisons are read as their non-strict counterparts.
"""
import re
from dataclasses import dataclass, field

import numpy as np

from .dynamics import NODE_TOL
from .errors import (HorizonExceeded, InsufficientTrace, STLParseError,
                     UnalignedInterval, UnknownStateIndex)

EPS_STRICT = 1e-6


class Formula:
    __slots__ = ()

    def __and__(self, other):
        return And((self, other))

    def __or__(self, other):
        return Or((self, other))

    def __invert__(self):
        return Not(self)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


@dataclass(frozen=True)
class Predicate(Formula):
    """Satisfied at ``x`` iff ``row . x + offset >= 0``."""

    row: tuple
    offset: float
    name: str = field(default="", compare=False)

    def __post_init__(self):
        row = tuple(float(r) for r in np.asarray(self.row, dtype=float).reshape(-1))
        if not all(np.isfinite(row)) or not np.isfinite(self.offset):
            raise ValueError("predicate entries must be finite")
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def vec(self):
        return np.array(self.row)

    def value(self, x):
        return float(np.dot(self.row, x) + self.offset)

    def negate(self, eps=EPS_STRICT):
        return Predicate(tuple(-r for r in self.row), -self.offset - eps, self.name)


@dataclass(frozen=True)
class Not(Formula):
    child: Formula


@dataclass(frozen=True)
class And(Formula):
    children: tuple


@dataclass(frozen=True)
class Or(Formula):
    children: tuple


def _check_interval(a, b):
    if not (0 <= a <= b) or not np.isfinite(b):
        raise ValueError(f"temporal interval must satisfy 0 <= a <= b, got [{a}, {b}]")


@dataclass(frozen=True)
class Eventually(Formula):
    a: float
    b: float
    child: Formula

    def __post_init__(self):
        _check_interval(self.a, self.b)


@dataclass(frozen=True)
class Always(Formula):
    a: float
    b: float
    child: Formula

    def __post_init__(self):
        _check_interval(self.a, self.b)


@dataclass(frozen=True)
class Until(Formula):
    a: float
    b: float
    left: Formula
    right: Formula

    def __post_init__(self):
        _check_interval(self.a, self.b)


TEMPORAL = (Eventually, Always, Until)


def children(f):
    if isinstance(f, (And, Or)):
        return f.children
    if isinstance(f, (Not, Eventually, Always)):
        return (f.child,)
    if isinstance(f, Until):
        return (f.left, f.right)
    return ()


def horizon(f):
    """Time span past the evaluation instant that ``f`` depends on."""
    if isinstance(f, (Eventually, Always)):
        return f.b + horizon(f.child)
    if isinstance(f, Until):
        return f.b + max(horizon(f.left), horizon(f.right))
    return max((horizon(c) for c in children(f)), default=0.0)


def is_temporal_free(f):
    if isinstance(f, TEMPORAL):
        return False
    return all(is_temporal_free(c) for c in children(f))


def predicates(f):
    """Distinct predicates of ``f`` in first-occurrence order."""
    seen = {}
    stack = [f]
    while stack:
        g = stack.pop()
        if isinstance(g, Predicate):
            seen.setdefault(g, None)
        stack.extend(reversed(children(g)))
    return list(seen)


def state_dim(f):
    preds = predicates(f)
    return len(preds[0].row) if preds else 0


# ---------------------------------------------------------------- printing

def _num(v):
    r = repr(float(v) + 0.0)
    return r[:-2] if r.endswith(".0") else r


def _pred_text(p):
    nz = [(i, c) for i, c in enumerate(p.row) if c != 0.0]
    if len(nz) == 1 and abs(nz[0][1]) == 1.0:
        i, c = nz[0]
        if c > 0:
            return f"x{i + 1} >= {_num(-p.offset)}"
        return f"x{i + 1} <= {_num(p.offset)}"
    parts = [f"{_num(c)}*x{i + 1}" for i, c in nz]
    if p.offset != 0.0 or not parts:
        parts.append(_num(p.offset))
    return " + ".join(parts) + " >= 0"


def to_text(f):
    """Canonical text; ``parse(to_text(f))`` reproduces ``f``."""
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Predicate):
        return _pred_text(f)
    if isinstance(f, Not):
        return f"!({to_text(f.child)})"
    if isinstance(f, And):
        return " & ".join(f"({to_text(c)})" for c in f.children)
    if isinstance(f, Or):
        return " | ".join(f"({to_text(c)})" for c in f.children)
    if isinstance(f, Eventually):
        return f"F[{_num(f.a)},{_num(f.b)}]({to_text(f.child)})"
    if isinstance(f, Always):
        return f"G[{_num(f.a)},{_num(f.b)}]({to_text(f.child)})"
    if isinstance(f, Until):
        return f"({to_text(f.left)}) U[{_num(f.a)},{_num(f.b)}] ({to_text(f.right)})"
    raise TypeError(f"not a formula: {f!r}")


# ----------------------------------------------------------------- parsing

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<var>x\d+)
  | (?P<kw>true|false|G|F|U)
  | (?P<op>>=|<=|>|<|&&|\|\||&|\||!|~|\(|\)|\[|\]|,|\+|-|\*)
""", re.VERBOSE)


def _tokenize(text):
    pos, out = 0, []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise STLParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            val = m.group(kind)
            val = {"&&": "&", "||": "|", "~": "!"}.get(val, val)
            out.append((kind, val, pos))
        pos = m.end()
    out.append(("end", None, len(text)))
    return out


class _Parser:
    def __init__(self, text, n):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.n = n
        self.max_index = 0

    def peek(self):
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise STLParseError(msg, tok[2], self.text)

    def take(self, value=None, kind=None):
        tok = self.peek()
        if (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            want = value if value is not None else kind
            got = "end of input" if tok[0] == "end" else repr(tok[1])
            self.error(f"expected {want!r}, got {got}")
        self.i += 1
        return tok

    def formula(self):
        node = self.disjunction()
        if self.peek()[0] != "end":
            self.error(f"unexpected {self.peek()[1]!r}")
        return node

    def disjunction(self):
        parts = [self.conjunction()]
        while self.peek()[1] == "|":
            self.take("|")
            parts.append(self.conjunction())
        return parts[0] if len(parts) == 1 else ("or", parts)

    def conjunction(self):
        parts = [self.until()]
        while self.peek()[1] == "&":
            self.take("&")
            parts.append(self.until())
        return parts[0] if len(parts) == 1 else ("and", parts)

    def until(self):
        left = self.unary()
        if self.peek()[1] == "U":
            self.take("U")
            a, b = self.interval()
            right = self.unary()
            return ("until", a, b, left, right)
        return left

    def interval(self):
        self.take("[")
        a = self.number()
        self.take(",")
        b = self.number()
        tok = self.take("]")
        if not 0 <= a <= b:
            raise STLParseError(f"interval [{a}, {b}] must satisfy 0 <= a <= b", tok[2], self.text)
        return a, b

    def number(self):
        sign = 1.0
        while self.peek()[1] in ("-", "+"):
            if self.take()[1] == "-":
                sign = -sign
        return sign * float(self.take(kind="num")[1])

    def unary(self):
        tok = self.peek()
        if tok[1] == "!":
            self.take()
            return ("not", self.unary())
        if tok[1] in ("G", "F"):
            self.take()
            a, b = self.interval()
            return ("G" if tok[1] == "G" else "F", a, b, self.unary())
        return self.atom()

    def atom(self):
        tok = self.peek()
        if tok[1] == "(":
            # "(x1 + 2) >= 0" is not in the grammar; parentheses group formulas only
            self.take("(")
            node = self.disjunction()
            self.take(")")
            return node
        if tok[1] in ("true", "false"):
            self.take()
            return (tok[1],)
        lhs = self.linexpr()
        cmp_tok = self.peek()
        if cmp_tok[1] not in (">=", "<=", ">", "<"):
            self.error("expected a comparison operator")
        self.take()
        rhs = self.linexpr()
        coeffs, const = _sub(lhs, rhs) if cmp_tok[1] in (">=", ">") else _sub(rhs, lhs)
        if not coeffs:
            self.error("predicate does not reference any state", tok)
        return ("pred", coeffs, const, tok[2])

    def linexpr(self):
        coeffs, const = {}, 0.0
        sign = self._signs()
        while True:
            c, idx = self.term()
            if idx is None:
                const += sign * c
            else:
                coeffs[idx] = coeffs.get(idx, 0.0) + sign * c
            if self.peek()[1] not in ("+", "-"):
                return coeffs, const
            sign = self._signs()

    def _signs(self):
        sign = 1.0
        while self.peek()[1] in ("+", "-"):
            if self.take()[1] == "-":
                sign = -sign
        return sign

    def term(self):
        tok = self.peek()
        if tok[0] == "var":
            self.take()
            return 1.0, self._index(tok)
        if tok[0] == "num":
            c = float(self.take()[1])
            if self.peek()[1] == "*":
                self.take("*")
                var = self.take(kind="var")
                return c, self._index(var)
            return c, None
        self.error("expected a number or a state variable")

    def _index(self, tok):
        idx = int(tok[1][1:])
        if idx < 1 or (self.n is not None and idx > self.n):
            raise UnknownStateIndex(f"unknown state index {tok[1]}", tok[2], self.text)
        self.max_index = max(self.max_index, idx)
        return idx


def _sub(lhs, rhs):
    coeffs = dict(lhs[0])
    for k, v in rhs[0].items():
        coeffs[k] = coeffs.get(k, 0.0) - v
    coeffs = {k: v for k, v in coeffs.items() if v != 0.0}
    return coeffs, lhs[1] - rhs[1]


def _build(node, n):
    kind = node[0]
    if kind == "true":
        return TrueF()
    if kind == "false":
        return FalseF()
    if kind == "pred":
        row = np.zeros(n)
        for idx, c in node[1].items():
            row[idx - 1] = c
        return Predicate(row, node[2])
    if kind == "not":
        return Not(_build(node[1], n))
    if kind == "and":
        return And(tuple(_build(c, n) for c in node[1]))
    if kind == "or":
        return Or(tuple(_build(c, n) for c in node[1]))
    if kind == "F":
        return Eventually(node[1], node[2], _build(node[3], n))
    if kind == "G":
        return Always(node[1], node[2], _build(node[3], n))
    if kind == "until":
        return Until(node[1], node[2], _build(node[3], n), _build(node[4], n))
    raise AssertionError(kind)


def parse(text, n=None):
    """Parse formula text; ``n`` fixes the state dimension and bounds ``x<i>``."""
    p = _Parser(text, n)
    tree = p.formula()
    return _build(tree, n if n is not None else max(p.max_index, 1))


# -------------------------------------------------------------------- NNF

def to_nnf(f, eps=EPS_STRICT):
    """Push negations to the predicates and absorb them there.

    A negated predicate becomes ``-row . x - offset - eps >= 0``.  Negated
    Until has no dual in this syntax and is kept as ``Not(Until)``.
    """
    return _nnf(f, False, eps)


def _nnf(f, neg, eps):
    if isinstance(f, TrueF):
        return FalseF() if neg else f
    if isinstance(f, FalseF):
        return TrueF() if neg else f
    if isinstance(f, Predicate):
        return f.negate(eps) if neg else f
    if isinstance(f, Not):
        return _nnf(f.child, not neg, eps)
    if isinstance(f, And):
        kids = tuple(_nnf(c, neg, eps) for c in f.children)
        return Or(kids) if neg else And(kids)
    if isinstance(f, Or):
        kids = tuple(_nnf(c, neg, eps) for c in f.children)
        return And(kids) if neg else Or(kids)
    if isinstance(f, Eventually):
        inner = _nnf(f.child, neg, eps)
        return Always(f.a, f.b, inner) if neg else Eventually(f.a, f.b, inner)
    if isinstance(f, Always):
        inner = _nnf(f.child, neg, eps)
        return Eventually(f.a, f.b, inner) if neg else Always(f.a, f.b, inner)
    if isinstance(f, Until):
        g = Until(f.a, f.b, _nnf(f.left, False, eps), _nnf(f.right, False, eps))
        return Not(g) if neg else g
    raise TypeError(f"not a formula: {f!r}")


# --------------------------------------------------------------- grounding

@dataclass(frozen=True)
class GroundedFormula:
    """A formula tied to a time grid.

    ``index_sets[(node, i)]`` lists the grid nodes a temporal operator
    evaluated at node ``i`` ranges over; ``windows[(node, i)]`` lists the
    hold intervals an Always operator must cover between those nodes.
    """

    formula: Formula
    grid: object
    index_sets: dict
    windows: dict

    def nodes_for(self, node, i):
        return self.index_sets[(node, i)]

    def windows_for(self, node, i):
        return self.windows.get((node, i), ())


def required_endpoints(f, grid):
    """Absolute interval endpoints reached when evaluating ``f`` at t=0 on ``grid``.

    Evaluation instants of nested operators are the grid nodes inside the
    parent window, so the result depends on the grid.
    """
    out = set()
    seen = set()

    def visit(node, t):
        if (node, t) in seen:
            return
        seen.add((node, t))
        if isinstance(node, TEMPORAL):
            lo, hi = t + node.a, t + node.b
            out.update((lo, hi))
            inner = grid.indices_between(lo, hi)
            if isinstance(node, Until):
                for i in inner:
                    visit(node.right, grid.nodes[i])
                for i in grid.indices_between(t, hi):
                    visit(node.left, grid.nodes[i])
            else:
                for i in inner:
                    visit(node.child, grid.nodes[i])
        else:
            for c in children(node):
                visit(c, t)

    visit(f, 0.0)
    return sorted(out)


def ground(f, grid):
    """Map every temporal interval of ``f`` onto ``grid`` node indices.

    Fails with :class:`UnalignedInterval` rather than rounding when an
    endpoint lies strictly between nodes.
    """
    tol = NODE_TOL * max(1.0, grid.t_f)
    if horizon(f) > grid.t_f + tol:
        raise HorizonExceeded(f"formula horizon {horizon(f):g} exceeds t_f={grid.t_f:g}")
    index_sets, windows = {}, {}
    unaligned = []

    def locate(t):
        i = grid.index_of(t)
        if i is None:
            if t > grid.t_f + tol:
                raise HorizonExceeded(f"interval endpoint {t:g} beyond t_f={grid.t_f:g}")
            unaligned.append(t)
        return i

    def visit(node, i):
        key = (node, i)
        if key in index_sets:
            return
        if not isinstance(node, TEMPORAL):
            for c in children(node):
                visit(c, i)
            return
        t = grid.nodes[i]
        lo, hi = locate(t + node.a), locate(t + node.b)
        if lo is None or hi is None:
            index_sets[key] = ()
            return
        idx = tuple(range(lo, hi + 1))
        index_sets[key] = idx
        if isinstance(node, Always):
            windows[key] = tuple(range(lo, hi))
            for j in idx:
                visit(node.child, j)
        elif isinstance(node, Eventually):
            for j in idx:
                visit(node.child, j)
        else:
            for j in idx:
                visit(node.right, j)
            for j in range(i, hi + 1):
                visit(node.left, j)

    visit(f, 0)
    if unaligned:
        raise UnalignedInterval(unaligned)
    return GroundedFormula(f, grid, index_sets, windows)


# -------------------------------------------------------------- robustness

def _as_trace(samples):
    if isinstance(samples, tuple) and len(samples) == 2 and np.ndim(samples[0]) == 1 \
            and np.ndim(samples[1]) == 2:
        times, states = samples
    else:
        samples = list(samples)
        times = [s[0] for s in samples]
        states = [np.asarray(s[1], dtype=float) for s in samples]
    return np.asarray(times, dtype=float), np.atleast_2d(np.asarray(states, dtype=float))


def discrete_robustness(samples, f, t0=None):
    """Quantitative semantics of ``f`` over sampled states.

    ``samples`` is either an iterable of ``(t, state)`` pairs or a
    ``(times, states)`` tuple of arrays.  Temporal operators range over the
    samples whose time lies in the shifted interval; an empty range gives
    ``-inf`` for F/U and ``+inf`` for G.
    """
    times, states = _as_trace(samples)
    if times.size == 0:
        raise InsufficientTrace("empty trace")
    start = times[0] if t0 is None else t0
    tol = NODE_TOL * max(1.0, abs(times[-1]))
    if start + horizon(f) > times[-1] + tol:
        raise InsufficientTrace(
            f"trace ends at {times[-1]:g} but the formula needs {start + horizon(f):g}")
    i0 = int(np.argmin(np.abs(times - start)))
    if abs(times[i0] - start) > tol:
        raise InsufficientTrace(f"no sample at evaluation time {start:g}")
    cache = {}

    def window(t, a, b):
        return np.nonzero((times >= t + a - tol) & (times <= t + b + tol))[0]

    def rho(node, i):
        key = (node, i)
        if key in cache:
            return cache[key]
        if isinstance(node, TrueF):
            r = np.inf
        elif isinstance(node, FalseF):
            r = -np.inf
        elif isinstance(node, Predicate):
            r = node.value(states[i])
        elif isinstance(node, Not):
            r = -rho(node.child, i)
        elif isinstance(node, And):
            r = min((rho(c, i) for c in node.children), default=np.inf)
        elif isinstance(node, Or):
            r = max((rho(c, i) for c in node.children), default=-np.inf)
        elif isinstance(node, Eventually):
            r = max((rho(node.child, j) for j in window(times[i], node.a, node.b)), default=-np.inf)
        elif isinstance(node, Always):
            r = min((rho(node.child, j) for j in window(times[i], node.a, node.b)), default=np.inf)
        elif isinstance(node, Until):
            r = -np.inf
            run = np.inf
            last = i
            for j in window(times[i], node.a, node.b):
                for k in range(last, j + 1):
                    run = min(run, rho(node.left, k))
                last = j + 1
                r = max(r, min(rho(node.right, j), run))
        else:
            raise TypeError(f"not a formula: {node!r}")
        cache[key] = float(r)
        return float(r)

    return rho(f, i0)
