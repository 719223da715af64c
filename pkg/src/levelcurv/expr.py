"""Closed-form scalar fields: parsing and second-order forward-mode AD.

Grammar (lowest to highest precedence)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" exponent)?
    exponent := INT | "(" INT ")"
    atom   := NUMBER | VAR | ("exp" | "sqrt") "(" expr ")" | "(" expr ")"

so ``-x^2`` is ``-(x^2)`` and exponents are non-negative integer literals.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

VARIABLES = ("x", "y", "z")
FUNCTIONS = ("exp", "sqrt")


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DomainError(ExprError, ArithmeticError):
    def __init__(self, message: str, subexpr: "Node"):
        super().__init__(f"{message} in '{unparse(subexpr)}'")
        self.subexpr = subexpr


# --------------------------------------------------------------------------
# syntax tree

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int

    @property
    def name(self) -> str:
        return VARIABLES[self.index]


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str  # exp | sqrt
    arg: "Node"


Node = Union[Const, Var, Neg, BinOp, Pow, Call]


# --------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    out = []
    raw = text.encode()
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", len(text[:pos].encode()))
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), len(text[:start].encode())))
        pos = m.end()
    out.append(("end", "", len(raw)))
    return out


class _Parser:
    def __init__(self, text: str, arity: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.arity = arity

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, off = self.take()
        if text != value or kind != "op":
            found = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, found {found}", off)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", off)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> int:
        kind, text, off = self.peek()
        paren = kind == "op" and text == "("
        if paren:
            self.take()
            kind, text, off = self.peek()
        if kind != "num" or not text.isdigit():
            raise ParseError("exponent must be a non-negative integer literal", off)
        self.take()
        if paren:
            kind, text, off2 = self.peek()
            if not (kind == "op" and text == ")"):
                raise ParseError("exponent must be a non-negative integer literal", off)
            self.take()
        return int(text)

    def atom(self) -> Node:
        kind, text, off = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text in VARIABLES:
                index = VARIABLES.index(text)
                if index >= self.arity:
                    raise ParseError(f"variable {text!r} exceeds arity {self.arity}", off)
                return Var(index)
            raise ParseError(f"unknown identifier {text!r}", off)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ParseError(f"unexpected {found}", off)


def parse_tree(text: str, arity: int = 3) -> Node:
    return _Parser(text, arity).parse()


# --------------------------------------------------------------------------
# unparse

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    if isinstance(node, Pow):
        return 4
    return 5


def unparse(node: Node) -> str:
    """Render a tree as text that parses back to an identical tree."""
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({unparse(node.arg)})"
    if isinstance(node, Neg):
        inner = unparse(node.arg)
        return f"-({inner})" if _prec(node.arg) < 3 else f"-{inner}"
    if isinstance(node, Pow):
        base = unparse(node.base)
        if _prec(node.base) < 5:
            base = f"({base})"
        return f"{base}^{node.exponent}"
    p = _PREC[node.op]
    left = unparse(node.left)
    if _prec(node.left) < p:
        left = f"({left})"
    right = unparse(node.right)
    # left-associative: equal precedence on the right needs parentheses
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def variables_used(node: Node) -> set[int]:
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Const):
        return set()
    if isinstance(node, BinOp):
        return variables_used(node.left) | variables_used(node.right)
    if isinstance(node, Pow):
        return variables_used(node.base)
    return variables_used(node.arg)


# --------------------------------------------------------------------------
# second-order jets

@dataclass
class Jet2:
    """Value, gradient and Hessian of a scalar at one or many points.

    Shapes are ``(...)``, ``(..., n)`` and ``(..., n, n)``. The Hessian is kept
    as a full matrix; every rule below builds it from symmetric pieces so it is
    exactly symmetric, not merely up to round-off.
    """

    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray

    @classmethod
    def constant(cls, c, shape, n):
        return cls(np.full(shape, float(c)), np.zeros(shape + (n,)), np.zeros(shape + (n, n)))

    @classmethod
    def variable(cls, x, i, n):
        g = np.zeros(x.shape + (n,))
        g[..., i] = 1.0
        return cls(np.array(x, dtype=float), g, np.zeros(x.shape + (n, n)))

    def __neg__(self):
        return Jet2(-self.value, -self.gradient, -self.hessian)

    def __add__(self, other):
        return Jet2(self.value + other.value, self.gradient + other.gradient, self.hessian + other.hessian)

    def __sub__(self, other):
        return Jet2(self.value - other.value, self.gradient - other.gradient, self.hessian - other.hessian)

    def __mul__(self, other):
        a, b = self, other
        ga, gb = a.gradient, b.gradient
        cross = ga[..., :, None] * gb[..., None, :]
        hess = (a.value[..., None, None] * b.hessian + b.value[..., None, None] * a.hessian
                + (cross + np.swapaxes(cross, -1, -2)))
        grad = a.value[..., None] * gb + b.value[..., None] * ga
        return Jet2(a.value * b.value, grad, hess)

    def chain(self, f0, f1, f2):
        """Compose with a scalar function given its value and two derivatives."""
        g = self.gradient
        outer = g[..., :, None] * g[..., None, :]
        hess = f2[..., None, None] * outer + f1[..., None, None] * self.hessian
        return Jet2(f0, f1[..., None] * g, hess)


def _jet_pow(base: Jet2, k: int, shape, n) -> Jet2:
    result = None
    square = base
    while k:
        if k & 1:
            result = square if result is None else result * square
        k >>= 1
        if k:
            square = square * square
    return result if result is not None else Jet2.constant(1.0, shape, n)


def _interpret(node: Node, X: np.ndarray, n: int) -> Jet2:
    shape = X.shape[:-1]
    if isinstance(node, Const):
        return Jet2.constant(node.value, shape, n)
    if isinstance(node, Var):
        return Jet2.variable(X[..., node.index], node.index, n)
    if isinstance(node, Neg):
        return -_interpret(node.arg, X, n)
    if isinstance(node, Pow):
        return _jet_pow(_interpret(node.base, X, n), node.exponent, shape, n)
    if isinstance(node, Call):
        u = _interpret(node.arg, X, n)
        if node.func == "exp":
            e = np.exp(u.value)
            return u.chain(e, e, e)
        if np.any(u.value <= 0.0):
            raise DomainError("sqrt of a non-positive value", node.arg)
        s = np.sqrt(u.value)
        return u.chain(s, 0.5 / s, -0.25 / (s * u.value))
    left = _interpret(node.left, X, n)
    right = _interpret(node.right, X, n)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if np.any(right.value == 0.0):
        raise DomainError("division by zero", node.right)
    w = 1.0 / right.value
    return left * right.chain(w, -w * w, 2.0 * w * w * w)


# --------------------------------------------------------------------------
# straight-line code generation (hot path)

class _Codegen:
    """Emit flat Python for value / gradient / Hessian of a tree.

    Entries are source snippets or ``None`` for a structural zero; ``"1.0"``
    is recognised so products with unit seeds vanish from the output.
    """

    def __init__(self, n: int, order: int):
        self.n = n
        self.order = order
        self.lines: list[str] = []
        self.count = 0

    def tmp(self, expr: str) -> str:
        if expr is None:
            return None
        if re.fullmatch(r"[A-Za-z_]\w*|-?[\d.]+(e[+-]?\d+)?", expr):
            return expr
        name = f"t{self.count}"
        self.count += 1
        self.lines.append(f"    {name} = {expr}")
        return name

    @staticmethod
    def mul(a, b):
        if a is None or b is None:
            return None
        if a == "1.0":
            return b
        if b == "1.0":
            return a
        return f"({a})*({b})"

    @staticmethod
    def add(*terms):
        terms = [t for t in terms if t is not None]
        if not terms:
            return None
        return " + ".join(f"({t})" for t in terms)

    @staticmethod
    def neg(a):
        return None if a is None else f"-({a})"

    def pairs(self):
        return [(i, j) for i in range(self.n) for j in range(i, self.n)]

    def jet(self, node: Node):
        n = self.n
        if isinstance(node, Const):
            return repr(node.value), [None] * n, {p: None for p in self.pairs()}
        if isinstance(node, Var):
            g = [None] * n
            g[node.index] = "1.0"
            return f"x{node.index}", g, {p: None for p in self.pairs()}
        if isinstance(node, Neg):
            v, g, h = self.jet(node.arg)
            return (self.tmp(self.neg(v)), [self.tmp(self.neg(x)) for x in g],
                    {p: self.tmp(self.neg(x)) for p, x in h.items()})
        if isinstance(node, Pow):
            base = self.jet(node.base)
            k = node.exponent
            result, square = None, base
            while k:
                if k & 1:
                    result = square if result is None else self.product(result, square)
                k >>= 1
                if k:
                    square = self.product(square, square)
            if result is None:
                return "1.0", [None] * n, {p: None for p in self.pairs()}
            return result
        if isinstance(node, Call):
            u = self.jet(node.arg)
            if node.func == "exp":
                e = self.tmp(f"exp({u[0]})")
                return self.compose(u, e, e, e)
            s = self.tmp(f"sqrt({u[0]})")
            if self.order == 0:
                return self.compose(u, s, None, None)
            d1 = self.tmp(f"0.5/({s})")
            d2 = self.tmp(f"-0.25/(({s})*({u[0]}))") if self.order == 2 else None
            return self.compose(u, s, d1, d2)
        a = self.jet(node.left)
        b = self.jet(node.right)
        if node.op in "+-":
            sign = self.neg if node.op == "-" else (lambda x: x)
            v = self.tmp(f"({a[0]}) {node.op} ({b[0]})")
            g = [self.tmp(self.add(x, sign(y))) for x, y in zip(a[1], b[1])]
            h = {p: self.tmp(self.add(a[2][p], sign(b[2][p]))) for p in a[2]}
            return v, g, h
        if node.op == "*":
            return self.product(a, b)
        w = self.tmp(f"1.0/({b[0]})")
        if self.order == 0:
            return self.product(a, self.compose(b, w, None, None))
        d1 = self.tmp(f"-({w})*({w})")
        d2 = self.tmp(f"2.0*({w})*({w})*({w})") if self.order == 2 else None
        return self.product(a, self.compose(b, w, d1, d2))

    def product(self, a, b):
        va, ga, ha = a
        vb, gb, hb = b
        v = self.tmp(self.mul(va, vb))
        g = [None] * self.n
        h = {p: None for p in self.pairs()}
        if self.order >= 1:
            g = [self.tmp(self.add(self.mul(va, y), self.mul(vb, x))) for x, y in zip(ga, gb)]
        if self.order >= 2:
            for (i, j) in h:
                # ga_i gb_j + ga_j gb_i is symmetric in (i, j) by construction
                h[(i, j)] = self.tmp(self.add(self.mul(va, hb[(i, j)]), self.mul(vb, ha[(i, j)]),
                                              self.mul(ga[i], gb[j]), self.mul(ga[j], gb[i])))
        return v, g, h

    def compose(self, u, f0, f1, f2):
        vu, gu, hu = u
        g = [None] * self.n
        h = {p: None for p in self.pairs()}
        if self.order >= 1:
            g = [self.tmp(self.mul(f1, x)) for x in gu]
        if self.order >= 2:
            for (i, j) in h:
                h[(i, j)] = self.tmp(self.add(self.mul(f2, self.mul(gu[i], gu[j])), self.mul(f1, hu[(i, j)])))
        return f0, g, h


def _compile(tree: Node, n: int, order: int):
    gen = _Codegen(n, order)
    v, g, h = gen.jet(tree)
    body = [f"    x{i} = X[..., {i}]" for i in range(n)] + gen.lines
    ret = [v]
    if order >= 1:
        ret.append("(" + ", ".join(x or "None" for x in g) + ",)")
    if order >= 2:
        ret.append("(" + ", ".join(h[p] or "None" for p in gen.pairs()) + ",)")
    src = "def _jet(X):\n" + "\n".join(body) + f"\n    return ({', '.join(ret)},)\n"
    namespace = {"exp": np.exp, "sqrt": np.sqrt}
    exec(compile(src, "<levelcurv-jet>", "exec"), namespace)
    return namespace["_jet"], gen.pairs()


# --------------------------------------------------------------------------
# public field type

@dataclass(frozen=True)
class ScalarField:
    """An immutable parsed function f: R^n -> R."""

    tree: Node
    arity: int
    source_text: str = ""
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __getstate__(self):
        return {"tree": self.tree, "arity": self.arity, "source_text": self.source_text}

    def __setstate__(self, state):
        for key, value in state.items():
            object.__setattr__(self, key, value)
        object.__setattr__(self, "_cache", {})

    def _compiled(self, order: int):
        if order not in self._cache:
            self._cache[order] = _compile(self.tree, self.arity, order)
        return self._cache[order]

    def value(self, X) -> np.ndarray:
        """Values at points ``X`` of shape ``(..., n)``; no domain checks (nan/inf pass through)."""
        X = np.asarray(X, dtype=float)
        fn, _ = self._compiled(0)
        with np.errstate(all="ignore"):
            (v,) = fn(X)
        return np.broadcast_to(np.asarray(v, dtype=float), X.shape[:-1]).copy()

    def gradient(self, X):
        X = np.asarray(X, dtype=float)
        fn, _ = self._compiled(1)
        with np.errstate(all="ignore"):
            v, g = fn(X)
        shape = X.shape[:-1]
        return (np.broadcast_to(np.asarray(v, dtype=float), shape).copy(),
                _stack_vector(g, shape))

    def jet(self, X) -> Jet2:
        """Fast compiled second-order jet; no domain checks."""
        X = np.asarray(X, dtype=float)
        fn, pairs = self._compiled(2)
        with np.errstate(all="ignore"):
            v, g, h = fn(X)
        shape = X.shape[:-1]
        n = self.arity
        hess = np.zeros(shape + (n, n))
        for (i, j), entry in zip(pairs, h):
            if entry is not None:
                hess[..., i, j] = entry
                hess[..., j, i] = entry
        return Jet2(np.broadcast_to(np.asarray(v, dtype=float), shape).copy(), _stack_vector(g, shape), hess)

    def __str__(self):
        return self.source_text or unparse(self.tree)


def _stack_vector(entries, shape):
    out = np.zeros(shape + (len(entries),))
    for i, entry in enumerate(entries):
        if entry is not None:
            out[..., i] = entry
    return out


def parse(text: str, arity: int) -> ScalarField:
    """Parse ``text`` into a field of the given arity (2 or 3)."""
    if arity not in (2, 3):
        raise ParseError(f"arity must be 2 or 3, got {arity}", 0)
    tree = parse_tree(text, arity)
    return ScalarField(tree, arity, text)


def eval2(field: ScalarField, point) -> Jet2:
    """Exact value, gradient and Hessian at ``point`` (shape ``(n,)`` or ``(N, n)``).

    Walks the tree with :class:`Jet2` arithmetic. Raises :class:`DomainError`
    naming the offending subexpression on division by zero or a sqrt outside
    its smooth domain.
    """
    X = np.asarray(point, dtype=float)
    if X.shape[-1] != field.arity:
        raise ValueError(f"point has dimension {X.shape[-1]}, field arity is {field.arity}")
    if not np.all(np.isfinite(X)):
        raise ValueError("point must be finite")
    with np.errstate(all="ignore"):
        return _interpret(field.tree, X, field.arity)
