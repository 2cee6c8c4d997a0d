"""Small arithmetic expression language over the coordinates x, y.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'

so ``-x^2`` is ``-(x^2)`` and ``2^-1`` is allowed.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


class ExprError(InvalidInput):
    def __init__(self, message, pos=None):
        super().__init__(message if pos is None else f"{message} at offset {pos}")
        self.pos = pos


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


VARIABLES = ("x", "y")
CONSTANTS = {"pi": math.pi}
FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "abs": (1, np.abs),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))")


def tokenize(text: str):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ExprError(f"unexpected character {text[pos:].lstrip()[:1]!r}",
                            pos + len(text[pos:]) - len(text[pos:].lstrip()))
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            found = tok[1] or "end of input"
            raise ExprError(f"expected {value!r}, found {found!r}", tok[2])
        self.i += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek() [1] == "-" and self.peek()[0] == "op":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            return Num(float(val))
        if kind == "name":
            self.take()
            if self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ExprError(f"unknown function {val!r}", pos)
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                arity = FUNCTIONS[val][0]
                if len(args) != arity:
                    raise ExprError(f"{val} takes {arity} argument(s), got {len(args)}", pos)
                return Call(val, tuple(args))
            if val in VARIABLES:
                return Var(val)
            if val in CONSTANTS:
                return Num(CONSTANTS[val])
            raise ExprError(f"unknown name {val!r}", pos)
        if val == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        raise ExprError(f"unexpected {val or 'end of input'!r}", pos)


def parse(text: str):
    if not isinstance(text, str):
        raise ExprError("expression must be a string")
    p = _Parser(text)
    node = p.expr()
    kind, val, pos = p.peek()
    if kind != "end":
        raise ExprError(f"unexpected {val!r}", pos)
    return node


def evaluate(node, coords):
    """Vectorized evaluation; ``coords`` is an (n, N) array of points."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    n = coords.shape[0]

    def ev(nd):
        if isinstance(nd, Num):
            return np.full(n, nd.value)
        if isinstance(nd, Var):
            k = VARIABLES.index(nd.name)
            if k >= coords.shape[1]:
                raise ExprError(f"coordinate {nd.name!r} not available in {coords.shape[1]}D")
            return coords[:, k].copy()
        if isinstance(nd, Neg):
            return -ev(nd.arg)
        if isinstance(nd, BinOp):
            a, b = ev(nd.left), ev(nd.right)
            if nd.op == "+":
                return a + b
            if nd.op == "-":
                return a - b
            if nd.op == "*":
                return a * b
            if nd.op == "/":
                return a / b
            return np.power(a, b)
        if isinstance(nd, Call):
            return FUNCTIONS[nd.name][1](*[ev(a) for a in nd.args])
        raise ExprError(f"bad node {nd!r}")

    with np.errstate(all="ignore"):
        return ev(node)


def _needs_parens(child, parent_prec, right=False, op=None):
    if isinstance(child, BinOp):
        cp = _PREC[child.op]
        if cp < parent_prec:
            return True
        if cp == parent_prec:
            # left-assoc ops need parens on the right, '^' on the left
            return right if op != "^" else not right
    if isinstance(child, Neg) and parent_prec >= 3:
        # '-a' binds looser than '^' and must be parenthesized as a base
        return not right or op != "^"
    return False


def to_text(node) -> str:
    """Pretty-print; ``parse(to_text(e)) == e``."""
    if isinstance(node, Num):
        v = node.value
        s = repr(float(v))
        if s in ("inf", "nan"):
            raise ExprError("cannot print non-finite literal")
        return s if v >= 0 else f"({s})"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = to_text(node.arg)
        if isinstance(node.arg, BinOp) and _PREC[node.arg.op] < 4:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(node, BinOp):
        prec = _PREC[node.op]
        left = to_text(node.left)
        right = to_text(node.right)
        if _needs_parens(node.left, prec, False, node.op):
            left = f"({left})"
        if _needs_parens(node.right, prec, True, node.op):
            right = f"({right})"
        return f"{left} {node.op} {right}" if node.op != "^" else f"{left}^{right}"
    if isinstance(node, Call):
        return f"{node.name}(" + ", ".join(to_text(a) for a in node.args) + ")"
    raise ExprError(f"bad node {node!r}")


@dataclass(frozen=True)
class Expression:
    text: str
    ast: object

    @classmethod
    def parse(cls, text):
        return cls(text, parse(text))

    def __call__(self, coords):
        return evaluate(self.ast, coords)

    def __str__(self):
        return to_text(self.ast)
