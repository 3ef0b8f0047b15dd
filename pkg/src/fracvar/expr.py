"""Arithmetic expressions in one variable ``x`` for coefficient fields.

Grammar (``^`` binds tighter than unary minus and is right-associative)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | 'x' | 'pi' | 'e' | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Evaluation is vectorised over numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from fracvar.errors import DataError, ParseError

FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "log": (1, np.log),
    "pow": (2, np.power),
}
CONSTANTS = {"pi": math.pi, "e": math.e}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Num, Var, Const, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def tokenize(text: str) -> list:
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos),
                             {"number", "identifier", "operator"})
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), _byte_offset(text, m.start(kind))))
        pos = m.end()
    toks.append(_Tok("end", "", _byte_offset(text, n)))
    return toks


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def accept(self, *ops) -> str | None:
        if self.tok.kind == "op" and self.tok.text in ops:
            return self.advance().text
        return None

    def expect(self, op: str):
        if not self.accept(op):
            raise ParseError(f"unexpected {self._describe()}", self.tok.offset, {repr(op)})

    def _describe(self) -> str:
        return "end of input" if self.tok.kind == "end" else f"token {self.tok.text!r}"

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ParseError(f"unexpected {self._describe()}", self.tok.offset,
                             {"operator", "end of input"})
        return node

    def expr(self) -> Node:
        node = self.term()
        while (op := self.accept("+", "-")) is not None:
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while (op := self.accept("*", "/")) is not None:
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.accept("^"):
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            value = float(t.text)
            if not math.isfinite(value):
                raise ParseError(f"number {t.text!r} overflows", t.offset)
            return Num(value)
        if t.kind == "name":
            self.advance()
            if t.text == "x":
                return Var()
            if t.text in CONSTANTS:
                return Const(t.text)
            if t.text in FUNCTIONS:
                return self.call(t)
            raise ParseError(f"unknown identifier {t.text!r}", t.offset,
                             {"x", "pi", "e", *FUNCTIONS})
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected {self._describe()}", t.offset, {"primary expression"})

    def call(self, name_tok: _Tok) -> Node:
        self.expect("(")
        args = [self.expr()]
        while self.accept(","):
            args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name_tok.text][0]
        if len(args) != arity:
            raise ParseError(
                f"{name_tok.text} takes {arity} argument(s), got {len(args)}", name_tok.offset
            )
        return Call(name_tok.text, tuple(args))


def parse_expression(text: str) -> Node:
    """Parse ``text`` into an AST; raises :class:`ParseError` with a byte offset."""
    return _Parser(text).parse()


# -- printing -----------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    return 5


def _wrap(node: Node, cond: bool) -> str:
    s = to_string(node)
    return f"({s})" if cond else s


def to_string(node: Node) -> str:
    """Render an AST with the minimum parentheses needed to reparse it identically."""
    if isinstance(node, Num):
        v = node.value
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Neg):
        return "-" + _wrap(node.operand, _prec(node.operand) < 3)
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_string(a) for a in node.args)})"
    p = _PREC[node.op]
    if node.op == "^":
        return f"{_wrap(node.left, _prec(node.left) <= 4)}^{_wrap(node.right, _prec(node.right) < 3)}"
    return f"{_wrap(node.left, _prec(node.left) < p)} {node.op} {_wrap(node.right, _prec(node.right) <= p)}"


# -- evaluation ---------------------------------------------------------------


def _eval(node: Node, x):
    if isinstance(node, Num):
        return np.full_like(x, node.value)
    if isinstance(node, Var):
        return x
    if isinstance(node, Const):
        return np.full_like(x, CONSTANTS[node.name])
    if isinstance(node, Neg):
        return -_eval(node.operand, x)
    if isinstance(node, Call):
        return FUNCTIONS[node.name][1](*(_eval(a, x) for a in node.args))
    a, b = _eval(node.left, x), _eval(node.right, x)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    return np.power(a, b)


def evaluate(node: Node, x):
    """Evaluate at ``x`` (scalar or array); non-finite results raise :class:`DataError`."""
    xa = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        out = _eval(node, np.array(xa, dtype=float, ndmin=1)).reshape(xa.shape)
    if not np.all(np.isfinite(out)):
        bad = np.atleast_1d(xa)[~np.isfinite(np.atleast_1d(out))]
        raise DataError(f"expression {to_string(node)!r} is not finite at x = {bad[:3]}")
    return out if xa.ndim else float(out)


class Expression:
    """A parsed expression usable as a vectorised callable."""

    def __init__(self, text: str | Node):
        self.ast = parse_expression(text) if isinstance(text, str) else text
        self.text = to_string(self.ast)

    def __call__(self, x):
        return evaluate(self.ast, x)

    def derivative(self) -> "Expression":
        return Expression(differentiate(self.ast))

    def __repr__(self):
        return f"Expression({self.text!r})"


# -- symbolic derivative ------------------------------------------------------

_ZERO, _ONE = Num(0.0), Num(1.0)


def _has_x(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Neg):
        return _has_x(node.operand)
    if isinstance(node, BinOp):
        return _has_x(node.left) or _has_x(node.right)
    if isinstance(node, Call):
        return any(_has_x(a) for a in node.args)
    return False


def _add(a, b):
    if a == _ZERO:
        return b
    if b == _ZERO:
        return a
    return BinOp("+", a, b)


def _sub(a, b):
    if b == _ZERO:
        return a
    if a == _ZERO:
        return Neg(b)
    return BinOp("-", a, b)


def _mul(a, b):
    if a == _ZERO or b == _ZERO:
        return _ZERO
    if a == _ONE:
        return b
    if b == _ONE:
        return a
    return BinOp("*", a, b)


def _div(a, b):
    if a == _ZERO:
        return _ZERO
    if b == _ONE:
        return a
    return BinOp("/", a, b)


def _power_rule(u, v):
    du, dv = differentiate(u), differentiate(v)
    if not _has_x(v):
        return _mul(_mul(v, BinOp("^", u, BinOp("-", v, _ONE))), du)
    # d(u^v) = u^v (v' log u + v u'/u)
    inner = _add(_mul(dv, Call("log", (u,))), _div(_mul(v, du), u))
    return _mul(BinOp("^", u, v), inner)


def differentiate(node: Node) -> Node:
    """Symbolic ``d/dx`` with light simplification of zeros and ones."""
    if isinstance(node, (Num, Const)):
        return _ZERO
    if isinstance(node, Var):
        return _ONE
    if isinstance(node, Neg):
        d = differentiate(node.operand)
        return _ZERO if d == _ZERO else Neg(d)
    if isinstance(node, Call):
        (u, *rest) = node.args
        du = differentiate(u)
        if node.name == "pow":
            return _power_rule(u, rest[0])
        if du == _ZERO:
            return _ZERO
        outer = {
            "sin": lambda: Call("cos", (u,)),
            "cos": lambda: Neg(Call("sin", (u,))),
            "exp": lambda: node,
            "sqrt": lambda: _div(_ONE, BinOp("*", Num(2.0), node)),
            "abs": lambda: _div(u, node),
            "log": lambda: _div(_ONE, u),
        }[node.name]()
        return _mul(outer, du)
    a, b = node.left, node.right
    if node.op == "+":
        return _add(differentiate(a), differentiate(b))
    if node.op == "-":
        return _sub(differentiate(a), differentiate(b))
    if node.op == "*":
        return _add(_mul(differentiate(a), b), _mul(a, differentiate(b)))
    if node.op == "/":
        num = _sub(_mul(differentiate(a), b), _mul(a, differentiate(b)))
        return _div(num, BinOp("^", b, Num(2.0)))
    return _power_rule(a, b)
