"""A small differentiable expression language over (x, theta).

Grammar, lowest precedence first::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # exponent must fold to an integer
    atom   := NUMBER | 'x' | 'theta' | 'pi' | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := 'sin' | 'cos' | 'exp'

Trees are immutable dataclasses, so structural equality is ``==``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ExprSyntaxError, NumericDomainError

MAX_LENGTH = 4096
VARIABLES = ("x", "theta")
FUNCTIONS = ("sin", "cos", "exp")
TINY_DENOMINATOR = 1e-300


class Node:
    __slots__ = ()

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    name: str


@dataclass(frozen=True)
class Pi(Node):
    pass


@dataclass(frozen=True)
class Neg(Node):
    arg: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Pow(Node):
    base: Node
    exponent: int


@dataclass(frozen=True)
class Call(Node):
    fn: str
    arg: Node


# ---------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # 'num', 'name', 'op' or 'end'
    text: str
    offset: int


def _tokenize(text):
    tokens = []
    pos = 0
    # offsets are reported in bytes of the UTF-8 encoding
    boff = lambda i: len(text[:i].encode("utf-8"))  # noqa: E731
    while True:
        rest = text[pos:]
        stripped = pos + len(rest) - len(rest.lstrip())
        if stripped >= len(text):
            tokens.append(_Tok("end", "", boff(len(text))))
            return tokens
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(
                f"unexpected character {text[stripped]!r}", boff(stripped),
                ("number", "identifier", "operator", "("))
        kind = m.lastgroup
        tokens.append(_Tok(kind, m.group(kind), boff(m.start(kind))))
        pos = m.end()


# ------------------------------------------------------------------- parser

class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def advance(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        t = self.tok
        if t.kind == "op" and t.text == text:
            return self.advance()
        raise ExprSyntaxError(f"unexpected {_describe(t)}", t.offset, (text,))

    def at_op(self, *ops):
        return self.tok.kind == "op" and self.tok.text in ops

    def parse(self):
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {_describe(self.tok)}", self.tok.offset,
                                  ("+", "-", "*", "/", "^", "end of input"))
        return node

    def expr(self):
        node = self.term()
        while self.at_op("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.at_op("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.at_op("-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.at_op("^"):
            self.advance()
            start = self.tok.offset
            exponent = fold(self.unary())
            if not isinstance(exponent, Num) or exponent.value != int(exponent.value):
                raise ExprSyntaxError("exponent must be an integer constant", start,
                                      ("integer",))
            return Pow(base, int(exponent.value))
        return base

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.advance()
            value = float(t.text)
            if not math.isfinite(value):
                raise ExprSyntaxError("numeric literal overflows", t.offset, ("number",))
            return Num(value)
        if t.kind == "name":
            self.advance()
            if t.text in VARIABLES:
                return Var(t.text)
            if t.text == "pi":
                return Pi()
            if t.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(t.text, arg)
            raise ExprSyntaxError(f"unknown identifier {t.text!r}", t.offset,
                                  VARIABLES + ("pi",) + FUNCTIONS)
        if self.at_op("("):
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(f"unexpected {_describe(t)}", t.offset,
                              ("number", "x", "theta", "pi", "function", "(", "-"))


def _describe(tok):
    return "end of input" if tok.kind == "end" else repr(tok.text)


def parse_expression(text: str) -> Node:
    """Parse ``text`` into an expression tree."""
    if not isinstance(text, str):
        raise ConfigError(f"expression must be a string, got {type(text).__name__}")
    if len(text) > MAX_LENGTH:
        raise ConfigError(f"expression longer than {MAX_LENGTH} characters")
    try:
        return _Parser(text).parse()
    except RecursionError:
        raise ConfigError("expression nested too deeply") from None


# ------------------------------------------------------------------ printer

_LEVEL = {"+": 1, "-": 1, "*": 2, "/": 2}


def _level(node):
    if isinstance(node, BinOp):
        return _LEVEL[node.op]
    if isinstance(node, Neg):
        return 3
    if isinstance(node, Num) and node.value < 0:
        return 3
    if isinstance(node, Pow):
        return 4
    return 5


def _wrap(node, min_level):
    s = to_text(node)
    return f"({s})" if _level(node) < min_level else s


def to_text(node: Node) -> str:
    """Print a tree so that parsing the text gives the same tree back."""
    if isinstance(node, Num):
        s = repr(float(node.value))
        return s if node.value >= 0 else f"-{repr(float(-node.value))}"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Neg):
        return "-" + _wrap(node.arg, 3)
    if isinstance(node, BinOp):
        lvl = _LEVEL[node.op]
        return f"{_wrap(node.left, lvl)}{node.op}{_wrap(node.right, lvl + 1)}"
    if isinstance(node, Pow):
        e = str(node.exponent) if node.exponent >= 0 else f"({node.exponent})"
        return f"{_wrap(node.base, 5)}^{e}"
    if isinstance(node, Call):
        return f"{node.fn}({to_text(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


# ------------------------------------------------------- algebra and folding

ZERO = Num(0.0)
ONE = Num(1.0)


def _is(node, value):
    return isinstance(node, Num) and node.value == value


def add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a, b):
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    if isinstance(a, Num) and isinstance(b, Num) and b.value != 0:
        return Num(a.value / b.value)
    return BinOp("/", a, b)


def neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a, n):
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Num) and (a.value != 0 or n > 0):
        return Num(a.value ** n)
    return Pow(a, n)


def call(fn, a):
    if isinstance(a, Num):
        return Num(float(getattr(math, fn)(a.value)))
    return Call(fn, a)


def fold(node: Node) -> Node:
    """Constant-fold a tree (pi is kept symbolic)."""
    if isinstance(node, Neg):
        return neg(fold(node.arg))
    if isinstance(node, BinOp):
        a, b = fold(node.left), fold(node.right)
        return {"+": add, "-": sub, "*": mul, "/": div}[node.op](a, b)
    if isinstance(node, Pow):
        return power(fold(node.base), node.exponent)
    if isinstance(node, Call):
        return call(node.fn, fold(node.arg))
    return node


def differentiate(node: Node, var: str) -> Node:
    """Exact symbolic derivative of ``node`` with respect to ``var``."""
    if var not in VARIABLES:
        raise ConfigError(f"cannot differentiate with respect to {var!r}")
    d = lambda n: differentiate(n, var)  # noqa: E731
    if isinstance(node, (Num, Pi)):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == var else ZERO
    if isinstance(node, Neg):
        return neg(d(node.arg))
    if isinstance(node, BinOp):
        a, b = node.left, node.right
        if node.op == "+":
            return add(d(a), d(b))
        if node.op == "-":
            return sub(d(a), d(b))
        if node.op == "*":
            return add(mul(d(a), b), mul(a, d(b)))
        return div(sub(mul(d(a), b), mul(a, d(b))), power(b, 2))
    if isinstance(node, Pow):
        n = node.exponent
        return mul(mul(Num(float(n)), power(node.base, n - 1)), d(node.base))
    if isinstance(node, Call):
        u, du = node.arg, d(node.arg)
        if node.fn == "sin":
            return mul(call("cos", u), du)
        if node.fn == "cos":
            return neg(mul(call("sin", u), du))
        return mul(call("exp", u), du)
    raise TypeError(f"not an expression node: {node!r}")


def free_variables(node: Node) -> set:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, (Neg, Call)):
        return free_variables(node.arg)
    if isinstance(node, Pow):
        return free_variables(node.base)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    return set()


# --------------------------------------------------------------- evaluation

def _checked_divide(a, b):
    if np.any(np.abs(b) < TINY_DENOMINATOR):
        raise NumericDomainError("division by a value smaller than 1e-300")
    return a / b


def _checked_divide_scalar(a, b):
    if abs(b) < TINY_DENOMINATOR:
        raise NumericDomainError("division by a value smaller than 1e-300")
    return a / b


def to_source(node: Node) -> str:
    """Python source for ``node``; functions are looked up in a namespace ``m``."""
    if isinstance(node, Num):
        return f"({node.value!r})"
    if isinstance(node, Pi):
        return f"({math.pi!r})"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.arg)})"
    if isinstance(node, BinOp):
        a, b = to_source(node.left), to_source(node.right)
        if node.op == "/":
            return f"_div({a}, {b})"
        return f"({a} {node.op} {b})"
    if isinstance(node, Pow):
        if node.exponent >= 0:
            return f"({to_source(node.base)} ** {node.exponent})"
        return f"_div(1.0, {to_source(node.base)} ** {-node.exponent})"
    if isinstance(node, Call):
        return f"m.{node.fn}({to_source(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def compile_node(node: Node, scalar: bool = False):
    """Return a function ``(x, theta) -> value``.

    The default version uses numpy ufuncs and accepts real or complex arrays;
    ``scalar=True`` gives a faster version for Python floats.
    """
    if scalar:
        env = {"m": math, "_div": _checked_divide_scalar}
    else:
        env = {"m": np, "_div": _checked_divide}
    try:
        return eval(f"lambda x, theta: {to_source(node)}", env)  # noqa: S307
    except (RecursionError, SyntaxError, MemoryError):
        raise ConfigError("expression nested too deeply to compile") from None


def evaluate(node: Node, x, theta):
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    shape = np.broadcast_shapes(x.shape, theta.shape)
    out = compile_node(node)(x, theta)
    return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()
