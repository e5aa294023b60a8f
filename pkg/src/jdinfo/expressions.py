"""Small arithmetic expression language for coefficient fields.

Channel coefficients (drift, diffusion, jump rate, kernel parameters) are
given as strings over the variables ``x`` (state) and ``t`` (time).  The
grammar is deliberately tiny and closed: reals, ``+ - * / ^``, unary minus,
the functions exp/log/sqrt/sin/cos/tanh/abs, and the constants pi and e.
No user-defined functions, no locale dependence.

Evaluation is strict: division by zero, log of a non-positive value, sqrt
of a negative value, fractional powers of negative bases and overflow all
raise :class:`EvaluationError` instead of producing NaN/inf.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ExpressionError",
    "EvaluationError",
    "ScalarField",
    "parse_expression",
]


class ExpressionError(ValueError):
    """Syntax or name error while parsing; carries the byte offset."""

    def __init__(self, message: str, text: str, pos: int):
        self.offset = len(text[:pos].encode("utf-8"))
        super().__init__(f"{message} (byte offset {self.offset})")


class EvaluationError(ValueError):
    """Domain error during evaluation (division by zero, log(<=0), ...)."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
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
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

_FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos", "tanh", "abs")
_CONSTANTS = {"pi": math.pi, "e": math.e}
_DEFAULT_VARIABLES = ("x", "t")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            at = len(text) - len(stripped)
            raise ExpressionError(f"unexpected character {stripped[0]!r}", text, at)
        if m.lastgroup is not None:
            tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive descent with standard precedence; ^ is right-associative."""

    def __init__(self, text: str, variables):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, pos = self.peek()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r}", self.text, pos)
        self.advance()

    def parse(self) -> Node:
        kind, _, pos = self.peek()
        if kind == "end":
            raise ExpressionError("empty expression", self.text, pos)
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {val!r}", self.text, pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                node = BinOp(val, node, self.term())
            else:
                return node

    def term(self) -> Node:
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                node = BinOp(val, node, self.unary())
            else:
                return node

    def unary(self) -> Node:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, val, pos = self.advance()
        if kind == "num":
            return Num(float(val))
        if kind == "ident":
            if val in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                k, v, p = self.peek()
                if k == "op" and v == ",":
                    raise ExpressionError(f"{val} takes exactly one argument", self.text, p)
                self.expect_op(")")
                return Call(val, arg)
            if val in _CONSTANTS:
                return Num(_CONSTANTS[val])
            if val in self.variables:
                return Var(val)
            if val == "xi":
                raise ExpressionError(
                    "'xi' is not a field variable; jump kernels are parametric families",
                    self.text,
                    pos,
                )
            k, v, _ = self.peek()
            if k == "op" and v == "(":
                raise ExpressionError(f"unknown function {val!r}", self.text, pos)
            raise ExpressionError(f"unknown identifier {val!r}", self.text, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        shown = val if val else "end of input"
        raise ExpressionError(f"unexpected token {shown!r}", self.text, pos)


# ---------------------------------------------------------------------------
# Evaluation


def _check_finite(out, what: str):
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"non-finite result in {what} (overflow?)")
    return out


def _eval(node: Node, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        arg = _eval(node.arg, env)
        if node.name == "log":
            if np.any(np.asarray(arg) <= 0.0):
                raise EvaluationError("log of non-positive value")
            return np.log(arg)
        if node.name == "sqrt":
            if np.any(np.asarray(arg) < 0.0):
                raise EvaluationError("sqrt of negative value")
            return np.sqrt(arg)
        if node.name == "exp":
            return _check_finite(np.exp(arg), "exp")
        if node.name == "abs":
            return np.abs(arg)
        return getattr(np, node.name)(arg)
    left = _eval(node.left, env)
    right = _eval(node.right, env)
    if node.op == "+":
        return _check_finite(left + right, "+")
    if node.op == "-":
        return _check_finite(left - right, "-")
    if node.op == "*":
        return _check_finite(left * right, "*")
    if node.op == "/":
        if np.any(np.asarray(right) == 0.0):
            raise EvaluationError("division by zero")
        return _check_finite(left / right, "/")
    # power
    r = np.asarray(right)
    l = np.asarray(left)
    if np.all(r == np.floor(r)):
        if np.any((l == 0.0) & (r < 0)):
            raise EvaluationError("zero raised to a negative power")
    else:
        if np.any(l < 0.0):
            raise EvaluationError("negative base with non-integer exponent")
        if np.any((l == 0.0) & (r < 0)):
            raise EvaluationError("zero raised to a negative power")
    return _check_finite(np.power(left, right), "^")


# ---------------------------------------------------------------------------
# Unparsing (round-trip safe)

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(node: Node) -> int:
    if isinstance(node, (Var, Call)):
        return _PREC_ATOM
    if isinstance(node, Num):
        return _PREC_ATOM if node.value >= 0 else _PREC_UNARY
    if isinstance(node, Neg):
        return _PREC_UNARY
    return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}[node.op]


def _wrap(node: Node, min_prec: int) -> str:
    s = _unparse(node)
    return f"({s})" if _prec(node) < min_prec else s


def _unparse(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({_unparse(node.arg)})"
    if isinstance(node, Neg):
        return "-" + _wrap(node.operand, _PREC_UNARY)
    if node.op in "+-":
        return f"{_wrap(node.left, _PREC_ADD)} {node.op} {_wrap(node.right, _PREC_MUL)}"
    if node.op in "*/":
        return f"{_wrap(node.left, _PREC_MUL)}{node.op}{_wrap(node.right, _PREC_UNARY)}"
    # ^ binds right; a base that is itself a power or unary needs parens
    return f"{_wrap(node.left, _PREC_ATOM)}^{_wrap(node.right, _PREC_UNARY)}"


def _depends_on(node: Node, name: str) -> bool:
    if isinstance(node, Var):
        return node.name == name
    if isinstance(node, Neg):
        return _depends_on(node.operand, name)
    if isinstance(node, Call):
        return _depends_on(node.arg, name)
    if isinstance(node, BinOp):
        return _depends_on(node.left, name) or _depends_on(node.right, name)
    return False


@dataclass(frozen=True)
class ScalarField:
    """An evaluable real field f(x, t) parsed from a source string."""

    source: str
    root: Node

    def __call__(self, x, t):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = _eval(self.root, {"x": x, "t": t})
        if np.isscalar(x) and np.isscalar(t):
            return float(out)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, t).shape).copy()

    def unparse(self) -> str:
        return _unparse(self.root)

    def depends_on(self, name: str) -> bool:
        return _depends_on(self.root, name)

    @property
    def is_literal_zero(self) -> bool:
        return isinstance(self.root, Num) and self.root.value == 0.0

    def __repr__(self):
        return f"ScalarField({self.source!r})"


def parse_expression(text: str, variables=_DEFAULT_VARIABLES) -> ScalarField:
    """Parse ``text`` into a :class:`ScalarField` over the given variables.

    Raises :class:`ExpressionError` with a byte offset on syntax errors,
    unknown identifiers, and arity mismatches.
    """
    if not isinstance(text, str):
        raise ExpressionError("expression must be a string", str(text), 0)
    root = _Parser(text, tuple(variables)).parse()
    return ScalarField(source=text, root=root)


def unparse(node_or_field) -> str:
    if isinstance(node_or_field, ScalarField):
        return node_or_field.unparse()
    return _unparse(node_or_field)
