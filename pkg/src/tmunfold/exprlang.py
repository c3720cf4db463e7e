"""A small closed-form expression language for smooth maps.

Grammar (whitespace-insensitive)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' powarg)*
    powarg := '-' powarg | atom
    atom   := NUMBER | 'pi' | NAME | FUNC '(' expr ')' | '(' expr ')'

``^`` binds tighter than unary minus, so ``-r^2`` is ``-(r^2)``. All binary
operators are left-associative.

Evaluation works on Python floats and on numpy arrays alike; a batch of
points is evaluated by binding each variable to a 1-D array.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import (
    DomainEvalError,
    ExprSyntaxError,
    StencilOutOfDomain,
    UnboundVariable,
    UnknownFunction,
)

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sign")
CONSTANTS = {"pi": math.pi}

Value = Union[float, np.ndarray]
Env = Mapping[str, Value]


class Expr:
    """Base class of expression tree nodes."""

    __slots__ = ()

    def free_vars(self) -> frozenset:
        raise NotImplementedError

    def evaluate(self, env: Env) -> Value:
        raise NotImplementedError

    def substitute(self, mapping: Mapping[str, "Expr"]) -> "Expr":
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def free_vars(self):
        return frozenset()

    def evaluate(self, env):
        return self.value

    def substitute(self, mapping):
        return self

    def __str__(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Const(Expr):
    name: str

    def free_vars(self):
        return frozenset()

    def evaluate(self, env):
        return CONSTANTS[self.name]

    def substitute(self, mapping):
        return self

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def free_vars(self):
        return frozenset((self.name,))

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise UnboundVariable(self.name) from None

    def substitute(self, mapping):
        return mapping.get(self.name, self)

    def __str__(self):
        return self.name


def _check(value, what):
    if np.all(np.isfinite(value)):
        return value
    raise DomainEvalError(f"{what} produced a non-finite value")


def _unary(op, x):
    if op == "neg":
        return -x
    if op == "log":
        if np.any(np.asarray(x) <= 0):
            raise DomainEvalError("log of a nonpositive value")
        return np.log(x)
    if op == "sqrt":
        if np.any(np.asarray(x) < 0):
            raise DomainEvalError("sqrt of a negative value")
        return np.sqrt(x)
    with np.errstate(all="ignore"):
        out = {
            "sin": np.sin,
            "cos": np.cos,
            "tan": np.tan,
            "exp": np.exp,
            "abs": np.abs,
            "sign": np.sign,
        }[op](x)
    return _check(out, op)


def _binary(op, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.any(np.asarray(b) == 0):
            raise DomainEvalError("division by zero")
        return a / b
    with np.errstate(all="ignore"):
        out = np.power(np.asarray(a, dtype=float), b)
    if np.ndim(out) == 0:
        out = float(out)
    return _check(out, "pow")


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    arg: Expr

    def free_vars(self):
        return self.arg.free_vars()

    def evaluate(self, env):
        out = _unary(self.op, self.arg.evaluate(env))
        return float(out) if np.ndim(out) == 0 else out

    def substitute(self, mapping):
        return Unary(self.op, self.arg.substitute(mapping))

    def __str__(self):
        if self.op == "neg":
            return f"(-{self.arg})"
        return f"{self.op}({self.arg})"


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def free_vars(self):
        return self.left.free_vars() | self.right.free_vars()

    def evaluate(self, env):
        out = _binary(self.op, self.left.evaluate(env), self.right.evaluate(env))
        return _check(out, self.op)

    def substitute(self, mapping):
        return Binary(self.op, self.left.substitute(mapping), self.right.substitute(mapping))

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = []  # (kind, text, char position)
        pos = 0
        while pos < len(source):
            m = _TOKEN.match(source, pos)
            if m is None:
                raise ExprSyntaxError(f"unexpected character {source[pos]!r}", self._bytes(pos),
                                      ("number", "name", "operator"))
            if m.lastgroup != "ws":
                self.tokens.append((m.lastgroup, m.group(), pos))
            pos = m.end()
        self.i = 0

    def _bytes(self, pos):
        return len(self.source[:pos].encode("utf-8"))

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("eof", "", len(self.source))

    def fail(self, expected):
        kind, text, pos = self.peek()
        what = "end of input" if kind == "eof" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", self._bytes(pos), expected)

    def accept(self, text):
        kind, tok, _ = self.peek()
        if kind == "op" and tok == text:
            self.i += 1
            return True
        return False

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "eof":
            self.fail({"+", "-", "*", "/", "^", "end of input"})
        return e

    def expr(self):
        e = self.term()
        while True:
            if self.accept("+"):
                e = Binary("+", e, self.term())
            elif self.accept("-"):
                e = Binary("-", e, self.term())
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            if self.accept("*"):
                e = Binary("*", e, self.unary())
            elif self.accept("/"):
                e = Binary("/", e, self.unary())
            else:
                return e

    def unary(self):
        if self.accept("-"):
            return Unary("neg", self.unary())
        return self.power()

    def power(self):
        e = self.atom()
        while self.accept("^"):
            e = Binary("^", e, self.powarg())
        return e

    def powarg(self):
        if self.accept("-"):
            return Unary("neg", self.powarg())
        return self.atom()

    def atom(self):
        kind, text, pos = self.peek()
        if kind == "num":
            self.i += 1
            return Num(float(text))
        if kind == "name":
            self.i += 1
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise UnknownFunction(f"unknown function {text!r}", self._bytes(pos), FUNCTIONS)
                self.i += 1
                arg = self.expr()
                if not self.accept(")"):
                    self.fail({")"})
                return Unary(text, arg)
            if text in FUNCTIONS:
                self.fail({"("})
            if text in CONSTANTS:
                return Const(text)
            return Var(text)
        if self.accept("("):
            e = self.expr()
            if not self.accept(")"):
                self.fail({")"})
            return e
        self.fail({"number", "name", "function", "(", "-"})


def parse_expr(source: str) -> Expr:
    """Parse ``source`` into an expression tree."""
    return _Parser(source).parse()


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float)):
        return Num(float(value))
    return parse_expr(value)


def evaluate(e: Expr, env: Env) -> Value:
    """Evaluate ``e`` under ``env``; arrays in ``env`` broadcast."""
    return e.evaluate(env)


# --------------------------------------------------------------------------
# finite differences

DEFAULT_STEP = {1: 1e-4, 2: 1e-3, 3: 1e-3}

# (offsets, weights) with f^(k) ~ sum(w * f(x + o*h)) / h^k
_CENTRAL = {
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
}
_FORWARD = {
    1: ((0, 1, 2), (-1.5, 2.0, -0.5)),
    2: ((0, 1, 2, 3), (2.0, -5.0, 4.0, -1.0)),
    3: ((0, 1, 2, 3, 4), (-2.5, 9.0, -12.0, 7.0, -1.5)),
}


def stencil(order: int, side: str):
    """Offsets and weights of the stencil for ``order`` on ``side``."""
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    if side == "central":
        return _CENTRAL[order]
    offsets, weights = _FORWARD[order]
    if side == "right":
        return offsets, weights
    if side == "left":
        sgn = (-1) ** order
        return tuple(-o for o in offsets), tuple(sgn * w for w in weights)
    raise ValueError(f"side must be central, left or right, got {side!r}")


def diff_fd(e: Expr, var: str, env: Env, order: int = 1, side: str = "central",
            h: float | None = None, bounds: tuple[float, float] | None = None) -> Value:
    """Finite-difference derivative of ``e`` with respect to ``var``.

    ``bounds`` is the declared range of ``var``; stencil points outside it
    raise :class:`StencilOutOfDomain`.
    """
    offsets, weights = stencil(order, side)
    if h is None:
        h = DEFAULT_STEP[order]
    if not h > 0:
        raise ValueError("h must be positive")
    if var not in env:
        raise UnboundVariable(var)
    x0 = env[var]
    if bounds is not None:
        lo, hi = bounds
        pts = [np.asarray(x0) + o * h for o in offsets]
        if any(np.any(p < lo) or np.any(p > hi) for p in pts):
            raise StencilOutOfDomain(f"stencil for d^{order}/d{var}^{order} leaves [{lo}, {hi}]")
    total = 0.0
    for o, w in zip(offsets, weights):
        shifted = dict(env)
        shifted[var] = x0 + o * h
        total = total + w * e.evaluate(shifted)
    return total / h**order
