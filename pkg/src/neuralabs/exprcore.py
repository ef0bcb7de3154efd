"""Expression trees for nonlinear vector fields.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := ['-'] atom ['^' integer]
    atom   := number | ident | func '(' expr ')' | '(' expr ')'
    func   := sin | cos | exp | sqrt | cbrt

Point evaluation accepts numpy arrays whose leading axis indexes the state
variables, so one call evaluates a whole batch of points.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from . import interval as iv
from .errors import DomainError, ExprSyntaxError, UnknownVariable, UnsupportedFunction

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "cbrt")


class Expr:
    __slots__ = ()

    def __add__(self, other):
        return Add(self, _lift(other))

    def __radd__(self, other):
        return Add(_lift(other), self)

    def __sub__(self, other):
        return Sub(self, _lift(other))

    def __rsub__(self, other):
        return Sub(_lift(other), self)

    def __mul__(self, other):
        return Mul(self, _lift(other))

    def __rmul__(self, other):
        return Mul(_lift(other), self)

    def __truediv__(self, other):
        return Div(self, _lift(other))

    def __neg__(self):
        return Neg(self)

    def __pow__(self, p):
        return Pow(self, p)


def _lift(x) -> Expr:
    return x if isinstance(x, Expr) else Const(float(x))


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Union[int, Fraction]

    def __post_init__(self):
        if isinstance(self.exponent, Fraction) and self.exponent.denominator == 1:
            object.__setattr__(self, "exponent", int(self.exponent))
        if isinstance(self.exponent, Fraction) and self.exponent.denominator % 2 == 0:
            raise ValueError("rational exponents need an odd denominator")
        if not isinstance(self.exponent, (int, Fraction)):
            raise TypeError("Pow exponent must be an int or Fraction literal")


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise UnsupportedFunction(self.name)


def Sin(e):
    return Func("sin", e)


def Cos(e):
    return Func("cos", e)


def Exp(e):
    return Func("exp", e)


def Sqrt(e):
    return Func("sqrt", e)


def Cbrt(e):
    return Func("cbrt", e)


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.vars = {name: k for k, name in enumerate(variables)}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            raise ExprSyntaxError(f"expected {value!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.factor()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def factor(self) -> Expr:
        negate = False
        if self.peek()[:2] == ("op", "-"):
            self.take()
            negate = True
        e = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            sign = 1
            if self.peek()[:2] == ("op", "-"):
                self.take()
                sign = -1
            kind, text, pos = self.take()
            if kind != "num" or not text.isdigit():
                raise ExprSyntaxError("exponent must be an integer literal", pos)
            e = Pow(e, sign * int(text))
        return Neg(e) if negate else e

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "id":
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise UnsupportedFunction(f"unsupported function {text!r} at offset {pos}")
                self.take()
                arg = self.expr()
                self.expect(")")
                return Func(text, arg)
            if text not in self.vars:
                raise UnknownVariable(text)
            return Var(self.vars[text])
        if (kind, text) == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError("expected a number, variable, function or '('" if kind != "end" else "unexpected end of input", pos)


def parse(text: str, variables: Sequence[str]) -> Expr:
    """Parse ``text`` into an expression over the named state variables."""
    return _Parser(text, variables).parse()


# ---------------------------------------------------------------- printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def to_text(e: Expr, variables: Sequence[str]) -> str:
    """Render an expression in the grammar accepted by :func:`parse`."""

    def prec(node):
        if isinstance(node, Const) and node.value < 0:
            return 3
        return _PREC.get(type(node), 5)

    def wrap(node, minimum):
        s = go(node)
        return f"({s})" if prec(node) < minimum else s

    def go(node) -> str:
        if isinstance(node, Const):
            v = node.value
            if v < 0:
                return "-" + repr(-v)
            return repr(v)
        if isinstance(node, Var):
            return variables[node.index]
        if isinstance(node, Neg):
            return "-" + wrap(node.arg, 4)
        if isinstance(node, (Add, Sub)):
            op = "+" if isinstance(node, Add) else "-"
            return f"{wrap(node.left, 1)} {op} {wrap(node.right, 2)}"
        if isinstance(node, (Mul, Div)):
            op = "*" if isinstance(node, Mul) else "/"
            return f"{wrap(node.left, 2)}{op}{wrap(node.right, 3)}"
        if isinstance(node, Pow):
            if isinstance(node.exponent, Fraction):
                raise ValueError("rational exponents have no textual form")
            return f"{wrap(node.base, 5)}^{node.exponent}"
        if isinstance(node, Func):
            return f"{node.name}({go(node.arg)})"
        raise TypeError(node)

    return go(e)


def variables_used(e: Expr) -> set:
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Const):
        return set()
    out = set()
    for child in _children(e):
        out |= variables_used(child)
    return out


def _children(e: Expr):
    if isinstance(e, (Neg, Func)):
        return (e.arg,)
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, (Add, Sub, Mul, Div)):
        return (e.left, e.right)
    return ()


# ---------------------------------------------------------------- evaluation


def eval_point(e: Expr, x):
    """Evaluate at a point (or a batch: ``x[i]`` may be an array)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        out = _ev(e, x)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _ev(e, x):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return x[e.index]
    if isinstance(e, Neg):
        return -_ev(e.arg, x)
    if isinstance(e, Add):
        return _ev(e.left, x) + _ev(e.right, x)
    if isinstance(e, Sub):
        return _ev(e.left, x) - _ev(e.right, x)
    if isinstance(e, Mul):
        return _ev(e.left, x) * _ev(e.right, x)
    if isinstance(e, Div):
        d = _ev(e.right, x)
        if np.any(np.asarray(d) == 0):
            raise DomainError("division by zero")
        return _ev(e.left, x) / d
    if isinstance(e, Pow):
        b = _ev(e.base, x)
        p = e.exponent
        if isinstance(p, Fraction):
            if p < 0 and np.any(np.asarray(b) == 0):
                raise DomainError("zero to a negative power")
            r = iv.real_root_pow(np.abs(b) if p.numerator % 2 == 0 else b, abs(p.numerator), p.denominator)
            return 1.0 / r if p < 0 else r
        if p < 0 and np.any(np.asarray(b) == 0):
            raise DomainError("zero to a negative power")
        return np.power(np.asarray(b, dtype=float), p)
    if isinstance(e, Func):
        name = e.name
        if name == "cbrt" and isinstance(e.arg, Pow) and e.arg.exponent == 2:
            b = np.asarray(_ev(e.arg.base, x), dtype=float)
            return np.cbrt(b * b)
        a = np.asarray(_ev(e.arg, x), dtype=float)
        if name == "sqrt":
            if np.any(a < 0):
                raise DomainError("sqrt of a negative number")
            return np.sqrt(a)
        return {"sin": np.sin, "cos": np.cos, "exp": np.exp, "cbrt": np.cbrt}[name](a)
    raise TypeError(e)


def eval_interval(e: Expr, lo, hi):
    """Sound enclosure of ``e`` over the box ``[lo, hi]``.

    ``lo[i]``/``hi[i]`` bound variable ``i`` and may be arrays (one entry per
    box in a batch). Returns ``(lo, hi)`` arrays.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        rlo, rhi = _ei(e, lo, hi)
    rlo = np.broadcast_to(np.asarray(rlo, dtype=float), lo.shape[1:])
    rhi = np.broadcast_to(np.asarray(rhi, dtype=float), lo.shape[1:])
    return rlo, rhi


def _ei(e, lo, hi):
    if isinstance(e, Const):
        return np.asarray(e.value), np.asarray(e.value)
    if isinstance(e, Var):
        return lo[e.index], hi[e.index]
    if isinstance(e, Neg):
        return iv.neg(_ei(e.arg, lo, hi))
    if isinstance(e, Add):
        return iv.add(_ei(e.left, lo, hi), _ei(e.right, lo, hi))
    if isinstance(e, Sub):
        return iv.sub(_ei(e.left, lo, hi), _ei(e.right, lo, hi))
    if isinstance(e, Mul):
        if e.left == e.right:
            return iv.ipow(_ei(e.left, lo, hi), 2)
        if isinstance(e.left, Const):
            return iv.scale(_ei(e.right, lo, hi), e.left.value)
        if isinstance(e.right, Const):
            return iv.scale(_ei(e.left, lo, hi), e.right.value)
        return iv.mul(_ei(e.left, lo, hi), _ei(e.right, lo, hi))
    if isinstance(e, Div):
        return iv.div(_ei(e.left, lo, hi), _ei(e.right, lo, hi))
    if isinstance(e, Pow):
        base = _ei(e.base, lo, hi)
        if isinstance(e.exponent, Fraction):
            return iv.rpow(base, e.exponent)
        return iv.ipow(base, e.exponent)
    if isinstance(e, Func):
        if e.name == "cbrt" and isinstance(e.arg, Pow) and e.arg.exponent == 2:
            return iv.cbrt_sq(_ei(e.arg.base, lo, hi))
        a = _ei(e.arg, lo, hi)
        return getattr(iv, e.name)(a)
    raise TypeError(e)


# ---------------------------------------------------------------- derivatives


def _is(e, v):
    return isinstance(e, Const) and e.value == v


def _add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Add(a, b)


def _sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    return Sub(a, b)


def _neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    return Neg(a)


def _mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return Const(0.0)
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def diff(e: Expr, i: int) -> Expr:
    """Symbolic partial derivative with respect to variable ``i``.

    Derivatives of sqrt and cbrt are unbounded at 0; evaluating them there
    raises DomainError, which callers treat as "no derivative information".
    """
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.index == i else 0.0)
    if isinstance(e, Neg):
        return _neg(diff(e.arg, i))
    if isinstance(e, Add):
        return _add(diff(e.left, i), diff(e.right, i))
    if isinstance(e, Sub):
        return _sub(diff(e.left, i), diff(e.right, i))
    if isinstance(e, Mul):
        return _add(_mul(diff(e.left, i), e.right), _mul(e.left, diff(e.right, i)))
    if isinstance(e, Div):
        du, dv = diff(e.left, i), diff(e.right, i)
        num = _sub(_mul(du, e.right), _mul(e.left, dv))
        if _is(num, 0.0):
            return Const(0.0)
        return Div(num, Pow(e.right, 2))
    if isinstance(e, Pow):
        du = diff(e.base, i)
        if _is(du, 0.0):
            return Const(0.0)
        p = e.exponent
        if p == 1:
            return du
        lower = e.base if p == 2 else Pow(e.base, p - 1)
        return _mul(_mul(Const(float(p)), lower), du)
    if isinstance(e, Func):
        if e.name == "cbrt" and isinstance(e.arg, Pow) and e.arg.exponent == 2:
            # d/du cbrt(u^2) = (2/3) u^(-1/3)
            return diff(Pow(e.arg.base, Fraction(2, 3)), i)
        du = diff(e.arg, i)
        if _is(du, 0.0):
            return Const(0.0)
        u = e.arg
        if e.name == "sin":
            outer = Func("cos", u)
        elif e.name == "cos":
            outer = Neg(Func("sin", u))
        elif e.name == "exp":
            outer = e
        elif e.name == "sqrt":
            outer = Div(Const(0.5), e)
        else:  # cbrt
            outer = Div(Const(1.0 / 3.0), Pow(e, 2))
        return _mul(outer, du)
    raise TypeError(e)


def check_dims(e: Expr, n: int) -> None:
    bad = [i for i in variables_used(e) if i >= n]
    if bad:
        raise UnknownVariable(f"variable index {bad[0]} out of range for dimension {n}")


def count_nodes(e: Expr) -> int:
    return 1 + sum(count_nodes(c) for c in _children(e))


def is_finite_value(v) -> bool:
    return bool(np.all(np.isfinite(v))) if not isinstance(v, float) else math.isfinite(v)
