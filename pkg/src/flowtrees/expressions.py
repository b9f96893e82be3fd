"""Minimal arithmetic expression grammar for smooth sheet definitions.

Grammar (case-sensitive, whitespace insensitive)::

    expr    := term  (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := NUMBER | CONST | VAR | FUNC '(' expr ')' | '(' expr ')'
    FUNC    := 'sin' | 'cos' | 'sqrt'
    CONST   := 'pi' | 'e'
    VAR     := 'x1' .. 'x<dim>'

Expressions are parsed into sympy, which supplies exact differentiation;
compiled evaluators use plain ``math`` callables for scalar speed.
"""

from __future__ import annotations

import math
import re

import sympy as sp

__all__ = ["ExpressionError", "parse_expression", "compile_scalar_field"]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_FUNCS = {"sin": sp.sin, "cos": sp.cos, "sqrt": sp.sqrt}
_CONSTS = {"pi": sp.pi, "e": sp.E}


class ExpressionError(ValueError):
    """Raised when a sheet expression does not conform to the grammar."""


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character at position {pos}: {text[pos:]!r}")
        if m.group("num") is not None:
            tokens.append(("num", m.group("num")))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name")))
        else:
            tokens.append(("op", m.group("op")))
        pos = m.end()
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.vars = [sp.Symbol(f"x{i + 1}") for i in range(dim)]

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r}, got {val!r}")

    def parse(self) -> sp.Expr:
        e = self.expr()
        if self.peek()[0] != "end":
            raise ExpressionError(f"trailing input: {self.peek()[1]!r}")
        return e

    def expr(self) -> sp.Expr:
        e = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.take()
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> sp.Expr:
        e = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.take()
            rhs = self.unary()
            e = e * rhs if op == "*" else e / rhs
        return e

    def unary(self) -> sp.Expr:
        if self.peek() == ("op", "-"):
            self.take()
            return -self.unary()
        return self.power()

    def power(self) -> sp.Expr:
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return base ** self.unary()
        return base

    def atom(self) -> sp.Expr:
        kind, val = self.take()
        if kind == "num":
            return sp.Float(val) if ("." in val or "e" in val or "E" in val) else sp.Integer(int(val))
        if kind == "name":
            if val in _FUNCS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return _FUNCS[val](arg)
            if val in _CONSTS:
                return _CONSTS[val]
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= len(self.vars):
                    raise ExpressionError(f"variable {val} out of range for dim {len(self.vars)}")
                return self.vars[idx - 1]
            raise ExpressionError(f"unknown identifier {val!r}")
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ExpressionError(f"unexpected token {val!r}")


def parse_expression(text: str, dim: int) -> sp.Expr:
    """Parse ``text`` over variables x1..x<dim> into a sympy expression."""
    return _Parser(text, dim).parse()


def compile_scalar_field(expr: sp.Expr, dim: int):
    """Compile value, gradient and Hessian callables from a sympy expression.

    Returns ``(value, grad, hess)`` where each callable takes a point
    sequence of length ``dim``. Scalars go through the ``math`` module so
    per-call overhead stays small inside integrator loops.
    """
    xs = [sp.Symbol(f"x{i + 1}") for i in range(dim)]
    grads = [sp.diff(expr, x) for x in xs]
    hesss = [[sp.diff(g, x) for x in xs] for g in grads]

    f_val = sp.lambdify(xs, expr, modules=["math"])
    f_grad = [sp.lambdify(xs, g, modules=["math"]) for g in grads]
    f_hess = [[sp.lambdify(xs, h, modules=["math"]) for h in row] for row in hesss]

    def value(x):
        return float(f_val(*x))

    def grad(x):
        return [float(g(*x)) for g in f_grad]

    def hess(x):
        return [[float(h(*x)) for h in row] for row in f_hess]

    return value, grad, hess


def check_differentiable(expr: sp.Expr) -> None:
    """Reject expressions whose exact derivatives sympy cannot produce."""
    xs = sorted(expr.free_symbols, key=lambda s: s.name)
    for x in xs:
        d = sp.diff(expr, x)
        if d.has(sp.Derivative):
            raise ExpressionError(f"expression not differentiable in {x}")
    _ = math  # keep module import alive for lambdify closures
