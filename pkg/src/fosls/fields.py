"""Scalar data fields with known polynomial degree, and a small expression grammar.

Expressions use ``+ - * / **``, numbers, ``pi``, ``sin``, ``cos``, ``exp`` and
the variables ``x, y`` (spatial problems) or ``t, x`` (space-time problems,
where ``t`` is the first coordinate).
"""
from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy as sp

_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


@dataclass(frozen=True)
class Field:
    """Vectorized scalar field ``x (n, 2) -> (n,)``; ``degree=None`` means not polynomial."""

    func: Callable
    degree: int | None = 0
    text: str = ""

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(np.asarray(self.func(x), dtype=float), (len(x),)).copy()

    @property
    def is_zero(self) -> bool:
        return self.text == "0"


def constant(value: float) -> Field:
    value = float(value)
    return Field(lambda x: np.full(len(x), value), 0, "0" if value == 0 else repr(value))


ZERO = constant(0.0)


def as_field(value) -> Field:
    """Coerce a number, Field or plain callable (assumed non-polynomial)."""
    if isinstance(value, Field):
        return value
    if value is None:
        return ZERO
    if callable(value):
        return Field(value, None, getattr(value, "__name__", "callable"))
    return constant(value)


def _check(node, names):
    if isinstance(node, ast.Expression):
        return _check(node.body, names)
    if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check(node.left, names)
        _check(node.right, names)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        _check(node.operand, names)
    elif isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS) or node.keywords or len(node.args) != 1:
            raise ValueError("only sin(.), cos(.) and exp(.) calls are allowed")
        _check(node.args[0], names)
    elif isinstance(node, ast.Name):
        if node.id not in names and node.id != "pi":
            raise ValueError(f"unknown name {node.id!r} (allowed: {', '.join(names)}, pi)")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ValueError(f"unsupported constant {node.value!r}")
    else:
        raise ValueError(f"unsupported syntax: {type(node).__name__}")


def parse_expression(text, spacetime: bool = False) -> sp.Expr:
    """Parse an expression string into a sympy expression in the coordinate symbols."""
    names = ("t", "x") if spacetime else ("x", "y")
    text = str(text)
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as err:
        raise ValueError(f"cannot parse expression {text!r}: {err.msg}") from err
    _check(tree, names)
    local = {n: sp.Symbol(n, real=True) for n in names}
    local.update(_FUNCS)
    local["pi"] = sp.pi
    return sp.sympify(text.replace("^", "**"), locals=local)


def sympy_field(expr, symbols, text: str = "") -> Field:
    """Field from a sympy expression in ``symbols = (s0, s1)`` (first and second coordinate)."""
    expr = sp.sympify(expr)
    degree = None
    if expr.is_polynomial(*symbols):
        degree = int(sp.Poly(expr, *symbols).total_degree()) if expr != 0 else 0
    f = sp.lambdify(symbols, expr, "numpy")
    return Field(lambda x: f(x[:, 0], x[:, 1]), degree, text or str(expr))


def expression_field(text, spacetime: bool = False) -> Field:
    expr = parse_expression(text, spacetime)
    names = ("t", "x") if spacetime else ("x", "y")
    syms = tuple(sp.Symbol(n, real=True) for n in names)
    return sympy_field(expr, syms, "0" if expr == 0 else str(text))
