"""Coefficient expressions for experiment configs.

A small arithmetic language over the variables ``t`` and ``x`` (and ``u``
for lattice fields): numbers, ``+ - * /``, powers written ``**`` or ``^``,
parentheses and the functions

    abs, min, max, sqrt, exp, log, sin, cos, sign, indicator(a, b)

where ``indicator(a, b)`` is ``1`` on ``a <= x < b`` and ``indicator(v, a, b)``
tests an arbitrary expression ``v``. ``inf`` and ``pi`` are constants.
Parsing uses Python's own expression parser; only the node types above are
accepted, so evaluation cannot reach anything else.
"""
from __future__ import annotations

import ast
import math
import operator
from typing import Callable

import numpy as np

from .core.errors import DomainError

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_CONSTS = {"inf": math.inf, "pi": math.pi}


def _indicator(*args):
    if len(args) == 2:
        raise AssertionError("rewritten at compile time")
    v, a, b = args
    return ((v >= a) & (v < b)).astype(float)


_FUNCS = {
    "abs": (np.abs, 1),
    "sqrt": (np.sqrt, 1),
    "exp": (np.exp, 1),
    "log": (np.log, 1),
    "sin": (np.sin, 1),
    "cos": (np.cos, 1),
    "sign": (np.sign, 1),
    "min": (np.minimum, 2),
    "max": (np.maximum, 2),
    "indicator": (_indicator, 3),
}


class ExpressionError(DomainError):
    pass


class Expression:
    """Compiled expression; call with keyword arrays, e.g. ``e(t=0.0, x=xs)``."""

    def __init__(self, text: str, variables=("t", "x")):
        self.text = str(text)
        self.variables = tuple(variables)
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression {self.text!r}: {exc.msg}") from None
        self._fn = self._build(tree.body)
        self.uses = frozenset(n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and n.id in self.variables)

    def _build(self, node) -> Callable:
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda env: v
        if isinstance(node, ast.Name):
            if node.id in self.variables:
                name = node.id
                return lambda env: env[name]
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda env: v
            raise ExpressionError(f"unknown name {node.id!r} in {self.text!r}; allowed: {sorted(self.variables + tuple(_CONSTS))}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, a, b = _BINOPS[type(node.op)], self._build(node.left), self._build(node.right)
            return lambda env: op(a(env), b(env))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            op, a = _UNARY[type(node.op)], self._build(node.operand)
            return lambda env: op(a(env))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            name = node.func.id
            if name not in _FUNCS:
                raise ExpressionError(f"unknown function {name!r}; allowed: {sorted(_FUNCS)}")
            fn, arity = _FUNCS[name]
            args = [self._build(a) for a in node.args]
            if name == "indicator" and len(args) == 2:
                if "x" not in self.variables:
                    raise ExpressionError("indicator(a, b) needs the variable x")
                args = [lambda env: env["x"]] + args
            if len(args) != arity:
                raise ExpressionError(f"{name} takes {arity} arguments, got {len(node.args)}")
            return lambda env: fn(*(a(env) for a in args))
        raise ExpressionError(f"unsupported syntax {ast.dump(node)[:40]}... in {self.text!r}")

    def __call__(self, **values):
        missing = [v for v in self.variables if v not in values]
        if missing:
            raise ExpressionError(f"missing variables {missing}")
        env = {k: np.asarray(v, dtype=float) for k, v in values.items()}
        shape = np.broadcast_shapes(*(np.shape(env[v]) for v in self.variables))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.broadcast_to(np.asarray(self._fn(env), dtype=float), shape)
        return float(out) if out.ndim == 0 else np.array(out)

    def __repr__(self):
        return f"Expression({self.text!r})"


def compile_expr(text: str, variables=("t", "x")) -> Expression:
    return Expression(text, variables)


def tx_function(text: str) -> Callable:
    """``(t, x) -> array`` for a coefficient of an SDE."""
    e = Expression(text, ("t", "x"))
    return lambda t, x: e(t=t, x=x)


def txu_function(text: str) -> Callable:
    """``(t, x, u) -> array`` for a lattice-field coefficient."""
    e = Expression(text, ("t", "x", "u"))
    return lambda t, x, u: e(t=t, x=x, u=u)
