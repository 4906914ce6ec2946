"""Small expression grammar for coefficient fields in metric spec files.

Allowed: numbers, ``pi``, the variables ``x1``, ``x2``, ``r2`` (= x1^2 + x2^2)
and ``t`` (an angle), the operators ``+ - * / ^`` (``**`` also accepted),
parentheses and the functions ``sin cos exp sqrt``. Expressions are parsed
with :mod:`ast` against a whitelist and turned into sympy expressions, so
they can be differentiated and pulled back between charts exactly.
"""
from __future__ import annotations

import ast

import numpy as np
import sympy as sp

X1, X2, T = sp.symbols("x1 x2 t", real=True)

_NAMES = {"x1": X1, "x2": X2, "t": T, "r2": X1**2 + X2**2, "pi": sp.pi}
_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "sqrt": sp.sqrt}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


class ExpressionError(ValueError):
    pass


def _build(node):
    if isinstance(node, ast.Expression):
        return _build(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Rational(repr(node.value))
    if isinstance(node, ast.Name):
        if node.id not in _NAMES:
            raise ExpressionError(f"unknown name {node.id!r}")
        return _NAMES[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_build(node.left), _build(node.right))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _build(node.operand)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        if node.func.id not in _FUNCS:
            raise ExpressionError(f"unknown function {node.func.id!r}")
        if len(node.args) != 1:
            raise ExpressionError(f"{node.func.id} takes one argument")
        return _FUNCS[node.func.id](_build(node.args[0]))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def parse(text: str) -> sp.Expr:
    """Parse ``text`` into a sympy expression in ``x1, x2, t``."""
    src = str(text).strip().replace("^", "**")
    if not src:
        raise ExpressionError("empty expression")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    return _build(tree)


def to_numpy(expr: sp.Expr, args=(X1, X2)):
    """Vectorized numpy callable of ``expr``; constant results are broadcast."""
    fn = sp.lambdify(args, expr, modules="numpy")

    def call(*vals):
        out = fn(*vals)
        shape = np.broadcast_shapes(*(np.shape(v) for v in vals))
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    return call


def grad(expr: sp.Expr):
    return sp.diff(expr, X1), sp.diff(expr, X2)
