"""Small arithmetic expression language for user-defined limit states.

Supports + - * / ** (or ^), unary minus, numeric literals, the variables
x1..xd, and the functions min, max, abs, sin, cos, sqrt, exp, log. Parsed
through the Python AST with a strict node whitelist and compiled to a
vectorized numpy evaluator, so CLI problem files stay declarative (no
dynamic code loading).
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np

__all__ = ["ExprError", "compile_limit_state"]

_FUNCS: dict[str, Callable] = {
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExprError(ValueError):
    """The expression is not part of the supported language."""


def compile_limit_state(expression: str, dim: int):
    """Compile an expression over x1..x<dim> into a vectorized (n, d) -> (n,) function."""
    source = expression.replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"cannot parse expression: {exc}") from None
    _validate(tree.body, dim)

    def limit_state(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != dim:
            raise ValueError(f"expected {dim} input columns, got {x.shape[1]}")
        out = _eval(tree.body, x)
        return np.broadcast_to(np.asarray(out, dtype=float), (x.shape[0],)).copy()

    limit_state.expression = expression
    return limit_state


def _validate(node: ast.AST, dim: int) -> None:
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExprError(f"literal {node.value!r} is not a number")
    elif isinstance(node, ast.Name):
        if not _var_index(node.id, dim):
            raise ExprError(f"unknown variable {node.id!r} (expected x1..x{dim})")
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExprError(f"operator {type(node.op).__name__} not supported")
        _validate(node.left, dim)
        _validate(node.right, dim)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExprError(f"unary operator {type(node.op).__name__} not supported")
        _validate(node.operand, dim)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in set(_FUNCS) | {"min", "max"}:
            raise ExprError("only min, max, abs, sin, cos, sqrt, exp, log calls are allowed")
        if node.keywords:
            raise ExprError("keyword arguments are not supported")
        if node.func.id in ("min", "max") and len(node.args) < 2:
            raise ExprError(f"{node.func.id} needs at least two arguments")
        if node.func.id in _FUNCS and len(node.args) != 1:
            raise ExprError(f"{node.func.id} takes exactly one argument")
        for arg in node.args:
            _validate(arg, dim)
    else:
        raise ExprError(f"syntax {type(node).__name__} not supported")


def _var_index(name: str, dim: int) -> int | None:
    if name.startswith("x") and name[1:].isdigit():
        i = int(name[1:])
        if 1 <= i <= dim:
            return i
    return None


def _eval(node: ast.AST, x: np.ndarray):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return x[:, int(node.id[1:]) - 1]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, x), _eval(node.right, x))
    if isinstance(node, ast.UnaryOp):
        val = _eval(node.operand, x)
        return -val if isinstance(node.op, ast.USub) else +val
    if isinstance(node, ast.Call):
        args = [_eval(a, x) for a in node.args]
        if node.func.id == "min":
            out = args[0]
            for a in args[1:]:
                out = np.minimum(out, a)
            return out
        if node.func.id == "max":
            out = args[0]
            for a in args[1:]:
                out = np.maximum(out, a)
            return out
        return _FUNCS[node.func.id](args[0])
    raise ExprError(f"syntax {type(node).__name__} not supported")  # pragma: no cover
