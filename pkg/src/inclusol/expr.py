"""Tiny expression language for envelope and forcing functions in scenario files.

Grammar: numbers, the variables ``t``, ``s`` (and ``r`` for mu), ``+ - * /``,
unary minus, ``**`` and the functions ``exp``, ``sin``, ``cos``, ``abs``.
Expressions compile to numpy-broadcasting callables.
"""
from __future__ import annotations

import ast
import operator

import numpy as np

__all__ = ["compile_expr", "ExpressionError"]


class ExpressionError(ValueError):
    pass


_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_FUNCS = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "abs": np.abs}


def _check(node, variables):
    if isinstance(node, ast.Expression):
        return _check(node.body, variables)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return
    if isinstance(node, ast.Name):
        if node.id not in variables:
            raise ExpressionError(f"unknown variable {node.id!r} (allowed: {', '.join(variables)})")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, variables)
        _check(node.right, variables)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        _check(node.operand, variables)
        return
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument")
        _check(node.args[0], variables)
        return
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    return _FUNCS[node.func.id](_eval(node.args[0], env))


def compile_expr(text, variables=("t",)):
    """Compile ``text`` into f(*variables) broadcasting over numpy arrays.

    Numeric input (int/float) gives a constant function carrying a
    ``constant`` attribute, which integrators use as a fast path."""
    variables = tuple(variables)
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        value = float(text)
        text = repr(value)
    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc.msg}") from None
    _check(tree, variables)
    body = tree.body

    def f(*args):
        if len(args) != len(variables):
            raise TypeError(f"expression expects {len(variables)} arguments")
        arrays = [np.asarray(a, dtype=float) for a in args]
        out = _eval(body, dict(zip(variables, arrays)))
        shape = np.broadcast(*arrays).shape if arrays else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)

    f.source = str(text)
    if not any(isinstance(n, ast.Name) for n in ast.walk(body)):
        f.constant = float(_eval(body, {}))
    return f
