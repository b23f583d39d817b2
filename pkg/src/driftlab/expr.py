"""Closed-form field expressions.

Grammar (Python syntax subset)::

    expr   := number | x1 | x2 | x3 | s | pi | e
            | expr (+ - * / **) expr | -expr
            | f(expr)            f in sin cos exp abs sqrt log tanh
            | min(expr, expr, ...) | max(expr, expr, ...)
            | piecewise(pred, expr_true, expr_false)
    pred   := expr (< <= > >= == !=) expr | pred and pred | pred or pred | not pred

``s`` is the state variable of cost integrands G(x, s).
"""
from __future__ import annotations

import ast
import operator
from functools import cached_property, reduce

import numpy as np
import sympy as sp


class ExpressionError(ValueError):
    pass


_UNARY = {"sin": (np.sin, sp.sin), "cos": (np.cos, sp.cos), "exp": (np.exp, sp.exp),
          "abs": (np.abs, sp.Abs), "sqrt": (np.sqrt, sp.sqrt), "log": (np.log, sp.log),
          "tanh": (np.tanh, sp.tanh)}
_BINOP = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
          ast.Div: operator.truediv, ast.Pow: operator.pow}
_CMP = {ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt,
        ast.GtE: operator.ge, ast.Eq: operator.eq, ast.NotEq: operator.ne}
_CONST = {"pi": np.pi, "e": np.e}
SYMBOLS = sp.symbols("x1 x2 x3")
STATE = sp.Symbol("s")


class Expr:
    """Parsed expression; evaluates on point arrays and converts to sympy."""

    def __init__(self, source):
        self.source = str(source).strip()
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.source!r}: {exc.msg}") from None
        self._tree = tree.body
        self._check(self._tree)

    def __repr__(self):
        return f"Expr({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and other.source == self.source

    def __hash__(self):
        return hash(self.source)

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"bad constant {node.value!r} in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id not in ("x1", "x2", "x3", "s") and node.id not in _CONST:
                raise ExpressionError(f"unknown name {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOP:
                raise ExpressionError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd, ast.Not)):
                raise ExpressionError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Compare):
            if any(type(op) not in _CMP for op in node.ops):
                raise ExpressionError(f"comparison not allowed in {self.source!r}")
            for sub in [node.left, *node.comparators]:
                self._check(sub)
        elif isinstance(node, ast.BoolOp):
            for sub in node.values:
                self._check(sub)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise ExpressionError(f"bad call in {self.source!r}")
            name, nargs = node.func.id, len(node.args)
            if name in _UNARY and nargs == 1:
                pass
            elif name in ("min", "max") and nargs >= 1:
                pass
            elif name == "piecewise" and nargs == 3:
                pass
            else:
                raise ExpressionError(f"unknown function {name}/{nargs} in {self.source!r}")
            for sub in node.args:
                self._check(sub)
        else:
            raise ExpressionError(f"unsupported syntax {type(node).__name__} in {self.source!r}")

    @cached_property
    def names(self):
        return {n.id for n in ast.walk(self._tree) if isinstance(n, ast.Name)}

    def max_coordinate(self):
        idx = [int(n[1]) for n in self.names if n.startswith("x")]
        return max(idx, default=0)

    def __call__(self, x, s=None):
        """Evaluate at points ``x`` of shape (npts, dim); returns (npts,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.max_coordinate() > x.shape[1]:
            raise ExpressionError(f"{self.source!r} uses x{self.max_coordinate()} in dim {x.shape[1]}")
        env = {f"x{i + 1}": x[:, i] for i in range(x.shape[1])}
        if s is not None:
            env["s"] = np.asarray(s, dtype=float)
        elif "s" in self.names:
            raise ExpressionError(f"{self.source!r} needs the state variable s")
        out = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (x.shape[0],)).copy()

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return _CONST[node.id] if node.id in _CONST else env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOP[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, env)
            if isinstance(node.op, ast.Not):
                return np.logical_not(val)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.Compare):
            left, result = self._eval(node.left, env), True
            for op, comp in zip(node.ops, node.comparators):
                right = self._eval(comp, env)
                result = np.logical_and(result, _CMP[type(op)](left, right))
                left = right
            return result
        if isinstance(node, ast.BoolOp):
            vals = [self._eval(v, env) for v in node.values]
            fn = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
            return reduce(fn, vals)
        name = node.func.id
        args = [self._eval(a, env) for a in node.args]
        if name in _UNARY:
            return _UNARY[name][0](args[0])
        if name == "min":
            return reduce(np.minimum, args)
        if name == "max":
            return reduce(np.maximum, args)
        return np.where(args[0], args[1], args[2])

    def to_sympy(self):
        return self._sym(self._tree)

    def _sym(self, node):
        if isinstance(node, ast.Constant):
            return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "pi":
                return sp.pi
            if node.id == "e":
                return sp.E
            if node.id == "s":
                return STATE
            return SYMBOLS[int(node.id[1]) - 1]
        if isinstance(node, ast.BinOp):
            return _BINOP[type(node.op)](self._sym(node.left), self._sym(node.right))
        if isinstance(node, ast.UnaryOp):
            val = self._sym(node.operand)
            if isinstance(node.op, ast.Not):
                return sp.Not(val)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.Compare):
            sym_cmp = {ast.Lt: sp.Lt, ast.LtE: sp.Le, ast.Gt: sp.Gt, ast.GtE: sp.Ge,
                       ast.Eq: sp.Eq, ast.NotEq: sp.Ne}
            terms, left = [], self._sym(node.left)
            for op, comp in zip(node.ops, node.comparators):
                right = self._sym(comp)
                terms.append(sym_cmp[type(op)](left, right))
                left = right
            return sp.And(*terms)
        if isinstance(node, ast.BoolOp):
            vals = [self._sym(v) for v in node.values]
            return sp.And(*vals) if isinstance(node.op, ast.And) else sp.Or(*vals)
        name = node.func.id
        args = [self._sym(a) for a in node.args]
        if name in _UNARY:
            return _UNARY[name][1](args[0])
        if name == "min":
            return sp.Min(*args)
        if name == "max":
            return sp.Max(*args)
        return sp.Piecewise((args[1], args[0]), (args[2], True))


def from_sympy(expr, dim):
    """Numpy-callable (npts, dim) -> (npts,) for a sympy expression in x1..x3."""
    syms = SYMBOLS[:dim]
    fn = sp.lambdify(syms, expr, modules="numpy")

    def evaluate(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.asarray(fn(*x.T), dtype=float), (x.shape[0],)).copy()

    return evaluate
