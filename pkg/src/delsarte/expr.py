"""Coefficient expression strings.

A deliberately small grammar: numbers, complex literals (``I`` or ``j``
suffix), ``+ - * / **``, parentheses, the coordinates ``t``, ``y``, ``x`` or
``x1 .. xm``, and the functions ``exp sin cos sech tanh cosh sinh sqrt``.
Parsing goes through :mod:`sympy` with a whitelisted namespace so that the
result can be differentiated symbolically.
"""

from __future__ import annotations

import re

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

__all__ = ["ExpressionError", "parse", "coordinate_symbols", "lambdify"]

FUNCTIONS = {
    "exp": sp.exp,
    "sin": sp.sin,
    "cos": sp.cos,
    "sech": sp.sech,
    "tanh": sp.tanh,
    "cosh": sp.cosh,
    "sinh": sp.sinh,
    "sqrt": sp.sqrt,
    "pi": sp.pi,
    "I": sp.I,
}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][-+]?\d+)?j?|\.\d+(?:[eE][-+]?\d+)?j?)|([A-Za-z_]\w*)|(\*\*|[-+*/()]))")


class ExpressionError(ValueError):
    """Expression string outside the supported grammar."""


def coordinate_symbols(m: int) -> dict[str, sp.Symbol]:
    names = ["t", "y"] + (["x"] if m == 1 else [f"x{i}" for i in range(1, m + 1)])
    syms = {n: sp.Symbol(n, real=True) for n in names}
    if m == 1:
        syms["x1"] = syms["x"]
    return syms


def _tokens(text: str):
    pos = 0
    out = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character at {pos} in {text!r}")
        out.append(m.group(m.lastindex))
        pos = m.end()
    return out


def parse(text: str | float | complex, m: int = 1) -> sp.Expr:
    """Parse ``text`` into a sympy expression over the coordinate symbols."""
    if isinstance(text, (int, float, complex)):
        return sp.nsimplify(text) if isinstance(text, int) else sp.sympify(text)
    syms = coordinate_symbols(m)
    pieces = []
    for tok in _tokens(str(text)):
        if tok[0].isdigit() or tok[0] == ".":
            if tok.endswith("j"):
                pieces.append(f"({tok[:-1]}*I)")
            else:
                pieces.append(tok)
        elif tok[0].isalpha() or tok[0] == "_":
            if tok not in FUNCTIONS and tok not in syms:
                raise ExpressionError(f"unknown name {tok!r} in {text!r}")
            pieces.append(tok)
        else:
            pieces.append(tok)
    local = dict(FUNCTIONS)
    local.update(syms)
    try:
        expr = parse_expr(" ".join(pieces), local_dict=local, global_dict={"Integer": sp.Integer,
                          "Float": sp.Float, "Rational": sp.Rational, "Symbol": sp.Symbol},
                          transformations=standard_transformations, evaluate=True)
    except Exception as exc:  # sympy raises a zoo of types here
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from None
    if not isinstance(expr, sp.Expr):
        raise ExpressionError(f"{text!r} is not an arithmetic expression")
    return expr


def lambdify(expr: sp.Expr, m: int):
    """Vectorised numpy evaluator ``f(coords: dict[str, ndarray]) -> ndarray``."""
    syms = coordinate_symbols(m)
    names = [n for n in syms if not (m == 1 and n == "x1")]
    args = [syms[n] for n in names]
    fn = sp.lambdify(args, expr, modules=["numpy"])
    free = {s.name for s in expr.free_symbols}

    def evaluate(coords):
        missing = free - set(coords)
        if missing:
            raise KeyError(f"expression needs coordinates {sorted(missing)}")
        vals = [coords.get(n, 0.0) for n in names]
        return np.asarray(fn(*vals), dtype=complex)

    evaluate.free = free
    return evaluate
