"""Closed-form expression grammar for landscape and curvature fields.

Reproducibility demands that the physical inputs (the prescribed function f
and the synthetic background curvature R0) come from a small, documented
grammar rather than arbitrary code.  EBNF:

    expr    = term , { ("+" | "-") , term } ;
    term    = factor , { "*" , factor } ;
    factor  = number | function | coordinate , [ "^" , integer ] ;
    function = name , "(" , [ number , { "," , number } ] , ")" ;
    name    = "cosx" | "sinx" | "cosy" | "siny" | "gauss" ;
    coordinate = "x" | "y" | "s" ;

with  cosx(k) = cos(2 pi k x)  (and the three siblings, integer frequency k)
and  gauss(cx, cy, cs, w) = exp(-rho^4 / w^4), rho the periodized gauge of
the chart centered at the grid node nearest (cx, cy, cs).

The x-gluing of the model identifies (x, y, s) with (x+1, y, s+y), so not
every combination of primitives descends smoothly to the quotient: x/y waves
and chart Gaussians do, bare `s` powers do not.  `bind` therefore samples the
three identifications and rejects expressions that fail to match across them.
"""

from __future__ import annotations

import math
import re
from typing import Callable

import numpy as np

from .manifold import ManifoldModel, normal_coordinates

_TOKEN = re.compile(
    r"\s*(?:(?P<num>[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*^(),]))"
)


class ExpressionError(ValueError):
    """Malformed or gluing-incompatible expression."""


def _tokenize(text: str):
    pos, out = 0, []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExpressionError(f"cannot tokenize {text[pos:]!r}")
        pos = m.end()
        if m.group("num") is not None:
            out.append(("num", float(m.group("num"))))
        elif m.group("name") is not None:
            out.append(("name", m.group("name")))
        else:
            out.append(("op", m.group("op")))
    out.append(("end", None))
    return out


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, op):
        kind, val = self.next()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r}, found {val!r}")

    def parse(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.next()
            rhs = self.term()
            node = ("add" if op == "+" else "sub", node, rhs)
        if self.peek()[0] != "end":
            raise ExpressionError(f"trailing input near {self.peek()[1]!r}")
        return node

    def term(self):
        node = self.factor()
        while self.peek() == ("op", "*"):
            self.next()
            node = ("mul", node, self.factor())
        return node

    def factor(self):
        kind, val = self.next()
        if kind == "op" and val == "-":
            return ("neg", self.factor())
        if kind == "num":
            return ("const", val)
        if kind == "name":
            if val in ("x", "y", "s"):
                power = 1
                if self.peek() == ("op", "^"):
                    self.next()
                    pk, pv = self.next()
                    if pk != "num" or pv != int(pv):
                        raise ExpressionError("power must be a literal integer")
                    power = int(pv)
                return ("coord", val, power)
            args = []
            self.expect("(")
            if self.peek() != ("op", ")"):
                while True:
                    sign = 1.0
                    if self.peek() == ("op", "-"):
                        self.next()
                        sign = -1.0
                    ak, av = self.next()
                    if ak != "num":
                        raise ExpressionError("function arguments must be numbers")
                    args.append(sign * av)
                    if self.peek() == ("op", ","):
                        self.next()
                        continue
                    break
            self.expect(")")
            return ("call", val, args)
        raise ExpressionError(f"unexpected token {val!r}")


_WAVES = {
    "cosx": (np.cos, 0),
    "sinx": (np.sin, 0),
    "cosy": (np.cos, 1),
    "siny": (np.sin, 1),
}


def _evaluate(node, model: ManifoldModel) -> np.ndarray:
    kind = node[0]
    if kind == "const":
        return np.full(model.shape, node[1])
    if kind == "neg":
        return -_evaluate(node[1], model)
    if kind in ("add", "sub", "mul"):
        a = _evaluate(node[1], model)
        b = _evaluate(node[2], model)
        return a + b if kind == "add" else (a - b if kind == "sub" else a * b)
    if kind == "coord":
        coord = {"x": model.x, "y": model.y, "s": model.s}[node[1]]
        return np.broadcast_to(coord, model.shape).copy() ** node[2]
    if kind == "call":
        name, args = node[1], node[2]
        if name in _WAVES:
            if len(args) != 1 or args[0] != int(args[0]):
                raise ExpressionError(f"{name} takes one integer frequency")
            fn, axis = _WAVES[name]
            coord = model.x if axis == 0 else model.y
            return np.broadcast_to(fn(2.0 * math.pi * args[0] * coord), model.shape).copy()
        if name == "gauss":
            if len(args) != 4:
                raise ExpressionError("gauss takes (cx, cy, cs, w)")
            cx, cy, cs, w = args
            if w <= 0:
                raise ExpressionError("gauss width must be positive")
            node_idx = (
                int(round((cx + 0.5) / model.hx)) % model.nx,
                int(round(cy / model.hy)) % model.ny,
                int(round(cs / model.hs)) % model.ns,
            )
            chart = model.local_chart(node_idx)
            return np.exp(-(chart.rho**4) / w**4)
        raise ExpressionError(f"unknown function {name!r}")
    raise ExpressionError(f"bad node {node!r}")


def _continuous(node, x, y, s, model: ManifoldModel):
    """Evaluate the tree at arbitrary (continuous) points, for the gluing check."""
    kind = node[0]
    if kind == "const":
        return np.full_like(np.asarray(x, dtype=float), node[1])
    if kind == "neg":
        return -_continuous(node[1], x, y, s, model)
    if kind in ("add", "sub", "mul"):
        a = _continuous(node[1], x, y, s, model)
        b = _continuous(node[2], x, y, s, model)
        return a + b if kind == "add" else (a - b if kind == "sub" else a * b)
    if kind == "coord":
        return {"x": x, "y": y, "s": s}[node[1]] ** node[2]
    if kind == "call":
        name, args = node[1], node[2]
        if name in _WAVES:
            fn, axis = _WAVES[name]
            return fn(2.0 * math.pi * args[0] * (x if axis == 0 else y))
        if name == "gauss":
            cx, cy, cs, w = args
            node_idx = (
                round((cx + 0.5) / model.hx) % model.nx,
                round(cy / model.hy) % model.ny,
                round(cs / model.hs) % model.ns,
            )
            center = model.node_point(node_idx)
            rho = normal_coordinates(center, x, y, s)[3]
            return np.exp(-(rho**4) / w**4)
    raise ExpressionError(f"bad node {node!r}")


def _check_gluing(expr_text: str, tree, model: ManifoldModel):
    """Reject expressions that are not invariant under the deck identifications.

    Samples random points p and compares the value at p with the values at
    the three generators (x+1, y, s+y), (x, y+1, s), (x, y, s+1); a field on
    the quotient must agree across all of them.
    """
    rng = np.random.default_rng(7)
    x, y, s = rng.uniform(0.05, 0.95, size=(3, 24))
    base = _continuous(tree, x, y, s, model)
    images = (
        _continuous(tree, x + 1.0, y, s + y, model),
        _continuous(tree, x, y + 1.0, s, model),
        _continuous(tree, x, y, s + 1.0, model),
    )
    scale = max(1.0, float(np.max(np.abs(base))))
    for name, img in zip(("x-twist", "y-period", "s-period"), images):
        if np.max(np.abs(img - base)) > 1e-9 * scale:
            raise ExpressionError(
                f"expression {expr_text!r} is not invariant under the {name} gluing"
            )


def bind(expr_text: str, model: ManifoldModel) -> np.ndarray:
    """Parse and evaluate an expression on the model grid, with gluing checks."""
    tree = _Parser(_tokenize(expr_text)).parse()
    field = _evaluate(tree, model)
    if not np.all(np.isfinite(field)):
        raise ExpressionError(f"expression {expr_text!r} produced non-finite values")
    _check_gluing(expr_text, tree, model)
    return field


def make_builder(expr_text: str) -> Callable[[ManifoldModel], np.ndarray]:
    """Validate syntax now, evaluate later on a concrete model."""
    _Parser(_tokenize(expr_text)).parse()
    return lambda model: bind(expr_text, model)
