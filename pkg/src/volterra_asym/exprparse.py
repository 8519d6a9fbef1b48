"""Recursive-descent parser for kernel expressions.

Grammar::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | power
    power   := primary ("^" unary)?          # right associative
    primary := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Names: variables ``t`` and ``s``, constants ``pi`` and ``e``; functions
``exp``, ``sin``, ``cos`` (one argument) and ``pow`` (two).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = ["ParseError", "Expression", "parse_expression"]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)
_FUNCS = {"exp": (1, np.exp), "sin": (1, np.sin), "cos": (1, np.cos), "pow": (2, np.power)}
_CONSTS = {"pi": math.pi, "e": math.e}
VARIABLES = ("t", "s")


class ParseError(ValueError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


def _tokenize(text: str):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected token {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("+", "-"):
            self.take()
            operand = self.unary()
            return operand if tok[1] == "+" else ("neg", operand)
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            return ("^", base, self.unary())
        return base

    def primary(self):
        kind, val, pos = self.take()
        if kind == "num":
            return ("num", float(val))
        if kind == "name":
            if self.peek()[1] == "(":
                if val not in _FUNCS:
                    raise ParseError(f"unknown function {val!r}", pos)
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                if len(args) != _FUNCS[val][0]:
                    raise ParseError(f"{val} takes {_FUNCS[val][0]} argument(s)", pos)
                return ("call", val, tuple(args))
            if val in VARIABLES:
                return ("var", val)
            if val in _CONSTS:
                return ("num", _CONSTS[val])
            raise ParseError(f"unknown name {val!r}", pos)
        if val == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ParseError(f"unexpected token {val or 'end of input'!r}", pos)


def _eval(node, env):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "var":
        if node[1] not in env:
            raise ValueError(f"variable {node[1]!r} not bound")
        return env[node[1]]
    if tag == "neg":
        return -_eval(node[1], env)
    if tag == "call":
        return _FUNCS[node[1]][1](*(_eval(a, env) for a in node[2]))
    a, b = _eval(node[1], env), _eval(node[2], env)
    if tag == "+":
        return a + b
    if tag == "-":
        return a - b
    if tag == "*":
        return a * b
    if tag == "/":
        return a / b
    return np.power(a, b)


def _free(node, acc):
    if node[0] == "var":
        acc.add(node[1])
    elif node[0] == "neg":
        _free(node[1], acc)
    elif node[0] == "call":
        for a in node[2]:
            _free(a, acc)
    elif node[0] in "+-*/^":
        _free(node[1], acc)
        _free(node[2], acc)
    return acc


@dataclass(frozen=True)
class Expression:
    text: str
    tree: tuple

    @property
    def variables(self) -> frozenset:
        return frozenset(_free(self.tree, set()))

    def evaluate(self, **env):
        arrays = {k: np.asarray(v, dtype=float) for k, v in env.items()}
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = _eval(self.tree, arrays)
        shape = np.broadcast_shapes(*(a.shape for a in arrays.values())) if arrays else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    def __call__(self, t, s=None):
        return self.evaluate(t=t) if s is None else self.evaluate(t=t, s=s)


def parse_expression(text: str) -> Expression:
    """Parse ``text`` into an :class:`Expression` evaluable on numpy arrays.

    >>> parse_expression("2*t^2 - exp(-s)").evaluate(t=3.0, s=0.0)
    array(17.)
    """
    return Expression(text, _Parser(text).parse())
