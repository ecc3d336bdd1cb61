"""Tiny arithmetic expression language for device curves.

Grammar (``^`` binds tighter than unary minus and is right-associative)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 'x' | '(' expr ')'

``**`` is accepted as a synonym for ``^``.  The compiled function is
vectorized over numpy arrays.
"""

import re

import numpy as np

from .errors import FormatError

__all__ = ["compile_curve"]

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|(\*\*|[-+*/^()x]))")

_UNICODE = {"−": "-", "×": "*", "·": "*", "÷": "/"}


def _tokenize(text):
    for a, b in _UNICODE.items():
        text = text.replace(a, b)
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise FormatError(f"unexpected character {text[pos:].lstrip()[:1]!r} at offset {pos}", field="curve")
        num, op = m.groups()
        out.append(("num", float(num)) if num is not None else ("op", "^" if op == "**" else op))
        pos = m.end()
    out.append(("end", None))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, op=None):
        tok = self.toks[self.i]
        if op is not None and tok != ("op", op):
            raise FormatError(f"expected {op!r}", field="curve")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise FormatError(f"unexpected token {self.peek()[1]!r}", field="curve")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            inner = self.unary()
            return inner if op == "+" else ("neg", inner)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return ("num", val)
        if (kind, val) == ("op", "x"):
            return ("x",)
        if (kind, val) == ("op", "("):
            node = self.expr()
            self.take(")")
            return node
        raise FormatError("expected a number, 'x' or '('", field="curve")


_BINARY = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
}


def _evaluate(node, x):
    tag = node[0]
    if tag == "num":
        return np.full_like(x, node[1])
    if tag == "x":
        return x
    if tag == "neg":
        return -_evaluate(node[1], x)
    return _BINARY[tag](_evaluate(node[1], x), _evaluate(node[2], x))


def compile_curve(text):
    """Compile an expression in ``x`` into a vectorized function.

    >>> f = compile_curve("x-0.2*x^2")
    >>> float(f(1.0))
    0.8
    """
    tree = _Parser(text).parse()

    def f(x):
        arr = np.asarray(x, dtype=float)
        out = _evaluate(tree, np.atleast_1d(arr))
        return out.reshape(arr.shape) if arr.ndim else float(out[0])

    f.expression = text
    return f
