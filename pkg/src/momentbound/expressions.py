"""Restricted arithmetic expressions for generalized constraints.

Problem files state constraint functions as strings over the single variable
``x`` with + - * / ^, parentheses, numeric literals, and the functions exp,
log, sqrt, abs.  A small precedence-climbing parser compiles them straight
to numpy-vectorized closures; no host-language evaluation is involved, so a
problem file stays data.  ^ is exponentiation and binds right to left.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

_FUNCTIONS = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

_BIN_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


class ExpressionError(ValueError):
    """Parse failure, annotated with the character position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (position {pos})")
        self.pos = pos


def _tokenize(src: str):
    tokens = []
    i, n = 0, len(src)
    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^()":
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            while j < n and (src[j].isdigit() or src[j] in ".eE"
                             or (src[j] in "+-" and src[j - 1] in "eE")):
                j += 1
            try:
                val = float(src[i:j])
            except ValueError:
                raise ExpressionError(f"bad number {src[i:j]!r}", i) from None
            tokens.append(("num", val, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            tokens.append(("name", src[i:j], i))
            i = j
            continue
        raise ExpressionError(f"unexpected character {ch!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    """``indexed`` switches the variable set from {x} to {x1, x2, ...}."""

    def __init__(self, tokens, indexed: bool = False):
        self.tokens = tokens
        self.k = 0
        self.indexed = indexed
        self.max_index = 0

    def peek(self):
        return self.tokens[self.k]

    def next(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect_op(self, op: str):
        kind, val, pos = self.next()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r}", pos)

    def parse(self, min_prec: int = 1):
        node = self.parse_unary()
        while True:
            kind, val, _ = self.peek()
            if kind != "op" or val not in _BIN_PREC:
                return node
            prec = _BIN_PREC[val]
            if prec < min_prec:
                return node
            self.next()
            # ^ is right-associative, the rest left
            rhs = self.parse(prec if val == "^" else prec + 1)
            node = ("bin", val, node, rhs)

    def parse_unary(self):
        kind, val, pos = self.peek()
        if kind == "op" and val in "+-":
            self.next()
            # bind looser than ^ so -x^2 means -(x^2)
            operand = self.parse(_BIN_PREC["^"])
            return operand if val == "+" else ("neg", operand)
        return self.parse_atom()

    def parse_atom(self):
        kind, val, pos = self.next()
        if kind == "num":
            return ("num", val)
        if kind == "op" and val == "(":
            node = self.parse()
            self.expect_op(")")
            return node
        if kind == "name":
            if val in _FUNCTIONS:
                self.expect_op("(")
                arg = self.parse()
                self.expect_op(")")
                return ("call", val, arg)
            if not self.indexed and val == "x":
                return ("var",)
            if self.indexed and val.startswith("x") and val[1:].isdigit():
                idx = int(val[1:])
                if idx < 1:
                    raise ExpressionError("input indices are 1-based", pos)
                self.max_index = max(self.max_index, idx)
                return ("varj", idx - 1)
            allowed = "'x1', 'x2', ..." if self.indexed else "'x'"
            raise ExpressionError(f"unknown name {val!r} (only {allowed} and "
                                  "exp/log/sqrt/abs are allowed)", pos)
        raise ExpressionError("expected a value", pos)


def _evaluate(node, x, X=None):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "var":
        return x
    if tag == "varj":
        return X[..., node[1]]
    if tag == "neg":
        return -_evaluate(node[1], x, X)
    if tag == "call":
        return _FUNCTIONS[node[1]](_evaluate(node[2], x, X))
    op, lhs, rhs = node[1], node[2], node[3]
    a = _evaluate(lhs, x, X)
    b = _evaluate(rhs, x, X)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    return np.power(a, b)


def compile_expression(src: str) -> Callable:
    """Compile a constraint expression to a numpy-vectorized function of x."""
    parser = _Parser(_tokenize(src))
    tree = parser.parse()
    kind, _, pos = parser.peek()
    if kind != "end":
        raise ExpressionError("trailing input after expression", pos)

    def fn(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _evaluate(tree, np.asarray(x, dtype=float))
        if np.ndim(out) == 0:
            return np.broadcast_to(np.asarray(out, dtype=float),
                                   np.shape(x)).copy()
        return out

    fn.source = src
    return fn


def compile_joint_expression(src: str, dims: int) -> Callable:
    """Compile an expression over x1..x<dims> to a function of input rows."""
    parser = _Parser(_tokenize(src), indexed=True)
    tree = parser.parse()
    kind, _, pos = parser.peek()
    if kind != "end":
        raise ExpressionError("trailing input after expression", pos)
    if parser.max_index > dims:
        raise ExpressionError(
            f"expression uses x{parser.max_index} but the problem has only "
            f"{dims} inputs", 0)

    def fn(X):
        X = np.asarray(X, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _evaluate(tree, None, X)
        if np.ndim(out) == 0:
            return np.full(X.shape[0], float(out))
        return out

    fn.source = src
    return fn
