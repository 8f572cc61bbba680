"""A small expression language for right-hand sides, weight maps and bounds.

Grammar (EBNF, whitespace ignored)::

    expr    = term , { ( "+" | "-" ) , term } ;
    term    = unary , { ( "*" | "/" ) , unary } ;
    unary   = "-" , unary | power ;
    power   = primary , [ "^" , unary ] ;
    primary = number | name | name , "(" , expr , { "," , expr } , ")" | "(" , expr , ")" ;
    number  = digits , [ "." , [ digits ] ] , [ exponent ] | "." , digits , [ exponent ] ;
    exponent = ( "e" | "E" ) , [ "+" | "-" ] , digits ;

``^`` is right associative and binds tighter than unary minus, so
``-2^2 = -4`` and ``2^3^2 = 512``. Names are ``t``, ``y``, ``pi``, ``e`` and
the functions ``sin cos sqrt exp ln abs erf`` (one argument) and ``pow``
(two arguments). Error offsets are byte offsets into the UTF-8 source.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.special as sc

from .errors import EvaluationError, PsiHilferError

VARIABLES = ("t", "y")
CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = {"sin": 1, "cos": 1, "sqrt": 1, "exp": 1, "ln": 1, "abs": 1, "erf": 1, "pow": 2}


class ExprSyntaxError(PsiHilferError, ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        self.message = message
        super().__init__(f"{message} at byte {offset}")


class ExprEvalError(EvaluationError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (expression byte {offset})")


# --- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Const:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    pos: int = field(default=0, compare=False)


Expr = Num | Var | Const | Neg | BinOp | Call


# --- tokenizer ----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(src: str) -> list[Token]:
    out = []
    i = 0
    byte = 0
    while i < len(src):
        m = _TOKEN.match(src, i)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[i]!r}", byte)
        text = m.group()
        if m.lastgroup != "ws":
            out.append(Token(m.lastgroup, text, byte))
        byte += len(text.encode("utf-8"))
        i = m.end()
    out.append(Token("end", "", byte))
    return out


# --- parser -------------------------------------------------------------------


class _Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.k = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.k]

    def take(self) -> Token:
        t = self.toks[self.k]
        self.k += 1
        return t

    def accept(self, text: str) -> Token | None:
        if self.tok.kind == "op" and self.tok.text == text:
            return self.take()
        return None

    def expect(self, text: str, opened: Token | None = None):
        if self.accept(text) is None:
            if opened is not None and self.tok.kind == "end":
                raise ExprSyntaxError(f"unbalanced parenthesis opened at byte {opened.pos}", self.tok.pos)
            raise ExprSyntaxError(f"expected {text!r}, found {self._describe()}", self.tok.pos)

    def _describe(self) -> str:
        return "end of input" if self.tok.kind == "end" else repr(self.tok.text)

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            if self.tok.text == ")":
                raise ExprSyntaxError("unbalanced parenthesis ')'", self.tok.pos)
            raise ExprSyntaxError(f"unexpected {self._describe()}", self.tok.pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.take()
            e = BinOp(op.text, e, self.term(), op.pos)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.take()
            e = BinOp(op.text, e, self.unary(), op.pos)
        return e

    def unary(self) -> Expr:
        op = self.accept("-")
        if op is not None:
            return Neg(self.unary(), op.pos)
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        op = self.accept("^")
        if op is not None:
            return BinOp("^", base, self.unary(), op.pos)
        return base

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.take()
            return Num(float(t.text), t.pos)
        if t.kind == "name":
            self.take()
            if t.text in FUNCTIONS:
                return self.call(t)
            if self.tok.kind == "op" and self.tok.text == "(":
                raise ExprSyntaxError(f"unknown function {t.text!r}", t.pos)
            if t.text in VARIABLES:
                return Var(t.text, t.pos)
            if t.text in CONSTANTS:
                return Const(t.text, t.pos)
            raise ExprSyntaxError(f"unknown identifier {t.text!r}", t.pos)
        opened = self.accept("(")
        if opened is not None:
            e = self.expr()
            self.expect(")", opened)
            return e
        raise ExprSyntaxError(f"expected a number, name or '(', found {self._describe()}", t.pos)

    def call(self, name: Token) -> Expr:
        if self.tok.kind != "op" or self.tok.text != "(":
            raise ExprSyntaxError(f"function {name.text!r} must be called with '('", self.tok.pos)
        opened = self.take()
        args = [self.expr()]
        while self.accept(","):
            args.append(self.expr())
        self.expect(")", opened)
        want = FUNCTIONS[name.text]
        if len(args) != want:
            raise ExprSyntaxError(f"{name.text} takes {want} argument(s), got {len(args)}", name.pos)
        return Call(name.text, tuple(args), name.pos)


def parse(src: str) -> Expr:
    """Parse ``src`` into an AST or raise :class:`ExprSyntaxError` with a byte offset."""
    if not isinstance(src, str):
        raise ExprSyntaxError(f"expression must be text, got {type(src).__name__}", 0)
    return _Parser(src).parse()


# --- pretty printer -----------------------------------------------------------

_LEVEL = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _level(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _LEVEL[e.op]
    if isinstance(e, Neg):
        return 3
    return 5


def _wrap(e: Expr, need: int) -> str:
    s = to_source(e)
    return s if _level(e) >= need else f"({s})"


def to_source(e: Expr) -> str:
    """Print with the fewest parentheses that reparse to the same tree."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, (Var, Const)):
        return e.name
    if isinstance(e, Neg):
        return "-" + _wrap(e.operand, 3)
    if isinstance(e, Call):
        return f"{e.name}({', '.join(to_source(a) for a in e.args)})"
    if e.op == "^":
        return f"{_wrap(e.left, 5)}^{_wrap(e.right, 3)}"
    lvl = _LEVEL[e.op]
    return f"{_wrap(e.left, lvl)} {e.op} {_wrap(e.right, lvl + 1)}"


def free_variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Call):
        return set().union(*(free_variables(a) for a in e.args))
    return set()


# --- evaluation ---------------------------------------------------------------


def _fail(mask, what: str, node, t, y):
    i = int(np.flatnonzero(np.broadcast_to(mask, np.broadcast(t, y).shape).ravel())[0])
    tt = np.broadcast_to(t, np.broadcast(t, y).shape).ravel()[i]
    yy = np.broadcast_to(y, np.broadcast(t, y).shape).ravel()[i]
    raise ExprEvalError(f"{what} at t={tt:.17g}, y={yy:.17g}", node.pos)


def _ev(e: Expr, t, y):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return t if e.name == "t" else y
    if isinstance(e, Const):
        return CONSTANTS[e.name]
    if isinstance(e, Neg):
        return -_ev(e.operand, t, y)
    if isinstance(e, BinOp):
        a, b = _ev(e.left, t, y), _ev(e.right, t, y)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            bad = np.asarray(b) == 0
            if np.any(bad):
                _fail(bad, "division by zero", e, t, y)
            return a / b
        return _power(a, b, e, t, y)
    args = [_ev(a, t, y) for a in e.args]
    x = args[0]
    name = e.name
    if name == "sqrt":
        bad = np.asarray(x) < 0
        if np.any(bad):
            _fail(bad, "sqrt of a negative number", e, t, y)
        return np.sqrt(x)
    if name == "ln":
        bad = np.asarray(x) <= 0
        if np.any(bad):
            _fail(bad, "ln of a non-positive number", e, t, y)
        return np.log(x)
    if name == "pow":
        return _power(x, args[1], e, t, y)
    return {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs, "erf": sc.erf}[name](x)


def _power(a, b, node, t, y):
    a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    bad = (a_arr < 0) & (b_arr != np.round(b_arr))
    if np.any(bad):
        _fail(bad, "negative base with a non-integer exponent", node, t, y)
    bad = (a_arr == 0) & (b_arr < 0)
    if np.any(bad):
        _fail(bad, "zero raised to a negative power", node, t, y)
    return np.power(a_arr, b_arr)


def evaluate(e: Expr, t=0.0, y=0.0):
    """Evaluate with IEEE double semantics; domain violations raise :class:`ExprEvalError`.

    ``t`` and ``y`` may be arrays (broadcast together); a scalar pair gives a float.
    """
    t_arr = np.asarray(t, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    with np.errstate(all="ignore"):
        out = _ev(e, t_arr, y_arr)
    out = np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(t_arr, y_arr).shape)
    if out.ndim == 0:
        return float(out)
    return np.array(out)


def compile_expr(src: str, allowed: tuple[str, ...] = VARIABLES) -> Callable:
    """Parse once and return ``f(t, y=0)``; names outside ``allowed`` are rejected."""
    e = parse(src)
    extra = free_variables(e) - set(allowed)
    if extra:
        raise ExprSyntaxError(f"variable(s) {sorted(extra)} not allowed here", _first_pos(e, extra))

    def fn(t, y=0.0):
        return evaluate(e, t, y)

    fn.ast = e
    fn.source = src
    return fn


def _first_pos(e: Expr, names: set[str]) -> int:
    if isinstance(e, Var) and e.name in names:
        return e.pos
    children = ()
    if isinstance(e, Neg):
        children = (e.operand,)
    elif isinstance(e, BinOp):
        children = (e.left, e.right)
    elif isinstance(e, Call):
        children = e.args
    return min((_first_pos(c, names) for c in children), default=10**9)
