"""Scalar expression language for flow rates, inputs and outputs.

Grammar, loosest binding first::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 't' | 'x' DIGIT+ | FUNC '(' expr ')' | '(' expr ')'

so ``-x1^2`` is ``-(x1^2)`` and ``2^3^2`` is ``2^(3^2)``. FUNC is one of
sin, cos, exp, sqrt. State references are 1-based.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union

from .errors import EvalError, ExprSyntaxError, UnknownIdentifier

FUNCTIONS = ("sin", "cos", "exp", "sqrt")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class StateRef:
    index: int


@dataclass(frozen=True)
class TimeVar:
    pass


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Constant, StateRef, TimeVar, Unary, Binary]

ZERO = Constant(0.0)


# ---------------------------------------------------------------- lexing

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, ident, op, end
    text: str
    pos: int  # character offset


def _byte_offset(source: str, pos: int) -> int:
    return len(source[:pos].encode("utf-8"))


def _tokenize(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i = 0
    n = len(source)
    while True:
        while i < n and source[i].isspace():
            i += 1
        if i >= n:
            toks.append(_Tok("end", "", i))
            return toks
        m = _TOKEN.match(source, i)
        if m is None or m.end() == i:
            raise ExprSyntaxError(f"unexpected character {source[i]!r}", _byte_offset(source, i), source)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), start))
        i = m.end()


# ---------------------------------------------------------------- parsing


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.toks = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _fail(self, message: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise ExprSyntaxError(message, _byte_offset(self.source, tok.pos), self.source)

    def _is(self, text: str) -> bool:
        return self.tok.kind == "op" and self.tok.text == text

    def _expect(self, text: str) -> None:
        if not self._is(text):
            found = self.tok.text or "end of input"
            self._fail(f"expected {text!r}, found {found!r}")
        self.i += 1

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            self._fail(f"unexpected {self.tok.text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self._is("+") or self._is("-"):
            op = "add" if self.tok.text == "+" else "sub"
            self.i += 1
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self._is("*") or self._is("/"):
            op = "mul" if self.tok.text == "*" else "div"
            self.i += 1
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self._is("-"):
            self.i += 1
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._is("^"):
            self.i += 1
            return Binary("pow", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            value = float(tok.text)
            if not math.isfinite(value):
                self._fail(f"number {tok.text!r} is not finite")
            self.i += 1
            return Constant(value)
        if tok.kind == "ident":
            name = tok.text
            self.i += 1
            if name == "t":
                return TimeVar()
            if re.fullmatch(r"x\d+", name):
                index = int(name[1:])
                if index < 1:
                    raise UnknownIdentifier(name, _byte_offset(self.source, tok.pos))
                return StateRef(index)
            if name in FUNCTIONS:
                self._expect("(")
                arg = self.expr()
                self._expect(")")
                return Unary(name, arg)
            raise UnknownIdentifier(name, _byte_offset(self.source, tok.pos))
        if self._is("("):
            self.i += 1
            e = self.expr()
            self._expect(")")
            return e
        found = tok.text or "end of input"
        self._fail(f"unexpected {found!r}")


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree."""
    return _Parser(source).parse()


# ---------------------------------------------------------------- printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    if isinstance(e, Constant) and e.value < 0:
        return 0
    return 5


def _wrap(e: Expr, min_prec: int) -> str:
    s = to_source(e)
    return s if _prec(e) >= min_prec else f"({s})"


def to_source(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_source(e))`` rebuilds the same tree."""
    if isinstance(e, Constant):
        return repr(float(e.value))
    if isinstance(e, StateRef):
        return f"x{e.index}"
    if isinstance(e, TimeVar):
        return "t"
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.arg, 3)
        return f"{e.op}({to_source(e.arg)})"
    p = _PREC[e.op]
    if e.op == "pow":
        return f"{_wrap(e.left, 5)}^{_wrap(e.right, 3)}"
    # left associative: the right operand must bind strictly tighter
    right_min = p + 1 if e.op in ("add", "sub") else 3
    return f"{_wrap(e.left, p)} {_SYMBOL[e.op]} {_wrap(e.right, right_min)}"


# ---------------------------------------------------------------- evaluation


def _pow(a: float, b: float) -> float:
    try:
        r = math.pow(a, b)
    except (ValueError, ZeroDivisionError) as exc:
        raise EvalError(f"pow({a!r}, {b!r}) is undefined") from exc
    except OverflowError as exc:
        raise EvalError(f"pow({a!r}, {b!r}) overflows") from exc
    if math.isnan(r):
        raise EvalError(f"pow({a!r}, {b!r}) is NaN")
    return r


def _div(a: float, b: float) -> float:
    if b == 0.0:
        raise EvalError("division by zero")
    return a / b


def _call(name: str, v: float) -> float:
    try:
        return getattr(math, name)(v)
    except (ValueError, OverflowError) as exc:
        raise EvalError(f"{name}({v!r}) failed: {exc}") from exc


def evaluate(e: Expr, t: float, x: Sequence[float]) -> float:
    """Evaluate ``e`` at time ``t`` and state ``x`` (0-based sequence)."""
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, StateRef):
        if e.index > len(x):
            raise EvalError(f"x{e.index} out of range for a state of length {len(x)}")
        return float(x[e.index - 1])
    if isinstance(e, TimeVar):
        return float(t)
    if isinstance(e, Unary):
        v = evaluate(e.arg, t, x)
        if e.op == "neg":
            return -v
        return _call(e.op, v)
    a = evaluate(e.left, t, x)
    b = evaluate(e.right, t, x)
    if e.op == "add":
        return a + b
    if e.op == "sub":
        return a - b
    if e.op == "mul":
        return a * b
    if e.op == "div":
        return _div(a, b)
    return _pow(a, b)


def _codegen(e: Expr) -> str:
    if isinstance(e, Constant):
        return repr(float(e.value))
    if isinstance(e, StateRef):
        return f"x[{e.index - 1}]"
    if isinstance(e, TimeVar):
        return "t"
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"(-{_codegen(e.arg)})"
        return f"_call({e.op!r}, {_codegen(e.arg)})"
    a, b = _codegen(e.left), _codegen(e.right)
    if e.op == "div":
        return f"_div({a}, {b})"
    if e.op == "pow":
        return f"_pow({a}, {b})"
    return f"({a} {_SYMBOL[e.op]} {b})"


def compile_expr(e: Expr) -> Callable[[float, Sequence[float]], float]:
    """Compile ``e`` into a Python function of ``(t, x)``.

    The generated code performs the same floating point operations in the
    same order as :func:`evaluate`, so results are bit-identical. ``x`` must
    be indexable by plain ints; a list is fastest.
    """
    src = f"lambda t, x: float({_codegen(e)})"
    return eval(src, {"_div": _div, "_pow": _pow, "_call": _call})  # noqa: S307


# ---------------------------------------------------------------- analysis


def state_indices(e: Expr) -> set[int]:
    if isinstance(e, StateRef):
        return {e.index}
    if isinstance(e, Unary):
        return state_indices(e.arg)
    if isinstance(e, Binary):
        return state_indices(e.left) | state_indices(e.right)
    return set()


def uses_time(e: Expr) -> bool:
    if isinstance(e, TimeVar):
        return True
    if isinstance(e, Unary):
        return uses_time(e.arg)
    if isinstance(e, Binary):
        return uses_time(e.left) or uses_time(e.right)
    return False


def fold_constants(e: Expr) -> Expr:
    """Replace every subtree free of ``t`` and state references by its value.

    Subtrees whose evaluation fails are kept as they are so the error shows
    up at evaluation time.
    """
    if isinstance(e, Unary):
        arg = fold_constants(e.arg)
        node = Unary(e.op, arg)
        if isinstance(arg, Constant):
            try:
                return Constant(evaluate(node, 0.0, ()))
            except EvalError:
                return node
        return node
    if isinstance(e, Binary):
        left, right = fold_constants(e.left), fold_constants(e.right)
        node = Binary(e.op, left, right)
        if isinstance(left, Constant) and isinstance(right, Constant):
            try:
                return Constant(evaluate(node, 0.0, ()))
            except EvalError:
                return node
        return node
    return e


def is_zero(e: Expr) -> bool:
    f = fold_constants(e)
    return isinstance(f, Constant) and f.value == 0.0


@dataclass(frozen=True)
class LinearInDonor:
    c: float


@dataclass(frozen=True)
class ConstantInput:
    c: float


@dataclass(frozen=True)
class TimeOnlyInput:
    pass


@dataclass(frozen=True)
class Nonlinear:
    pass


LinearityTag = Union[LinearInDonor, ConstantInput, TimeOnlyInput, Nonlinear]


def _donor_coefficient(e: Expr, donor: int) -> float | None:
    # Only shapes whose evaluation is bitwise c*x_j qualify; x/c does not.
    if isinstance(e, Constant) and e.value == 0.0:
        return 0.0
    if isinstance(e, StateRef) and e.index == donor:
        return 1.0
    if isinstance(e, Unary) and e.op == "neg":
        c = _donor_coefficient(e.arg, donor)
        return None if c is None else -c
    if isinstance(e, Binary) and e.op == "mul":
        if isinstance(e.left, Constant) and e.right == StateRef(donor):
            return e.left.value
        if isinstance(e.right, Constant) and e.left == StateRef(donor):
            return e.right.value
    return None


def classify_linearity(e: Expr, role: str, donor: int | None = None) -> LinearityTag:
    """Tag ``e`` for routing to the linear solvers.

    ``role`` is ``"flow"`` or ``"output"`` (with the donor compartment,
    1-based) or ``"input"``. The test is syntactic after constant folding,
    so a ``Nonlinear`` answer may be overly cautious but never wrong.
    """
    f = fold_constants(e)
    if role == "input":
        if isinstance(f, Constant):
            return ConstantInput(f.value)
        if not state_indices(f):
            return TimeOnlyInput()
        return Nonlinear()
    if role not in ("flow", "output"):
        raise ValueError(f"unknown role {role!r}")
    if donor is None:
        raise ValueError("flow and output roles need a donor compartment")
    c = _donor_coefficient(f, donor)
    return Nonlinear() if c is None else LinearInDonor(c)
