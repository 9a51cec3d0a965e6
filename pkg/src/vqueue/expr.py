"""Small expression language for state-dependent intensities.

Grammar (whitespace insignificant)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | factor
    factor := atom ("^" atom)?
    atom   := number | "n" | "x" | "y" | "t"
            | fn "(" expr ("," expr)* ")" | "(" expr ")"
    fn     := "exp" | "log" | "min" | "max" | "if_gt"

``if_gt(a, b, p, q)`` is ``p`` when ``a > b`` and ``q`` otherwise. The time
variable ``t`` is only accepted when the caller asks for it (time-dependent
test functions); intensities are functions of ``(n, x, y)`` alone.

Besides parsing and printing, this module provides symbolic partial
derivatives and compilation to a flat postfix program that the simulation
kernels evaluate.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "BinOp",
    "Neg",
    "Call",
    "ExprSyntaxError",
    "parse",
    "to_text",
    "evaluate",
    "evaluate_array",
    "substitute",
    "diff",
    "simplify",
    "variables",
    "compile_program",
    "affine_guards",
    "Program",
]

STATE_VARS = ("n", "x", "y")
ALL_VARS = ("n", "x", "y", "t")
FUNCTIONS = {"exp": (1, 1), "log": (1, 1), "min": (2, None), "max": (2, None), "if_gt": (4, 4)}


class ExprSyntaxError(ValueError):
    """Raised for malformed expressions; ``pos`` is the 0-based offset."""

    def __init__(self, message: str, pos: int | None = None):
        self.pos = pos
        if pos is not None:
            message = f"{message} (at position {pos})"
        super().__init__(message)


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Expr = Const | Var | BinOp | Neg | Call


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed: tuple[str, ...]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", pos)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.factor()

    def factor(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.atom())
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                lo, hi = FUNCTIONS[text]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    want = str(lo) if lo == hi else f"at least {lo}"
                    raise ExprSyntaxError(
                        f"{text}() takes {want} arguments, got {len(args)}", pos
                    )
                return Call(text, tuple(args))
            if text in self.allowed:
                return Var(text)
            raise ExprSyntaxError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def parse(text: str, allow_time: bool = False) -> Expr:
    """Parse ``text`` into an expression tree."""
    allowed = ALL_VARS if allow_time else STATE_VARS
    return _Parser(text, allowed).parse()


# --------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _num(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"non-finite constant {v!r} cannot be printed")
    s = repr(abs(float(v)))
    return s if v >= 0 else "-" + s


def _fmt(e: Expr, ctx: int) -> str:
    # ctx: binding strength required by the surrounding position
    if isinstance(e, Const):
        s = _num(e.value)
        if e.value < 0 and ctx > 1:
            return f"({s})"
        return s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}(" + ", ".join(_fmt(a, 0) for a in e.args) + ")"
    if isinstance(e, Neg):
        s = "-" + _fmt(e.operand, 3)
        return f"({s})" if ctx > 1 else s
    p = _PREC[e.op]
    if e.op == "^":
        s = f"{_fmt(e.left, 5)}^{_fmt(e.right, 5)}"
    else:
        # left-associative: the right operand needs strictly higher binding
        s = f"{_fmt(e.left, p)} {e.op} {_fmt(e.right, p + 1)}"
    return f"({s})" if p < ctx else s


def to_text(e: Expr) -> str:
    """Canonical text form; ``parse(to_text(e))`` reproduces ``e``."""
    return _fmt(e, 0)


# --------------------------------------------------------------------------
# evaluation


def _div(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _pow(a: float, b: float) -> float:
    try:
        return math.pow(a, b)
    except OverflowError:
        return math.inf
    except ValueError:
        if a == 0.0 and b < 0:
            return math.inf
        return math.nan


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _log(a: float) -> float:
    if a > 0 or math.isnan(a):
        return math.log(a) if a != math.inf else math.inf
    return -math.inf if a == 0 else math.nan


def evaluate(e: Expr, n: float, x: float, y: float, t: float = 0.0) -> float:
    """Evaluate with IEEE semantics (division by zero gives inf/nan)."""
    env = {"n": float(n), "x": float(x), "y": float(y), "t": float(t)}
    return _eval(e, env)


def _eval(e: Expr, env) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -_eval(e.operand, env)
    if isinstance(e, BinOp):
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            return _div(a, b)
        return _pow(a, b)
    vals = [_eval(a, env) for a in e.args]
    if e.fn == "exp":
        return _exp(vals[0])
    if e.fn == "log":
        return _log(vals[0])
    if e.fn == "min":
        r = vals[0]
        for v in vals[1:]:
            r = v if v < r else r
        return r
    if e.fn == "max":
        r = vals[0]
        for v in vals[1:]:
            r = v if v > r else r
        return r
    a, b, p, q = vals
    return p if a > b else q


def evaluate_array(e: Expr, n, x, y, t=0.0) -> np.ndarray:
    """Vectorised :func:`evaluate` over broadcastable arrays."""
    env = {k: np.asarray(v, dtype=np.float64) for k, v in zip("nxyt", (n, x, y, t))}
    shape = np.broadcast_shapes(*(v.shape for v in env.values()))
    with np.errstate(all="ignore"):
        return np.broadcast_to(_eval_array(e, env), shape).astype(np.float64)


def _eval_array(e: Expr, env):
    if isinstance(e, Const):
        return np.float64(e.value)
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -_eval_array(e.operand, env)
    if isinstance(e, BinOp):
        a = _eval_array(e.left, env)
        b = _eval_array(e.right, env)
        return {
            "+": np.add, "-": np.subtract, "*": np.multiply,
            "/": np.true_divide, "^": np.power,
        }[e.op](a, b)
    vals = [_eval_array(a, env) for a in e.args]
    if e.fn == "exp":
        return np.exp(vals[0])
    if e.fn == "log":
        return np.log(vals[0])
    if e.fn in ("min", "max"):
        r = vals[0]
        for v in vals[1:]:
            r = np.where(v < r, v, r) if e.fn == "min" else np.where(v > r, v, r)
        return r
    a, b, p, q = vals
    return np.where(a > b, p, q)


# --------------------------------------------------------------------------
# symbolic algebra


def substitute(e: Expr, **values: float) -> Expr:
    """Replace variables by constants, e.g. ``substitute(e, n=0, x=0)``."""
    if isinstance(e, Var):
        return Const(float(values[e.name])) if e.name in values else e
    if isinstance(e, Const):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.operand, **values))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, **values), substitute(e.right, **values))
    return Call(e.fn, tuple(substitute(a, **values) for a in e.args))


def variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, Neg):
        return variables(e.operand)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    out = set()
    for a in e.args:
        out |= variables(a)
    return out


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def _add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def _mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return Const(0.0)
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def _divide(a, b):
    if _is(a, 0):
        return Const(0.0)
    if _is(b, 1):
        return a
    return BinOp("/", a, b)


def _neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def _binary_chain(fn: str, args: tuple) -> Expr:
    e = args[0]
    for a in args[1:]:
        e = Call(fn, (e, a))
    return e


def simplify(e: Expr) -> Expr:
    """Constant folding and removal of neutral elements."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Neg):
        return _neg(simplify(e.operand))
    if isinstance(e, BinOp):
        a, b = simplify(e.left), simplify(e.right)
        if e.op == "+":
            return _add(a, b)
        if e.op == "-":
            return _sub(a, b)
        if e.op == "*":
            return _mul(a, b)
        if e.op == "/":
            return _divide(a, b)
        if _is(b, 1):
            return a
        if _is(b, 0):
            return Const(1.0)
        return BinOp("^", a, b)
    args = tuple(simplify(a) for a in e.args)
    if all(isinstance(a, Const) for a in args):
        return Const(evaluate(Call(e.fn, args), 0, 0, 0))
    if e.fn == "if_gt" and args[2] == args[3]:
        return args[2]
    return Call(e.fn, args)


def diff(e: Expr, var: str) -> Expr:
    """Partial derivative of ``e`` with respect to ``var``.

    Guards (``if_gt``, ``min``, ``max``) are differentiated branchwise, so the
    result is the derivative almost everywhere.
    """
    return simplify(_diff(e, var))


def _diff(e: Expr, v: str) -> Expr:
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.name == v else 0.0)
    if isinstance(e, Neg):
        return _neg(_diff(e.operand, v))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = _diff(a, v), _diff(b, v)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if e.op == "/":
            return _divide(_sub(_mul(da, b), _mul(a, db)), BinOp("^", b, Const(2.0)))
        if v not in variables(b):
            # d(a^c) = c a^(c-1) a'
            c = simplify(b)
            return _mul(_mul(c, BinOp("^", a, simplify(_sub(c, Const(1.0))))), da)
        return _mul(e, _add(_mul(db, Call("log", (a,))), _divide(_mul(b, da), a)))
    if e.fn == "exp":
        return _mul(e, _diff(e.args[0], v))
    if e.fn == "log":
        return _divide(_diff(e.args[0], v), e.args[0])
    if e.fn in ("min", "max"):
        if len(e.args) > 2:
            return _diff(_binary_chain(e.fn, e.args), v)
        a, b = e.args
        da, db = _diff(a, v), _diff(b, v)
        if e.fn == "min":
            return Call("if_gt", (b, a, da, db))
        return Call("if_gt", (a, b, da, db))
    a, b, p, q = e.args
    return Call("if_gt", (a, b, _diff(p, v), _diff(q, v)))


def affine_guards(e: Expr) -> list[Expr]:
    """Switching functions ``a - b`` of guards that are affine in (x, y, t).

    Along a flow segment these vanish at most once, which lets integrators
    split exactly at the discontinuity. Non-affine guards are left to the
    adaptive subdivision.
    """
    found: list[Expr] = []

    def visit(node):
        if isinstance(node, (Const, Var)):
            return
        if isinstance(node, Neg):
            visit(node.operand)
            return
        if isinstance(node, BinOp):
            visit(node.left)
            visit(node.right)
            return
        for a in node.args:
            visit(a)
        if node.fn == "if_gt":
            pairs = [(node.args[0], node.args[1])]
        elif node.fn in ("min", "max"):
            pairs = [(a, b) for i, a in enumerate(node.args) for b in node.args[i + 1:]]
        else:
            return
        for a, b in pairs:
            g = simplify(BinOp("-", a, b))
            if not (variables(g) & {"x", "y", "t"}):
                continue
            if all(not (variables(diff(g, w)) & {"x", "y", "t"}) for w in ("x", "y", "t")):
                if g not in found:
                    found.append(g)

    visit(e)
    return found


# --------------------------------------------------------------------------
# compilation to postfix programs

OP_CONST, OP_N, OP_X, OP_Y, OP_T = 0, 1, 2, 3, 4
OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_NEG = 5, 6, 7, 8, 9, 10
OP_EXP, OP_LOG, OP_MIN, OP_MAX, OP_IFGT = 11, 12, 13, 14, 15
MAX_STACK = 64

_BIN_CODES = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}
_VAR_CODES = {"n": OP_N, "x": OP_X, "y": OP_Y, "t": OP_T}


@dataclass(frozen=True, eq=False)
class Program:
    """Postfix form of an expression: opcodes (CONST carries an index) and
    a constant pool. Evaluated by the kernels with a fixed-size stack."""

    code: np.ndarray
    consts: np.ndarray
    source: str


def compile_program(e: Expr) -> Program:
    code: list[int] = []
    consts: list[float] = []
    depth = 0
    peak = 0

    def push(k):
        nonlocal depth, peak
        depth += k
        peak = max(peak, depth)

    def emit(node):
        if isinstance(node, Const):
            code.extend((OP_CONST, len(consts)))
            consts.append(node.value)
            push(1)
        elif isinstance(node, Var):
            code.append(_VAR_CODES[node.name])
            push(1)
        elif isinstance(node, Neg):
            emit(node.operand)
            code.append(OP_NEG)
        elif isinstance(node, BinOp):
            emit(node.left)
            emit(node.right)
            code.append(_BIN_CODES[node.op])
            push(-1)
        elif node.fn in ("exp", "log"):
            emit(node.args[0])
            code.append(OP_EXP if node.fn == "exp" else OP_LOG)
        elif node.fn in ("min", "max"):
            emit(node.args[0])
            for a in node.args[1:]:
                emit(a)
                code.append(OP_MIN if node.fn == "min" else OP_MAX)
                push(-1)
        else:
            for a in node.args:
                emit(a)
            code.append(OP_IFGT)
            push(-3)

    emit(e)
    if peak > MAX_STACK:
        raise ExprSyntaxError(f"expression too deeply nested (stack depth {peak})")
    return Program(
        np.asarray(code, dtype=np.int32),
        np.asarray(consts if consts else [0.0], dtype=np.float64),
        to_text(e),
    )
