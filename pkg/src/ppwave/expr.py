"""Symbolic expressions in the Brinkmann coordinates (u, v, x1..xn).

Expressions are immutable trees.  Coordinates are addressed by index:
0 is ``u``, 1 is ``v`` and ``k + 1`` is ``xk``.  Builders apply a small,
predictable set of structural simplifications (constant folding, neutral
and absorbing elements); there is no canonicalisation beyond that.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels

__all__ = [
    "VarSpace", "Expr", "ParseError", "UnknownVariableError", "DomainError",
    "BudgetError", "const", "var", "sin", "cos", "exp", "ln", "parse",
    "to_text", "diff", "evaluate", "evaluate_many", "bound_estimate",
    "poly_degree_in_x", "to_poly", "free_vars", "is_const", "is_zero",
    "ProgramSet", "compile_exprs", "var_index", "var_name",
]


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownVariableError(ParseError):
    def __init__(self, token: str, position: int):
        super().__init__(f"unknown variable {token!r}", position)
        self.token = token


class DomainError(ArithmeticError):
    """ln of a non-positive number, or division by zero, during evaluation."""

    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message}: {to_text(subexpr)}")
        self.subexpr = subexpr


class BudgetError(RuntimeError):
    pass


def var_name(index: int) -> str:
    if index == 0:
        return "u"
    if index == 1:
        return "v"
    return f"x{index - 1}"


def var_index(name: str, n: int | None = None) -> int:
    if name == "u":
        return 0
    if name == "v":
        return 1
    m = re.fullmatch(r"x([1-9][0-9]*)", name)
    if m is None or (n is not None and int(m.group(1)) > n):
        raise KeyError(name)
    return int(m.group(1)) + 1


@dataclass(frozen=True)
class VarSpace:
    """Coordinates (u, v, x1..xn) with optional declared periods."""

    n: int
    periods: tuple = ()

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError(f"transverse dimension must be >= 1, got {self.n!r}")
        per = tuple(self.periods) if self.periods else (None,) * (self.n + 2)
        if len(per) != self.n + 2:
            raise ValueError("periods must have one entry per coordinate")
        for p in per:
            if p is not None and not (p > 0 and math.isfinite(p)):
                raise ValueError(f"periods must be positive, got {p!r}")
        object.__setattr__(self, "periods",
                           tuple(None if p is None else float(p) for p in per))

    @classmethod
    def with_periods(cls, n: int, periods: Mapping[str, float]) -> "VarSpace":
        per = [None] * (n + 2)
        for name, p in periods.items():
            per[var_index(name, n)] = p
        return cls(n, tuple(per))

    @property
    def dim(self) -> int:
        return self.n + 2

    @property
    def names(self) -> list[str]:
        return [var_name(i) for i in range(self.dim)]

    def index(self, name: str) -> int:
        try:
            return var_index(name, self.n)
        except KeyError:
            raise KeyError(f"{name!r} is not a coordinate of this space") from None

    def period(self, coord: int | str) -> float | None:
        i = coord if isinstance(coord, (int, np.integer)) else self.index(coord)
        return self.periods[i]

    def is_periodic(self, coord: int | str) -> bool:
        return self.period(coord) is not None


@dataclass(frozen=True, eq=True)
class Expr:
    """Expression node.

    ``op`` is one of const, var, add, mul, neg, div, pow, sin, cos, exp, ln.
    ``value`` carries the constant (const), the coordinate index (var) or the
    integer exponent (pow).
    """

    op: str
    args: tuple = ()
    value: float = 0.0
    _hash: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash((self.op, self.args, self.value)))

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Expr({to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)):
            raise TypeError("only integer powers are supported")
        return power(self, int(k))


def _lift(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, np.integer, np.floating)):
        return const(float(x))
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


ZERO = None  # set below
ONE = None


def const(c: float) -> Expr:
    return Expr("const", (), float(c))


def var(index: int | str, n: int | None = None) -> Expr:
    if isinstance(index, str):
        index = var_index(index, n)
    return Expr("var", (), int(index))


ZERO = const(0.0)
ONE = const(1.0)


def is_const(e: Expr, c: float | None = None) -> bool:
    return e.op == "const" and (c is None or e.value == c)


def is_zero(e: Expr) -> bool:
    return is_const(e, 0.0)


def add(a: Expr, b: Expr) -> Expr:
    if is_const(a) and is_const(b):
        return const(a.value + b.value)
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    return Expr("add", (a, b))


def neg(a: Expr) -> Expr:
    if is_const(a):
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    if a.op == "mul" and is_const(a.args[0]):
        return mul(const(-a.args[0].value), a.args[1])
    return Expr("neg", (a,))


def mul(a: Expr, b: Expr) -> Expr:
    if is_const(a) and is_const(b):
        return const(a.value * b.value)
    if is_zero(a) or is_zero(b):
        return ZERO
    if is_const(a, 1.0):
        return b
    if is_const(b, 1.0):
        return a
    if is_const(b):
        a, b = b, a
    if is_const(a):
        if is_const(a, -1.0):
            return neg(b)
        # c1 * (c2 * e) -> (c1 c2) * e
        if b.op == "mul" and is_const(b.args[0]):
            return mul(const(a.value * b.args[0].value), b.args[1])
        if b.op == "neg":
            return mul(const(-a.value), b.args[0])
    return Expr("mul", (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if is_const(b) and b.value != 0.0:
        if is_const(a):
            return const(a.value / b.value)
        if b.value == 1.0:
            return a
    if is_zero(a) and is_const(b) and b.value != 0.0:
        return ZERO
    return Expr("div", (a, b))


def power(a: Expr, k: int) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return a
    if is_const(a) and not (a.value == 0.0 and k < 0):
        return const(a.value ** k)
    if a.op == "pow":
        return power(a.args[0], int(a.value) * k)
    return Expr("pow", (a,), k)


def _fold_unary(name: str, fn, a: Expr) -> Expr:
    if is_const(a):
        if name == "ln" and a.value <= 0.0:
            return Expr(name, (a,))
        return const(fn(a.value))
    return Expr(name, (a,))


def sin(a) -> Expr:
    return _fold_unary("sin", math.sin, _lift(a))


def cos(a) -> Expr:
    return _fold_unary("cos", math.cos, _lift(a))


def exp(a) -> Expr:
    return _fold_unary("exp", math.exp, _lift(a))


def ln(a) -> Expr:
    return _fold_unary("ln", math.log, _lift(a))


_FUNCS = {"sin": sin, "cos": cos, "exp": exp, "ln": ln}


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    out = []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), start))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, vs: VarSpace):
        self.toks = _tokenize(text)
        self.i = 0
        self.vs = vs

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Expr("add", (e, rhs)) if op == "+" else Expr("add", (e, Expr("neg", (rhs,))))
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = Expr("mul" if op == "*" else "div", (e, rhs))
        return e

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Expr("neg", (self.unary(),))
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.factor()

    def factor(self) -> Expr:
        base = self.base()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ParseError("exponent must be an integer literal", pos)
            return Expr("pow", (base,), sign * int(val))
        return base

    def base(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "id":
            if val in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Expr(val, (arg,))
            try:
                return var(self.vs.index(val))
            except KeyError:
                raise UnknownVariableError(val, pos) from None
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", pos)


def parse(text: str, vs: VarSpace) -> Expr:
    """Parse ``text`` into an expression tree over ``vs``.

    The tree mirrors the input; no simplification is applied.
    """
    return _Parser(text, vs).parse()


# --------------------------------------------------------------- printing

_PREC = {"add": 1, "neg": 2, "mul": 3, "div": 3, "pow": 5}


def _fmt_const(c: float) -> str:
    if c == int(c) and abs(c) < 1e16:
        s = str(int(c))
    else:
        s = repr(c)
    return f"({s})" if c < 0 or s.startswith("-") else s


def to_text(e: Expr) -> str:
    """Print ``e`` in the input grammar; ``parse(to_text(e))`` evaluates equal."""
    return _show(e)


def _show(e: Expr) -> str:
    op = e.op
    if op == "const":
        if math.isinf(e.value) or math.isnan(e.value):
            raise ValueError("non-finite constants are not printable")
        return _fmt_const(e.value)
    if op == "var":
        return var_name(int(e.value))
    if op in _FUNCS:
        return f"{op}({_show(e.args[0])})"
    if op == "add":
        a, b = e.args
        if b.op == "neg":
            return f"{_show(a)} - {_wrap(b.args[0], 2)}"
        return f"{_show(a)} + {_wrap(b, 1)}"
    if op == "neg":
        return f"-{_wrap(e.args[0], 3)}"
    if op == "mul":
        return f"{_wrap(e.args[0], 3)}*{_wrap(e.args[1], 4)}"
    if op == "div":
        return f"{_wrap(e.args[0], 3)}/{_wrap(e.args[1], 4)}"
    if op == "pow":
        k = int(e.value)
        return f"{_wrap(e.args[0], 6)}^{k}"
    raise ValueError(f"unknown op {op}")


def _wrap(e: Expr, min_prec: int) -> str:
    prec = _PREC.get(e.op, 9)
    s = _show(e)
    return f"({s})" if prec < min_prec else s


# --------------------------------------------------------- differentiation

def diff(e: Expr, coord: int | str) -> Expr:
    """Exact partial derivative of ``e`` with respect to one coordinate."""
    idx = var_index(coord) if isinstance(coord, str) else int(coord)
    return _diff(e, idx)


@lru_cache(maxsize=65536)
def _diff(e: Expr, i: int) -> Expr:
    op = e.op
    if op == "const":
        return ZERO
    if op == "var":
        return ONE if int(e.value) == i else ZERO
    if i not in free_vars(e):
        return ZERO
    if op == "add":
        return add(_diff(e.args[0], i), _diff(e.args[1], i))
    if op == "neg":
        return neg(_diff(e.args[0], i))
    if op == "mul":
        a, b = e.args
        return add(mul(_diff(a, i), b), mul(a, _diff(b, i)))
    if op == "div":
        a, b = e.args
        da, db = _diff(a, i), _diff(b, i)
        if is_zero(db):
            return div(da, b)
        return div(add(mul(da, b), neg(mul(a, db))), power(b, 2))
    if op == "pow":
        a = e.args[0]
        k = int(e.value)
        return mul(mul(const(k), power(a, k - 1)), _diff(a, i))
    a = e.args[0]
    da = _diff(a, i)
    if op == "sin":
        return mul(cos(a), da)
    if op == "cos":
        return neg(mul(sin(a), da))
    if op == "exp":
        return mul(exp(a), da)
    if op == "ln":
        return div(da, a)
    raise ValueError(f"unknown op {op}")


@lru_cache(maxsize=65536)
def free_vars(e: Expr) -> frozenset:
    if e.op == "var":
        return frozenset((int(e.value),))
    if e.op == "const":
        return frozenset()
    out = frozenset()
    for a in e.args:
        out = out | free_vars(a)
    return out


# -------------------------------------------------------------- evaluation

def evaluate(e: Expr, point: Sequence[float]) -> float:
    """Evaluate at a coordinate vector (u, v, x1..xn) in double precision.

    Raises DomainError for ln of a non-positive argument or division by zero.
    """
    return _ev(e, point)


def _ev(e: Expr, p) -> float:
    op = e.op
    if op == "const":
        return e.value
    if op == "var":
        return float(p[int(e.value)])
    if op == "add":
        return _ev(e.args[0], p) + _ev(e.args[1], p)
    if op == "mul":
        return _ev(e.args[0], p) * _ev(e.args[1], p)
    if op == "neg":
        return -_ev(e.args[0], p)
    if op == "div":
        den = _ev(e.args[1], p)
        if den == 0.0:
            raise DomainError("division by zero", e)
        return _ev(e.args[0], p) / den
    if op == "pow":
        base = _ev(e.args[0], p)
        k = int(e.value)
        if base == 0.0 and k < 0:
            raise DomainError("division by zero", e)
        return base ** k
    x = _ev(e.args[0], p)
    if op == "sin":
        return math.sin(x)
    if op == "cos":
        return math.cos(x)
    if op == "exp":
        try:
            return math.exp(x)
        except OverflowError:
            return math.inf
    if op == "ln":
        if x <= 0.0:
            raise DomainError("ln of non-positive argument", e)
        return math.log(x)
    raise ValueError(f"unknown op {op}")


def _first_domain_error(e: Expr, points: np.ndarray) -> None:
    for p in points:
        _ev(e, p)


def evaluate_many(e: Expr, points: np.ndarray) -> np.ndarray:
    """Vectorised evaluation at each row of ``points``."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    prog = compile_exprs([e])
    out = prog.eval_batch(pts)[:, 0]
    if not np.all(np.isfinite(out)):
        bad = pts[~np.isfinite(out)]
        _first_domain_error(e, bad)
    return out


# ------------------------------------------------------------ compilation

_OPCODES = {
    "add": kernels.OP_ADD, "mul": kernels.OP_MUL, "neg": kernels.OP_NEG,
    "div": kernels.OP_DIV, "pow": kernels.OP_POW, "sin": kernels.OP_SIN,
    "cos": kernels.OP_COS, "exp": kernels.OP_EXP, "ln": kernels.OP_LN,
}


class ProgramSet:
    """Postfix bytecode for a list of expressions, evaluated by the kernels."""

    def __init__(self, exprs: Sequence[Expr]):
        ops, iargs, fargs, offsets = [], [], [], [0]
        depth = 1
        for e in exprs:
            d = _emit(e, ops, iargs, fargs)
            depth = max(depth, d)
            offsets.append(len(ops))
        self.exprs = tuple(exprs)
        self.ops = np.array(ops, dtype=np.int64)
        self.iargs = np.array(iargs, dtype=np.int64)
        self.fargs = np.array(fargs, dtype=np.float64)
        self.offsets = np.array(offsets, dtype=np.int64)
        self.stack_size = depth

    def __len__(self):
        return len(self.exprs)

    @property
    def arrays(self):
        return self.ops, self.iargs, self.fargs, self.offsets

    def eval(self, point) -> np.ndarray:
        x = np.ascontiguousarray(point, dtype=np.float64)
        out = np.empty(len(self.exprs))
        kernels.eval_programs(self.ops, self.iargs, self.fargs, self.offsets, x, out)
        return out

    def eval_batch(self, points: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(points, dtype=np.float64)
        return kernels.eval_programs_batch(self.ops, self.iargs, self.fargs,
                                           self.offsets, pts)

    def eval_checked(self, point) -> np.ndarray:
        out = self.eval(point)
        if not np.all(np.isfinite(out)):
            for e, val in zip(self.exprs, out):
                if not math.isfinite(val):
                    _ev(e, point)
        return out


def _emit(e: Expr, ops, iargs, fargs) -> int:
    """Append postfix code for ``e``; return the stack depth it needs."""
    op = e.op
    if op == "const":
        ops.append(kernels.OP_CONST); iargs.append(0); fargs.append(e.value)
        return 1
    if op == "var":
        ops.append(kernels.OP_VAR); iargs.append(int(e.value)); fargs.append(0.0)
        return 1
    if len(e.args) == 2:
        d0 = _emit(e.args[0], ops, iargs, fargs)
        d1 = _emit(e.args[1], ops, iargs, fargs)
        depth = max(d0, d1 + 1)
    else:
        depth = _emit(e.args[0], ops, iargs, fargs)
    ops.append(_OPCODES[op])
    iargs.append(int(e.value) if op == "pow" else 0)
    fargs.append(0.0)
    return depth


@lru_cache(maxsize=1024)
def _compile_cached(exprs: tuple) -> ProgramSet:
    return ProgramSet(exprs)


def compile_exprs(exprs: Iterable[Expr]) -> ProgramSet:
    return _compile_cached(tuple(exprs))


# ------------------------------------------------------------ bound check

def bound_estimate(e: Expr, box: Mapping[str | int, tuple], grid: int | Mapping = 101,
                   base_point: Sequence[float] | None = None, dim: int | None = None,
                   max_evals: int = 10_000_000):
    """Grid estimate of sup |e| over a box.

    ``box`` maps coordinates to closed intervals; coordinates not in the box
    are held at ``base_point`` (zero by default).  The result is a lower
    bound on the true supremum.  Returns ``(sup_estimate, argmax_point)``.
    """
    keys = [var_index(k) if isinstance(k, str) else int(k) for k in box]
    if dim is None:
        dim = max(keys + list(free_vars(e)) + [1]) + 1
    counts = []
    for k, key in zip(keys, box):
        g = grid[key] if isinstance(grid, Mapping) else grid
        if int(g) < 2:
            raise ValueError("grid needs at least 2 points per axis")
        lo, hi = box[key]
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ValueError(f"box interval for {key!r} must be finite")
        counts.append(int(g))
    total = math.prod(counts)
    if total > max_evals:
        raise BudgetError(f"grid of {total} points exceeds the evaluation cap {max_evals}")
    axes = [np.linspace(box[key][0], box[key][1], c) for key, c in zip(box, counts)]
    base = np.zeros(dim) if base_point is None else np.asarray(base_point, dtype=float)
    pts = np.tile(base, (total, 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    for k, m in zip(keys, mesh):
        pts[:, k] = m.ravel()
    vals = np.abs(evaluate_many(e, pts))
    j = int(np.argmax(vals))
    return float(vals[j]), pts[j].copy()


# ------------------------------------------------------- polynomial view

def to_poly(e: Expr, n: int | None = None):
    """Expand ``e`` as a polynomial in x1..xn with u-only coefficients.

    Returns ``{exponent tuple: coefficient Expr}`` or ``None`` when ``e``
    depends on v or is not polynomial in x.
    """
    if n is None:
        n = max([i - 1 for i in free_vars(e) if i >= 2] + [1])
    if 1 in free_vars(e):
        return None
    return _poly(e, n)


def _poly_clean(p: dict) -> dict:
    return {m: c for m, c in p.items() if not is_zero(c)}


def _has_x(e: Expr) -> bool:
    return any(i >= 2 for i in free_vars(e))


def _poly(e: Expr, n: int):
    zero_mono = (0,) * n
    if not _has_x(e):
        return _poly_clean({zero_mono: e})
    op = e.op
    if op == "var":
        mono = [0] * n
        mono[int(e.value) - 2] = 1
        return {tuple(mono): ONE}
    if op == "add":
        a, b = _poly(e.args[0], n), _poly(e.args[1], n)
        if a is None or b is None:
            return None
        out = dict(a)
        for m, c in b.items():
            out[m] = add(out[m], c) if m in out else c
        return _poly_clean(out)
    if op == "neg":
        a = _poly(e.args[0], n)
        return None if a is None else {m: neg(c) for m, c in a.items()}
    if op == "mul":
        a, b = _poly(e.args[0], n), _poly(e.args[1], n)
        if a is None or b is None:
            return None
        return _poly_mul(a, b)
    if op == "div":
        num, den = e.args
        if _has_x(den):
            return None
        a = _poly(num, n)
        return None if a is None else _poly_clean({m: div(c, den) for m, c in a.items()})
    if op == "pow":
        k = int(e.value)
        if k < 0:
            return None
        a = _poly(e.args[0], n)
        if a is None:
            return None
        out = {zero_mono: ONE}
        for _ in range(k):
            out = _poly_mul(out, a)
        return out
    return None


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for (ma, ca), (mb, cb) in itertools.product(a.items(), b.items()):
        m = tuple(x + y for x, y in zip(ma, mb))
        c = mul(ca, cb)
        out[m] = add(out[m], c) if m in out else c
    return _poly_clean(out)


def poly_degree_in_x(e: Expr, n: int | None = None) -> int | None:
    """Total degree in x of a polynomial with u-only coefficients, else None."""
    p = to_poly(e, n)
    if p is None:
        return None
    return max((sum(m) for m in p), default=0)
