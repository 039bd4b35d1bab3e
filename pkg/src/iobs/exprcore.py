"""Expression ASTs for user-supplied nonlinearities.

Provides parsing, evaluation (scalar or numpy-batched), symbolic
differentiation, and natural-interval-extension range bounding. The grammar:

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' integer)?
    base   := number | ident | func '(' expr ')' | '(' expr ')' | '-' base
    func   in {sin, cos, exp}

Identifiers resolve to declared variables (by slot) or named scalar
parameters, which are folded into constants at parse time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .matops import IntervalVector

_FUNCS = ("sin", "cos", "exp")


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class EvalError(ExprError):
    pass


class UnboundedRangeError(ExprError):
    pass


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=False)
class Var(Expr):
    slot: int
    name: str

    # equality by slot: the display name plays no structural role
    def __eq__(self, other):
        return isinstance(other, Var) and other.slot == self.slot

    def __hash__(self):
        return hash(("var", self.slot))


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # 'neg' | 'sin' | 'cos' | 'exp'
    a: Expr


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # 'add' | 'sub' | 'mul' | 'div'
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    k: int


ZERO = Const(0.0)
ONE = Const(1.0)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        ch = self.peek()
        self.pos += 1
        return ch

    def number(self) -> float:
        self._skip_ws()
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isdigit() or t[self.pos] == "."):
            self.pos += 1
        if self.pos < len(t) and t[self.pos] in "eE":
            look = self.pos + 1
            if look < len(t) and t[look] in "+-":
                look += 1
            if look < len(t) and t[look].isdigit():
                self.pos = look
                while self.pos < len(t) and t[self.pos].isdigit():
                    self.pos += 1
        try:
            return float(t[start:self.pos])
        except ValueError:
            raise ParseError(f"bad number {t[start:self.pos]!r}", start) from None

    def ident(self) -> str:
        self._skip_ws()
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isalnum() or t[self.pos] == "_"):
            self.pos += 1
        return t[start:self.pos]


class _Parser:
    def __init__(self, text: str, variables: dict[str, int], params: dict[str, float]):
        self.tk = _Tokenizer(text)
        self.variables = variables
        self.params = params

    def parse(self) -> Expr:
        e = self.expr()
        if self.tk.peek():
            raise ParseError(f"unexpected {self.tk.peek()!r}", self.tk.pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tk.peek() in ("+", "-"):
            op = self.tk.take()
            rhs = self.term()
            e = Bin("add" if op == "+" else "sub", e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.tk.peek() in ("*", "/"):
            op = self.tk.take()
            rhs = self.factor()
            if op == "/" and is_zero(rhs):
                raise ParseError("division by constant zero", self.tk.pos)
            e = Bin("mul" if op == "*" else "div", e, rhs)
        return e

    def factor(self) -> Expr:
        e = self.base()
        if self.tk.peek() == "^":
            self.tk.take()
            pos = self.tk.pos
            if not (self.tk.peek().isdigit()):
                raise ParseError("exponent must be a nonnegative integer", pos)
            k = self.tk.number()
            if k != int(k) or k < 0:
                raise ParseError("exponent must be a nonnegative integer", pos)
            e = Pow(e, int(k))
        return e

    def base(self) -> Expr:
        ch = self.tk.peek()
        if not ch:
            raise ParseError("unexpected end of input", self.tk.pos)
        if ch == "-":
            self.tk.take()
            inner = self.base()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Unary("neg", inner)
        if ch == "(":
            self.tk.take()
            e = self.expr()
            if self.tk.peek() != ")":
                raise ParseError("expected ')'", self.tk.pos)
            self.tk.take()
            return e
        if ch.isdigit() or ch == ".":
            return Const(self.tk.number())
        if ch.isalpha() or ch == "_":
            pos = self.tk.pos
            name = self.tk.ident()
            if name in _FUNCS:
                if self.tk.peek() != "(":
                    raise ParseError(f"{name} requires parenthesized argument", self.tk.pos)
                self.tk.take()
                arg = self.expr()
                if self.tk.peek() != ")":
                    raise ParseError("expected ')'", self.tk.pos)
                self.tk.take()
                return Unary(name, arg)
            if name in self.variables:
                return Var(self.variables[name], name)
            if name in self.params:
                return Const(float(self.params[name]))
            raise ParseError(f"unknown identifier {name!r}", pos)
        raise ParseError(f"unexpected character {ch!r}", self.tk.pos)


def parse(text: str, variables: dict[str, int], params: dict[str, float] | None = None) -> Expr:
    """Parse an expression; identifiers resolve via `variables` (name -> slot)
    or `params` (name -> value, folded to constants)."""
    return _Parser(text, variables, params or {}).parse()


# ---------------------------------------------------------------------------
# Printing (round-trips through parse)
# ---------------------------------------------------------------------------

def to_string(e: Expr) -> str:
    def prec(node: Expr) -> int:
        if isinstance(node, Bin):
            return 1 if node.op in ("add", "sub") else 2
        if isinstance(node, Unary) and node.op == "neg":
            return 3
        if isinstance(node, Pow):
            return 4
        return 5

    def render(node: Expr, parent_prec: int) -> str:
        if isinstance(node, Const):
            s = repr(node.value)
            out = s
            if node.value < 0:
                out = f"({s})"
            return out
        if isinstance(node, Var):
            return node.name
        if isinstance(node, Unary):
            if node.op == "neg":
                # '^' binds to the whole '-base' in the grammar, so a negated
                # power needs explicit parentheses to survive a round-trip
                s = f"-{render(node.a, 5)}"
                return f"({s})" if parent_prec > 3 else s
            return f"{node.op}({render(node.a, 0)})"
        if isinstance(node, Pow):
            s = f"{render(node.base, 5)}^{node.k}"
            return f"({s})" if parent_prec > 4 else s
        assert isinstance(node, Bin)
        sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[node.op]
        p = prec(node)
        left = render(node.a, p)
        # right side gets a bumped precedence so a-(b-c) keeps its parens
        right = render(node.b, p + 1)
        s = f"{left} {sym} {right}"
        return f"({s})" if parent_prec > p else s

    return render(e, 0)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _eval(e: Expr, z: np.ndarray):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return z[e.slot]
    if isinstance(e, Unary):
        a = _eval(e.a, z)
        if e.op == "neg":
            return -a
        if e.op == "sin":
            return np.sin(a)
        if e.op == "cos":
            return np.cos(a)
        return np.exp(a)
    if isinstance(e, Pow):
        return _eval(e.base, z) ** e.k
    a = _eval(e.a, z)
    b = _eval(e.b, z)
    if e.op == "add":
        return a + b
    if e.op == "sub":
        return a - b
    if e.op == "mul":
        return a * b
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a / b
    if not np.all(np.isfinite(out)):
        raise EvalError(f"division by zero evaluating {to_string(e)}")
    return out


def evaluate(e: Expr, point) -> float | np.ndarray:
    """Evaluate at a point; `point` is the stacked variable vector, optionally
    with a trailing batch axis (shape (nvars,) or (nvars, batch))."""
    z = np.asarray(point, dtype=float)
    out = _eval(e, z)
    if np.isscalar(out) or (isinstance(out, np.ndarray) and out.ndim == 0):
        return float(out)
    return out


def compile_expr(e: Expr):
    """Compile to a closure f(z) over the stacked variable array (batched ok)."""
    if isinstance(e, Const):
        v = e.value
        return lambda z: v
    if isinstance(e, Var):
        s = e.slot
        return lambda z: z[s]
    if isinstance(e, Unary):
        fa = compile_expr(e.a)
        if e.op == "neg":
            return lambda z: -fa(z)
        fn = {"sin": np.sin, "cos": np.cos, "exp": np.exp}[e.op]
        return lambda z: fn(fa(z))
    if isinstance(e, Pow):
        fb = compile_expr(e.base)
        k = e.k
        return lambda z: fb(z) ** k
    fa = compile_expr(e.a)
    fb = compile_expr(e.b)
    if e.op == "add":
        return lambda z: fa(z) + fb(z)
    if e.op == "sub":
        return lambda z: fa(z) - fb(z)
    if e.op == "mul":
        return lambda z: fa(z) * fb(z)

    def _div(z):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = fa(z) / fb(z)
        if not np.all(np.isfinite(out)):
            raise EvalError("division by zero in compiled expression")
        return out

    return _div


# ---------------------------------------------------------------------------
# Simplifying constructors and symbolic differentiation
# ---------------------------------------------------------------------------

def add(a: Expr, b: Expr) -> Expr:
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Bin("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if is_zero(b):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if is_zero(a):
        return neg(b)
    if a == b:
        return ZERO
    return Bin("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if is_zero(a) or is_zero(b):
        return ZERO
    if isinstance(a, Const) and a.value == 1.0:
        return b
    if isinstance(b, Const) and b.value == 1.0:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Bin("mul", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    return Unary("neg", a)


def differentiate(e: Expr, slot: int) -> Expr:
    """Symbolic partial derivative with respect to the variable in `slot`.

    Products are kept unexpanded so interval extensions stay tight.
    """
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.slot == slot else ZERO
    if isinstance(e, Unary):
        da = differentiate(e.a, slot)
        if e.op == "neg":
            return neg(da)
        if is_zero(da):
            return ZERO
        if e.op == "sin":
            return mul(Unary("cos", e.a), da)
        if e.op == "cos":
            return neg(mul(Unary("sin", e.a), da))
        return mul(Unary("exp", e.a), da)
    if isinstance(e, Pow):
        if e.k == 0:
            return ZERO
        db = differentiate(e.base, slot)
        if is_zero(db):
            return ZERO
        if e.k == 1:
            return db
        return mul(mul(Const(float(e.k)), Pow(e.base, e.k - 1)), db)
    da = differentiate(e.a, slot)
    db = differentiate(e.b, slot)
    if e.op == "add":
        return add(da, db)
    if e.op == "sub":
        return sub(da, db)
    if e.op == "mul":
        return add(mul(da, e.b), mul(e.a, db))
    # d(a/b) = da/b - a*db/b^2
    term1 = Bin("div", da, e.b) if not is_zero(da) else ZERO
    term2 = Bin("div", mul(e.a, db), Pow(e.b, 2)) if not is_zero(db) else ZERO
    return sub(term1, term2)


def substitute(e: Expr, mapping: dict[int, Expr]) -> Expr:
    """Replace variables by expressions, slot -> Expr."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.slot, e)
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.a, mapping))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), e.k)
    return Bin(e.op, substitute(e.a, mapping), substitute(e.b, mapping))


def free_slots(e: Expr) -> set[int]:
    if isinstance(e, Const):
        return set()
    if isinstance(e, Var):
        return {e.slot}
    if isinstance(e, Unary):
        return free_slots(e.a)
    if isinstance(e, Pow):
        return free_slots(e.base)
    return free_slots(e.a) | free_slots(e.b)


# ---------------------------------------------------------------------------
# Natural interval extension
# ---------------------------------------------------------------------------

_TWO_PI = 2.0 * math.pi


def _iv_add(a, b):
    return (a[0] + b[0], a[1] + b[1])


def _iv_sub(a, b):
    return (a[0] - b[1], a[1] - b[0])


def _iv_mul(a, b):
    c = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return (min(c), max(c))


def _iv_div(a, b):
    if b[0] <= 0.0 <= b[1]:
        raise UnboundedRangeError("division by an interval containing zero")
    inv = (1.0 / b[1], 1.0 / b[0])
    return _iv_mul(a, inv)


def _iv_pow(a, k: int):
    if k == 0:
        return (1.0, 1.0)
    lo, hi = a[0] ** k, a[1] ** k
    if k % 2 == 1:
        return (lo, hi)
    m = max(lo, hi)
    if a[0] <= 0.0 <= a[1]:
        return (0.0, m)
    return (min(lo, hi), m)


def _iv_trig(a, fn):
    """Period-aware min/max of sin or cos over [a0, a1]."""
    a0, a1 = a
    if a1 - a0 >= _TWO_PI:
        return (-1.0, 1.0)
    vals = [fn(a0), fn(a1)]
    # critical points of sin: pi/2 + k*pi; of cos: k*pi
    shift = math.pi / 2.0 if fn is math.sin else 0.0
    k0 = math.ceil((a0 - shift) / math.pi)
    k1 = math.floor((a1 - shift) / math.pi)
    for k in range(k0, k1 + 1):
        vals.append(fn(shift + k * math.pi))
    return (max(-1.0, min(vals)), min(1.0, max(vals)))


def _iv(e: Expr, box: IntervalVector):
    if isinstance(e, Const):
        return (e.value, e.value)
    if isinstance(e, Var):
        return (box.lo[e.slot], box.hi[e.slot])
    if isinstance(e, Unary):
        a = _iv(e.a, box)
        if e.op == "neg":
            return (-a[1], -a[0])
        if e.op == "sin":
            return _iv_trig(a, math.sin)
        if e.op == "cos":
            return _iv_trig(a, math.cos)
        return (math.exp(a[0]), math.exp(a[1]))
    if isinstance(e, Pow):
        return _iv_pow(_iv(e.base, box), e.k)
    a = _iv(e.a, box)
    b = _iv(e.b, box)
    if e.op == "add":
        return _iv_add(a, b)
    if e.op == "sub":
        return _iv_sub(a, b)
    if e.op == "mul":
        return _iv_mul(a, b)
    return _iv_div(a, b)


def interval_range(e: Expr, box: IntervalVector) -> tuple[float, float]:
    """Sound enclosure of e over the box (natural interval extension)."""
    return _iv(e, box)


@dataclass(frozen=True)
class JacobianBounds:
    """Entrywise interval enclosure [lo, hi] of a Jacobian over a box."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_2d(np.asarray(self.hi, dtype=float))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape:
            raise ExprError("Jacobian bound shape mismatch")
        if lo.size and (not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi))):
            raise ExprError("Jacobian bounds must be finite")
        if np.any(lo > hi + 1e-15):
            raise ExprError("Jacobian bounds require lo <= hi")

    @property
    def shape(self):
        return self.lo.shape


def jacobian_bounds(exprs, box: IntervalVector, n_cols: int | None = None) -> JacobianBounds:
    """Entrywise sound enclosure of the Jacobian of a vector of expressions."""
    n_cols = box.n if n_cols is None else n_cols
    p = len(exprs)
    lo = np.zeros((p, n_cols))
    hi = np.zeros((p, n_cols))
    for i, e in enumerate(exprs):
        slots = free_slots(e)
        for j in range(n_cols):
            if j not in slots:
                continue
            d = differentiate(e, j)
            lo[i, j], hi[i, j] = interval_range(d, box)
    return JacobianBounds(lo, hi)
