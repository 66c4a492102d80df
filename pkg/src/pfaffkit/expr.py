"""Expression kernel: immutable trees over named real coordinates.

Constants are exact ``Fraction`` values whenever the source literal is
rational; floats only enter through float inputs or evaluation.  Division is
stored as a product with a ``Pow(., -1)`` factor.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

FUNCTIONS = (
    "exp", "log", "sqrt", "sin", "cos", "tan", "sinh", "cosh", "tanh",
    "asin", "acos", "atan", "atanh",
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*\Z")


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(ExprError):
    """Domain violation or unbound symbol during evaluation."""


# --------------------------------------------------------------------------
# nodes


class Expr:
    __slots__ = ()

    def __add__(self, other):
        return Add((self, as_expr(other)))

    def __radd__(self, other):
        return Add((as_expr(other), self))

    def __sub__(self, other):
        return Add((self, Mul((Const(-1), as_expr(other)))))

    def __rsub__(self, other):
        return Add((as_expr(other), Mul((Const(-1), self))))

    def __mul__(self, other):
        return Mul((self, as_expr(other)))

    def __rmul__(self, other):
        return Mul((as_expr(other), self))

    def __truediv__(self, other):
        return Mul((self, Pow(as_expr(other), Fraction(-1))))

    def __rtruediv__(self, other):
        return Mul((as_expr(other), Pow(self, Fraction(-1))))

    def __neg__(self):
        return Mul((Const(-1), self))

    def __pow__(self, k):
        return Pow(self, _exact(k))

    def __str__(self):
        return render(self)


def _exact(v) -> Fraction:
    if isinstance(v, Const):
        v = v.value
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**12)
    return Fraction(v)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: Fraction | float
    _h: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        v = self.value
        if isinstance(v, bool):
            raise TypeError("boolean is not a constant")
        if isinstance(v, int):
            object.__setattr__(self, "value", Fraction(v))
        elif isinstance(v, float) and not math.isfinite(v):
            raise ExprError(f"non-finite constant {v}")
        object.__setattr__(self, "_h", hash(("c", self.value)))

    def __hash__(self):
        return self._h

    def __eq__(self, other):
        # Fraction(1) == 1.0 in Python; keep exact and float constants apart
        return (isinstance(other, Const) and type(self.value) is type(other.value)
                and self.value == other.value)


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str
    _h: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.name, str) or not _IDENT.match(self.name):
            raise ExprError(f"invalid identifier {self.name!r}")
        object.__setattr__(self, "_h", hash(("v", self.name)))

    def __hash__(self):
        return self._h


@dataclass(frozen=True, slots=True)
class Add(Expr):
    terms: tuple
    _h: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "_h", hash(("+",) + self.terms))

    def __hash__(self):
        return self._h


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    factors: tuple
    _h: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "_h", hash(("*",) + self.factors))

    def __hash__(self):
        return self._h


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exp: Fraction
    _h: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "exp", Fraction(self.exp))
        object.__setattr__(self, "_h", hash(("^", self.base, self.exp)))

    def __hash__(self):
        return self._h


@dataclass(frozen=True, slots=True)
class Apply(Expr):
    func: str
    arg: Expr
    _h: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.func not in FUNCTIONS:
            raise ExprError(f"unknown function {self.func!r}")
        object.__setattr__(self, "_h", hash(("f", self.func, self.arg)))

    def __hash__(self):
        return self._h


ZERO = Const(0)
ONE = Const(1)


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction, float)) and not isinstance(v, bool):
        return Const(v)
    if isinstance(v, str):
        return parse(v)
    raise TypeError(f"cannot convert {type(v).__name__} to Expr")


def const_value(e: Expr):
    """Numeric value if ``e`` is a constant after simplification, else None."""
    e = simplify(e)
    return e.value if isinstance(e, Const) else None


def is_zero(e: Expr) -> bool:
    e = simplify(e)
    return isinstance(e, Const) and e.value == 0


@lru_cache(maxsize=1 << 16)
def free_symbols(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Const):
        return frozenset()
    return frozenset().union(*(free_symbols(c) for c in children(e)))


def children(e: Expr) -> tuple:
    if isinstance(e, Add):
        return e.terms
    if isinstance(e, Mul):
        return e.factors
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, Apply):
        return (e.arg,)
    return ()


# --------------------------------------------------------------------------
# parsing (Pratt)

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>\*\*|[-+*/^(),]))"
)

_INFIX = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30, "**": 30}
_PREFIX_BP = 25


def _tokenize(text: str):
    pos, out = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            col = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[col]!r}", col)
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), start))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", pos)

    def expression(self, rbp=0) -> Expr:
        left = self.prefix()
        while True:
            kind, val, pos = self.peek()
            if kind != "op" or val not in _INFIX or _INFIX[val] <= rbp:
                break
            self.take()
            bp = _INFIX[val]
            if val in ("^", "**"):
                right = self.expression(bp - 1)  # right associative
                k = simplify(right)
                if not isinstance(k, Const):
                    raise ParseError("exponent must be a constant", pos)
                left = Pow(left, _exact(k.value))
            else:
                right = self.expression(bp)
                if val == "+":
                    left = Add((left, right))
                elif val == "-":
                    left = Add((left, Mul((Const(-1), right))))
                elif val == "*":
                    left = Mul((left, right))
                else:
                    left = Mul((left, Pow(right, Fraction(-1))))
        return left

    def prefix(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(Fraction(val))
        if kind == "name":
            if self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", pos)
                self.take()
                arg = self.expression()
                self.expect(")")
                return Apply(val, arg)
            if val in FUNCTIONS:
                raise ParseError(f"function {val!r} needs an argument", pos)
            return Var(val)
        if kind == "op" and val == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        if kind == "op" and val in "+-":
            operand = self.expression(_PREFIX_BP)
            return operand if val == "+" else Mul((Const(-1), operand))
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", pos)


def parse(text: str) -> Expr:
    """Parse infix text into a simplified expression tree."""
    if not isinstance(text, str):
        raise ParseError("expression must be a string", 0)
    p = _Parser(text)
    e = p.expression()
    kind, val, pos = p.peek()
    if kind != "end":
        raise ParseError(f"unexpected {val!r}", pos)
    return simplify(e)


# --------------------------------------------------------------------------
# simplification


def _split_coeff(e: Expr):
    """Return (coefficient, rest) with rest None for pure constants."""
    if isinstance(e, Const):
        return e.value, None
    if isinstance(e, Mul) and isinstance(e.factors[0], Const):
        rest = e.factors[1:]
        return e.factors[0].value, rest[0] if len(rest) == 1 else Mul(rest)
    return Fraction(1), e


@lru_cache(maxsize=1 << 15)
def sort_key(e: Expr):
    return render(e)


def _scale(c, rest: Expr) -> Expr:
    if c == 1 and not isinstance(c, float):
        return rest
    if isinstance(rest, Mul):
        return Mul((Const(c),) + rest.factors)
    return Mul((Const(c), rest))


def _add_const(a, b):
    return a + b


def _simp_add(terms: Iterable[Expr]) -> Expr:
    flat = []
    for t in terms:
        if isinstance(t, Add):
            flat.extend(t.terms)
            continue
        c, rest = _split_coeff(t)
        if isinstance(rest, Add):
            # numeric multiples of sums are spread out so that terms can cancel
            for u in rest.terms:
                cu, ru = _split_coeff(u)
                flat.append(Const(c * cu) if ru is None else _scale(c * cu, ru))
        else:
            flat.append(t)
    const = Fraction(0)
    coeffs: dict = {}
    for t in flat:
        c, rest = _split_coeff(t)
        if rest is None:
            const = const + c
        else:
            coeffs[rest] = coeffs.get(rest, Fraction(0)) + c
    items = sorted(((r, c) for r, c in coeffs.items() if c != 0),
                   key=lambda rc: sort_key(rc[0]))
    out = [_scale(c, r) for r, c in items]
    if const != 0:
        out.append(Const(const))
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    return Add(tuple(out))


def _simp_mul(factors: Iterable[Expr]) -> Expr:
    coeff = Fraction(1)
    powers: dict = {}
    exp_args = []
    stack = list(factors)
    while stack:
        f = stack.pop()
        if isinstance(f, Mul):
            stack.extend(f.factors)
        elif isinstance(f, Const):
            coeff = coeff * f.value
        elif isinstance(f, Apply) and f.func == "exp":
            exp_args.append(f.arg)
        elif isinstance(f, Pow) and not isinstance(f.base, Const):
            powers[f.base] = powers.get(f.base, Fraction(0)) + f.exp
        else:
            powers[f] = powers.get(f, Fraction(0)) + 1
    if coeff == 0:
        return ZERO
    out = []
    if exp_args:
        arg = _simp_add(exp_args)
        ex = _simp_apply("exp", arg)
        if isinstance(ex, Const):
            coeff = coeff * ex.value
        else:
            out.append(ex)
    for base, k in powers.items():
        if k == 0:
            continue
        p = _simp_pow(base, k)
        if isinstance(p, Const):
            coeff = coeff * p.value
        elif isinstance(p, Mul):
            for g in p.factors:
                if isinstance(g, Const):
                    coeff = coeff * g.value
                else:
                    out.append(g)
        else:
            out.append(p)
    if coeff == 0:
        return ZERO
    out.sort(key=sort_key)
    if not out:
        return Const(coeff)
    if coeff == 1 and not isinstance(coeff, float) and len(out) == 1:
        return out[0]
    if coeff == 1 and not isinstance(coeff, float):
        return Mul(tuple(out))
    return Mul((Const(coeff),) + tuple(out))


def _exact_root(v: Fraction, k: Fraction):
    """v**k as an exact Fraction when it exists, else None."""
    num, den = k.numerator, k.denominator
    if v < 0 and den % 2 == 0:
        return None
    sign = -1 if v < 0 else 1
    a = abs(v)
    rn = _int_root(a.numerator, den)
    rd = _int_root(a.denominator, den)
    if rn is None or rd is None:
        return None
    base = Fraction(rn, rd) * (sign if den % 2 else 1)
    if base == 0 and num < 0:
        return None
    return base ** num


def _int_root(n: int, r: int):
    if n == 0:
        return 0
    x = round(n ** (1.0 / r))
    for cand in (x - 1, x, x + 1):
        if cand >= 0 and cand ** r == n:
            return cand
    return None


def _simp_pow(b: Expr, k: Fraction) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return b
    if isinstance(b, Const):
        v = b.value
        if isinstance(v, float):
            if k.denominator == 1 and not (v == 0 and k < 0):
                return Const(v ** int(k))
            if v > 0:
                return Const(v ** float(k))
            return Pow(b, k)
        if v == 1:
            return ONE
        if k.denominator == 1:
            if v == 0 and k < 0:
                return Pow(b, k)
            return Const(v ** int(k))
        r = _exact_root(v, k)
        return Const(r) if r is not None else Pow(b, k)
    if isinstance(b, Pow):
        j = b.exp
        if k.denominator == 1 or j.numerator % 2 == 1:
            return _simp_pow(b.base, j * k)
        return Pow(b, k)
    if isinstance(b, Mul):
        if k.denominator == 1:
            return _simp_mul([_simp_pow(f, k) for f in b.factors])
        c, rest = _split_coeff(b)
        if c > 0 and c != 1 and rest is not None:
            return _simp_mul([_simp_pow(Const(c), k), _simp_pow(rest, k)])
        return Pow(b, k)
    if isinstance(b, Apply) and b.func == "exp":
        return _simp_apply("exp", _simp_mul([Const(k), b.arg]))
    return Pow(b, k)


_FLOAT_FUNCS = {
    "exp": math.exp, "log": math.log, "sqrt": math.sqrt, "sin": math.sin,
    "cos": math.cos, "tan": math.tan, "sinh": math.sinh, "cosh": math.cosh,
    "tanh": math.tanh, "asin": math.asin, "acos": math.acos,
    "atan": math.atan, "atanh": math.atanh,
}
_AT_ZERO = {"sin": 0, "tan": 0, "sinh": 0, "tanh": 0, "asin": 0, "atan": 0,
            "atanh": 0, "cos": 1, "cosh": 1, "exp": 1}


def _simp_apply(name: str, a: Expr) -> Expr:
    if name == "sqrt":
        return _simp_pow(a, Fraction(1, 2))
    if isinstance(a, Const):
        v = a.value
        if v == 0 and name in _AT_ZERO:
            return Const(_AT_ZERO[name])
        if name == "log" and v == 1:
            return ZERO
        if name == "acos" and v == 1:
            return ZERO
        if isinstance(v, float):
            try:
                return Const(float(_FLOAT_FUNCS[name](v)))
            except (ValueError, OverflowError, ExprError):
                pass
        return Apply(name, a)
    if name == "exp" and isinstance(a, Apply) and a.func == "log":
        return a.arg
    if name == "log" and isinstance(a, Apply) and a.func == "exp":
        return a.arg
    return Apply(name, a)


@lru_cache(maxsize=1 << 16)
def simplify(e: Expr) -> Expr:
    """Bottom-up rewrite: fold constants, flatten, collect, cancel inverses."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Add):
        return _simp_add([simplify(t) for t in e.terms])
    if isinstance(e, Mul):
        return _simp_mul([simplify(f) for f in e.factors])
    if isinstance(e, Pow):
        return _simp_pow(simplify(e.base), e.exp)
    if isinstance(e, Apply):
        return _simp_apply(e.func, simplify(e.arg))
    raise TypeError(f"not an expression: {e!r}")


@lru_cache(maxsize=1 << 14)
def expand(e: Expr) -> Expr:
    """Distribute products over sums (and small integer powers of sums)."""
    e = simplify(e)
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Add):
        return simplify(Add(tuple(expand(t) for t in e.terms)))
    if isinstance(e, Apply):
        return simplify(Apply(e.func, expand(e.arg)))
    if isinstance(e, Pow):
        b = expand(e.base)
        k = e.exp
        if isinstance(b, Add) and k.denominator == 1 and 1 < k <= 6:
            return expand(Mul((b,) * int(k)))
        return simplify(Pow(b, k))
    terms = [ONE]
    for f in e.factors:
        f = expand(f)
        parts = f.terms if isinstance(f, Add) else (f,)
        terms = [simplify(Mul((t, p))) for t in terms for p in parts]
    return simplify(Add(tuple(terms)))


# --------------------------------------------------------------------------
# calculus and substitution


def _dfunc(name: str, u: Expr) -> Expr:
    """Derivative of the named function, evaluated at u."""
    half = Fraction(1, 2)
    if name == "exp":
        return Apply("exp", u)
    if name == "log":
        return Pow(u, Fraction(-1))
    if name == "sin":
        return Apply("cos", u)
    if name == "cos":
        return Mul((Const(-1), Apply("sin", u)))
    if name == "tan":
        return Pow(Apply("cos", u), Fraction(-2))
    if name == "sinh":
        return Apply("cosh", u)
    if name == "cosh":
        return Apply("sinh", u)
    if name == "tanh":
        return Pow(Apply("cosh", u), Fraction(-2))
    one_minus = Add((ONE, Mul((Const(-1), Pow(u, Fraction(2))))))
    if name == "asin":
        return Pow(one_minus, -half)
    if name == "acos":
        return Mul((Const(-1), Pow(one_minus, -half)))
    if name == "atan":
        return Pow(Add((ONE, Pow(u, Fraction(2)))), Fraction(-1))
    if name == "atanh":
        return Pow(one_minus, Fraction(-1))
    raise ExprError(f"no derivative rule for {name}")


@lru_cache(maxsize=1 << 16)
def diff(e: Expr, x: str) -> Expr:
    """Exact partial derivative with respect to symbol ``x``."""
    if x not in free_symbols(e):
        return ZERO
    if isinstance(e, Var):
        return ONE
    if isinstance(e, Add):
        return simplify(Add(tuple(diff(t, x) for t in e.terms)))
    if isinstance(e, Mul):
        fs = e.factors
        terms = []
        for i, f in enumerate(fs):
            df = diff(f, x)
            if df == ZERO:
                continue
            terms.append(Mul(fs[:i] + (df,) + fs[i + 1:]))
        return simplify(Add(tuple(terms)))
    if isinstance(e, Pow):
        return simplify(Mul((Const(e.exp), Pow(e.base, e.exp - 1), diff(e.base, x))))
    if isinstance(e, Apply):
        u = e.arg
        if e.func == "sqrt":
            return diff(Pow(u, Fraction(1, 2)), x)
        return simplify(Mul((_dfunc(e.func, u), diff(u, x))))
    raise TypeError(f"not an expression: {e!r}")


def gradient(e: Expr, coords: Sequence[str]) -> tuple:
    return tuple(diff(e, c) for c in coords)


def substitute(e: Expr, bindings: Mapping[str, Expr | float]) -> Expr:
    """Simultaneous substitution of symbols, followed by simplify."""
    if not bindings:
        return e
    b = {k: as_expr(v) for k, v in bindings.items()}
    return simplify(_subst(e, tuple(sorted(b.items(), key=lambda kv: kv[0]))))


@lru_cache(maxsize=1 << 14)
def _subst(e: Expr, items: tuple) -> Expr:
    names = dict(items)
    if not (free_symbols(e) & names.keys()):
        return e
    if isinstance(e, Var):
        return names[e.name]
    if isinstance(e, Add):
        return Add(tuple(_subst(t, items) for t in e.terms))
    if isinstance(e, Mul):
        return Mul(tuple(_subst(f, items) for f in e.factors))
    if isinstance(e, Pow):
        return Pow(_subst(e.base, items), e.exp)
    return Apply(e.func, _subst(e.arg, items))


# --------------------------------------------------------------------------
# rendering

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _fmt_const(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v.denominator == 1:
        return str(v.numerator)
    return f"{v.numerator}/{v.denominator}"


def _prec(e: Expr) -> int:
    if isinstance(e, Add):
        return _PREC_ADD
    if isinstance(e, Mul):
        c, _ = _split_coeff(e)
        return _PREC_NEG if c < 0 else _PREC_MUL
    if isinstance(e, Const):
        v = e.value
        if v < 0:
            return _PREC_NEG
        if isinstance(v, Fraction) and v.denominator != 1:
            return _PREC_MUL
        if isinstance(v, float) and ("e" in repr(v) or "." in repr(v)):
            return _PREC_ATOM
        return _PREC_ATOM
    if isinstance(e, Pow):
        if e.exp < 0:
            return _PREC_MUL
        return _PREC_ATOM if e.exp == Fraction(1, 2) else _PREC_POW
    return _PREC_ATOM


def _wrap(e: Expr, min_prec: int) -> str:
    s = render(e)
    return f"({s})" if _prec(e) < min_prec else s


def _render_mul_body(coeff, factors) -> str:
    """Render |coeff| * factors as a/b (sign handled by caller)."""
    num_parts, den_parts = [], []
    if isinstance(coeff, float):
        if coeff != 1.0:
            num_parts.append(repr(coeff))
    else:
        if coeff.numerator != 1:
            num_parts.append(str(coeff.numerator))
        if coeff.denominator != 1:
            den_parts.append(str(coeff.denominator))
    for f in factors:
        if isinstance(f, Pow) and f.exp < 0:
            inv = Pow(f.base, -f.exp) if f.exp != -1 else f.base
            den_parts.append(_wrap(inv, _PREC_POW))
        else:
            num_parts.append(_wrap(f, _PREC_POW if isinstance(f, Const) else _PREC_MUL + 1))
    num = "*".join(num_parts) if num_parts else "1"
    if not den_parts:
        return num
    den = den_parts[0] if len(den_parts) == 1 else "(" + "*".join(den_parts) + ")"
    return f"{num}/{den}"


@lru_cache(maxsize=1 << 15)
def render(e: Expr) -> str:
    """Text in the same grammar that ``parse`` accepts."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Apply):
        return f"{e.func}({render(e.arg)})"
    if isinstance(e, Pow):
        k = e.exp
        if k < 0:
            return _render_mul_body(Fraction(1), (e,))
        if k == Fraction(1, 2):
            return f"sqrt({render(e.base)})"
        base = _wrap(e.base, _PREC_ATOM)
        ks = str(k.numerator) if k.denominator == 1 else f"({k.numerator}/{k.denominator})"
        return f"{base}^{ks}"
    if isinstance(e, Mul):
        c, _ = _split_coeff(e)
        factors = e.factors[1:] if isinstance(e.factors[0], Const) else e.factors
        if c < 0:
            return "-" + _render_mul_body(-c, factors)
        return _render_mul_body(c, factors)
    if isinstance(e, Add):
        out = []
        for i, t in enumerate(e.terms):
            c, rest = _split_coeff(t)
            if i > 0 and c < 0:
                out.append(" - " + render(simplify(_neg_term(t))))
            elif i > 0:
                out.append(" + " + render(t))
            else:
                out.append(render(t))
        return "".join(out)
    raise TypeError(f"not an expression: {e!r}")


def _neg_term(t: Expr) -> Expr:
    c, rest = _split_coeff(t)
    if rest is None:
        return Const(-c)
    return _scale(-c, rest)


# --------------------------------------------------------------------------
# evaluation

_DOMAIN = {
    "log": lambda v: v > 0,
    "sqrt": lambda v: v >= 0,
    "asin": lambda v: -1 <= v <= 1,
    "acos": lambda v: -1 <= v <= 1,
    "atanh": lambda v: -1 < v < 1,
}


def evaluate(e: Expr, point: Mapping[str, float]) -> float:
    """Evaluate at a point; domain violations raise EvaluationError."""
    return float(_ev(e, point))


def _ev(e: Expr, pt) -> float:
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Var):
        try:
            return float(pt[e.name])
        except KeyError:
            raise EvaluationError(f"unbound symbol {e.name!r}") from None
    if isinstance(e, Add):
        return math.fsum(_ev(t, pt) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= _ev(f, pt)
        return out
    if isinstance(e, Pow):
        b = _ev(e.base, pt)
        k = e.exp
        if b == 0 and k < 0:
            raise EvaluationError(f"division by zero in {render(e)} at {dict(pt)}")
        if b < 0 and k.denominator != 1:
            raise EvaluationError(
                f"fractional power of negative base in {render(e)} at {dict(pt)}")
        if k == Fraction(1, 2):
            return math.sqrt(b)
        try:
            return b ** int(k) if k.denominator == 1 else b ** float(k)
        except OverflowError:
            raise EvaluationError(f"overflow in {render(e)} at {dict(pt)}") from None
    if isinstance(e, Apply):
        v = _ev(e.arg, pt)
        ok = _DOMAIN.get(e.func)
        if ok is not None and not ok(v):
            raise EvaluationError(
                f"{e.func}: argument {v!r} outside domain at {dict(pt)}")
        try:
            return _FLOAT_FUNCS[e.func](v)
        except (ValueError, OverflowError) as exc:
            raise EvaluationError(f"{e.func}: {exc} at {dict(pt)}") from None
    raise TypeError(f"not an expression: {e!r}")


# Vectorized evaluation: expressions are compiled to numpy source once.

_NP_NAMES = {"asin": "arcsin", "acos": "arccos", "atan": "arctan",
             "atanh": "arctanh"}


def _code(e: Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, Const):
        return f"({float(e.value)!r})"
    if isinstance(e, Var):
        try:
            return names[e.name]
        except KeyError:
            raise EvaluationError(f"unbound symbol {e.name!r}") from None
    if isinstance(e, Add):
        return "(" + " + ".join(_code(t, names) for t in e.terms) + ")"
    if isinstance(e, Mul):
        return "(" + "*".join(_code(f, names) for f in e.factors) + ")"
    if isinstance(e, Pow):
        b = _code(e.base, names)
        k = e.exp
        if k.denominator == 1:
            if k < 0:
                return f"_inv({b}, {-int(k)})"
            return f"({b})**{int(k)}"
        if k == Fraction(1, 2):
            return f"_np.sqrt({b})"
        return f"_rpow({b}, {float(k)!r})"
    if isinstance(e, Apply):
        fn = _NP_NAMES.get(e.func, e.func)
        return f"_np.{fn}({_code(e.arg, names)})"
    raise TypeError(f"not an expression: {e!r}")


def _inv(b, k):
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.where(b == 0, np.nan, 1.0 / np.where(b == 0, 1.0, b) ** k)


def _rpow(b, k):
    b = np.asarray(b, dtype=float)
    return np.where(b >= 0, np.power(np.abs(b), k), np.nan)


def compile_exprs(exprs: Sequence[Expr], coords: Sequence[str]) -> Callable:
    """Compile expressions to ``f(X) -> array (len(exprs), n)`` for X of shape (n, m).

    Values outside a function's domain come back as nan (never raise).
    """
    exprs = [simplify(as_expr(e)) for e in exprs]
    names = {c: f"X[:, {i}]" for i, c in enumerate(coords)}
    body = ", ".join(_code(e, names) for e in exprs) or "None"

    src = f"def _f(X):\n    return ({body},)\n"
    scope = {"_np": np, "_inv": _inv, "_rpow": _rpow}
    exec(compile(src, "<pfaffkit>", "exec"), scope)
    inner = scope["_f"]
    k = len(exprs)

    def run(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        if k == 0:
            return np.zeros((0, n))
        with np.errstate(all="ignore"):
            vals = inner(X)
        out = np.empty((k, n))
        for i, v in enumerate(vals):
            out[i] = np.broadcast_to(np.asarray(v, dtype=float), (n,))
        out[~np.isfinite(out)] = np.nan
        return out

    return run


def domain_guards(e: Expr) -> list:
    """Sub-expressions whose values must stay away from a singular value.

    Returns (kind, expr) with kind in {"nonzero", "positive", "unit"}.
    """
    out: list = []
    seen = set()

    def walk(x):
        if x in seen:
            return
        seen.add(x)
        if isinstance(x, Pow):
            if x.exp < 0:
                out.append(("nonzero", x.base))
            if x.exp.denominator != 1:
                out.append(("positive", x.base))
        elif isinstance(x, Apply):
            if x.func in ("log", "sqrt"):
                out.append(("positive", x.arg))
            elif x.func in ("atanh", "asin", "acos"):
                out.append(("unit", x.arg))
            elif x.func == "tan":
                out.append(("nonzero", Apply("cos", x.arg)))
        for c in children(x):
            walk(c)

    walk(e)
    return out


def _scode(e: Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, Const):
        return f"({float(e.value)!r})"
    if isinstance(e, Var):
        try:
            return names[e.name]
        except KeyError:
            raise EvaluationError(f"unbound symbol {e.name!r}") from None
    if isinstance(e, Add):
        return "(" + " + ".join(_scode(t, names) for t in e.terms) + ")"
    if isinstance(e, Mul):
        return "(" + "*".join(_scode(f, names) for f in e.factors) + ")"
    if isinstance(e, Pow):
        b = _scode(e.base, names)
        k = e.exp
        if k.denominator == 1:
            return f"({b})**({int(k)})"
        if k == Fraction(1, 2):
            return f"_m.sqrt({b})"
        return f"_spow({b}, {float(k)!r})"
    return f"_m.{e.func}({_scode(e.arg, names)})"


def _spow(b, k):
    if b < 0:
        raise ValueError("fractional power of a negative number")
    return b ** k


def compile_scalar(exprs: Sequence[Expr], coords: Sequence[str]) -> Callable:
    """Compile to ``f(x: sequence of floats) -> tuple``; raises EvaluationError off-domain."""
    exprs = [simplify(as_expr(e)) for e in exprs]
    names = {c: f"x[{i}]" for i, c in enumerate(coords)}
    body = ", ".join(_scode(e, names) for e in exprs)
    src = f"def _f(x):\n    return ({body}{',' if exprs else ''})\n"
    scope = {"_m": math, "_spow": _spow}
    exec(compile(src, "<pfaffkit-scalar>", "exec"), scope)
    inner = scope["_f"]

    def run(x):
        try:
            return inner(x)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise EvaluationError(f"{exc} at {dict(zip(coords, map(float, x)))}") from None

    return run
