"""Discrete-time signal temporal logic: formulas, semantics, text format.

Signals are finite d-dimensional traces sampled at integer steps 0..H.
Formulas are immutable trees built from predicates on single coordinates,
Boolean connectives and the bounded temporal operators F (eventually) and
G (always).  Quantitative semantics follow the usual max/min robustness
recursion; positive robustness implies Boolean satisfaction, negative
robustness implies violation.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Signal",
    "Formula",
    "TrueFormula",
    "Pred",
    "Not",
    "And",
    "Or",
    "Eventually",
    "Always",
    "TRUE",
    "pred",
    "horizon",
    "robustness",
    "satisfies",
    "nnf",
    "format_formula",
    "parse_formula",
    "HorizonError",
    "ParseError",
]


class HorizonError(ValueError):
    """Evaluating the formula would read past the end of the signal."""

    def __init__(self, k: int, needed: int, horizon: int):
        super().__init__(
            f"cannot evaluate at step {k}: the formula needs samples up to "
            f"step {needed}, but the signal horizon is {horizon}"
        )
        self.k = k
        self.needed = needed
        self.horizon = horizon


class ParseError(ValueError):
    """Formula text does not conform to the grammar."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class Signal:
    """A finite trace mapping steps 0..H to d-dimensional real vectors."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError("signal values must be a (steps, dims) array")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("signal needs at least one step and one dimension")
        if not np.isfinite(arr).all():
            raise ValueError("signal values must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self.values = arr

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def value(self, k: int, dim: int) -> float:
        """Coordinate `dim` (1-based) at step k."""
        return float(self.values[k, dim - 1])

    def __repr__(self):
        return f"Signal(H={self.horizon}, d={self.dim})"


class Formula:
    """Base class for formula nodes.  Instances are immutable."""

    __slots__ = ()

    def __and__(self, other: "Formula") -> "Formula":
        return And(self, other)

    def __or__(self, other: "Formula") -> "Formula":
        return Or(self, other)

    def __invert__(self) -> "Formula":
        return Not(self)

    def __str__(self):
        return format_formula(self)


@dataclass(frozen=True)
class TrueFormula(Formula):
    __slots__ = ()


@dataclass(frozen=True)
class Pred(Formula):
    """Atomic predicate x_dim >= threshold (dim is 1-based)."""

    dim: int
    threshold: float
    __slots__ = ("dim", "threshold")

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("predicate dimension is 1-based and must be >= 1")
        object.__setattr__(self, "threshold", float(self.threshold))


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula
    __slots__ = ("sub",)


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula
    __slots__ = ("left", "right")


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula
    __slots__ = ("left", "right")


def _check_interval(lo, hi):
    if not (isinstance(lo, (int, np.integer)) and isinstance(hi, (int, np.integer))):
        raise ValueError("interval bounds must be integers")
    if lo < 0 or hi < lo:
        raise ValueError(f"bad interval [{lo},{hi}]: need 0 <= lo <= hi")


@dataclass(frozen=True)
class Eventually(Formula):
    lo: int
    hi: int
    sub: Formula
    __slots__ = ("lo", "hi", "sub")

    def __post_init__(self):
        _check_interval(self.lo, self.hi)
        object.__setattr__(self, "lo", int(self.lo))
        object.__setattr__(self, "hi", int(self.hi))


@dataclass(frozen=True)
class Always(Formula):
    lo: int
    hi: int
    sub: Formula
    __slots__ = ("lo", "hi", "sub")

    def __post_init__(self):
        _check_interval(self.lo, self.hi)
        object.__setattr__(self, "lo", int(self.lo))
        object.__setattr__(self, "hi", int(self.hi))


TRUE = TrueFormula()


def pred(dim: int, op: str, threshold: float) -> Formula:
    """Build a predicate.  `op` is '>=' or '<'.

    Strict `<` predicates are represented as the negation of `>=`, so the
    robustness recursion only ever sees one predicate form.
    """
    if op == ">=":
        return Pred(dim, threshold)
    if op == "<":
        return Not(Pred(dim, threshold))
    raise ValueError(f"unsupported relation {op!r}, expected '>=' or '<'")


def horizon(phi: Formula) -> int:
    """Number of future steps the formula needs beyond its evaluation step."""
    if isinstance(phi, (TrueFormula, Pred)):
        return 0
    if isinstance(phi, Not):
        return horizon(phi.sub)
    if isinstance(phi, (And, Or)):
        return max(horizon(phi.left), horizon(phi.right))
    if isinstance(phi, (Eventually, Always)):
        return phi.hi + horizon(phi.sub)
    raise TypeError(f"not a formula: {phi!r}")


def _check_evaluable(s: Signal, phi: Formula, k: int):
    needed = k + horizon(phi)
    if k < 0 or needed > s.horizon:
        raise HorizonError(k, needed, s.horizon)


def _rob(vals: np.ndarray, phi: Formula, k: int) -> float:
    if isinstance(phi, Pred):
        return float(vals[k, phi.dim - 1]) - phi.threshold
    if isinstance(phi, TrueFormula):
        return math.inf
    if isinstance(phi, Not):
        return -_rob(vals, phi.sub, k)
    if isinstance(phi, And):
        return min(_rob(vals, phi.left, k), _rob(vals, phi.right, k))
    if isinstance(phi, Or):
        return max(_rob(vals, phi.left, k), _rob(vals, phi.right, k))
    if isinstance(phi, Eventually):
        return max(_rob(vals, phi.sub, kp) for kp in range(k + phi.lo, k + phi.hi + 1))
    if isinstance(phi, Always):
        return min(_rob(vals, phi.sub, kp) for kp in range(k + phi.lo, k + phi.hi + 1))
    raise TypeError(f"not a formula: {phi!r}")


def robustness(s: Signal, phi: Formula, k: int = 0) -> float:
    """Quantitative satisfaction degree of `phi` on `s` at step `k`."""
    _check_evaluable(s, phi, k)
    return _rob(s.values, phi, k)


def _sat(vals: np.ndarray, phi: Formula, k: int) -> bool:
    if isinstance(phi, Pred):
        return bool(vals[k, phi.dim - 1] >= phi.threshold)
    if isinstance(phi, TrueFormula):
        return True
    if isinstance(phi, Not):
        return not _sat(vals, phi.sub, k)
    if isinstance(phi, And):
        return _sat(vals, phi.left, k) and _sat(vals, phi.right, k)
    if isinstance(phi, Or):
        return _sat(vals, phi.left, k) or _sat(vals, phi.right, k)
    if isinstance(phi, Eventually):
        return any(_sat(vals, phi.sub, kp) for kp in range(k + phi.lo, k + phi.hi + 1))
    if isinstance(phi, Always):
        return all(_sat(vals, phi.sub, kp) for kp in range(k + phi.lo, k + phi.hi + 1))
    raise TypeError(f"not a formula: {phi!r}")


def satisfies(s: Signal, phi: Formula, k: int = 0) -> bool:
    """Boolean satisfaction of `phi` on `s` at step `k`.

    Predicates compare with non-strict >=, so robustness exactly zero counts
    as satisfied for a plain predicate.
    """
    _check_evaluable(s, phi, k)
    return _sat(s.values, phi, k)


def nnf(phi: Formula) -> Formula:
    """Negation normal form: negations pushed down to predicate level."""
    if isinstance(phi, (TrueFormula, Pred)):
        return phi
    if isinstance(phi, And):
        return And(nnf(phi.left), nnf(phi.right))
    if isinstance(phi, Or):
        return Or(nnf(phi.left), nnf(phi.right))
    if isinstance(phi, Eventually):
        return Eventually(phi.lo, phi.hi, nnf(phi.sub))
    if isinstance(phi, Always):
        return Always(phi.lo, phi.hi, nnf(phi.sub))
    if isinstance(phi, Not):
        sub = phi.sub
        if isinstance(sub, (Pred, TrueFormula)):
            return phi
        if isinstance(sub, Not):
            return nnf(sub.sub)
        if isinstance(sub, And):
            return Or(nnf(Not(sub.left)), nnf(Not(sub.right)))
        if isinstance(sub, Or):
            return And(nnf(Not(sub.left)), nnf(Not(sub.right)))
        if isinstance(sub, Eventually):
            return Always(sub.lo, sub.hi, nnf(Not(sub.sub)))
        if isinstance(sub, Always):
            return Eventually(sub.lo, sub.hi, nnf(Not(sub.sub)))
    raise TypeError(f"not a formula: {phi!r}")


def _fmt_float(x: float) -> str:
    # up to 6 significant digits, no trailing zeros
    return f"{x:.6g}"


def _render(phi: Formula) -> str:
    if isinstance(phi, TrueFormula):
        return "TRUE"
    if isinstance(phi, Pred):
        return f"(x{phi.dim} >= {_fmt_float(phi.threshold)})"
    if isinstance(phi, Not):
        if isinstance(phi.sub, Pred):
            return f"(x{phi.sub.dim} < {_fmt_float(phi.sub.threshold)})"
        return "!" + _render(phi.sub)
    if isinstance(phi, And):
        return f"({_render(phi.left)} & {_render(phi.right)})"
    if isinstance(phi, Or):
        return f"({_render(phi.left)} | {_render(phi.right)})"
    if isinstance(phi, Eventually):
        return f"F[{phi.lo},{phi.hi}]{_render(phi.sub)}"
    if isinstance(phi, Always):
        return f"G[{phi.lo},{phi.hi}]{_render(phi.sub)}"
    raise TypeError(f"not a formula: {phi!r}")


def format_formula(phi: Formula) -> str:
    """Canonical, re-parseable text for `phi` (printed in NNF)."""
    return _render(nnf(phi))


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<true>TRUE)|(?P<var>x\d+)|(?P<op>>=|<)|(?P<temporal>[FG])"
    r"|(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<punct>[(),\[\]&|!]))"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str):
        raise ParseError(message, self.pos)

    def peek(self):
        if self.pos >= len(self.text):
            return None, None
        m = _TOKEN_RE.match(self.text, self.pos)
        if m is None or m.end() == self.pos:
            # skip leading whitespace check: if only whitespace remains, EOF
            if self.text[self.pos :].strip() == "":
                return None, None
            raise ParseError("unexpected character", self.pos)
        kind = m.lastgroup
        return kind, m

    def take(self):
        kind, m = self.peek()
        if kind is None:
            return None, None
        self.pos = m.end()
        return kind, m.group(kind)

    def expect(self, kind, value=None):
        got_kind, got = self.take()
        if got_kind != kind or (value is not None and got != value):
            want = value if value is not None else kind
            self.error(f"expected {want!r}, got {got!r}")
        return got

    def parse_int(self):
        tok = self.expect("num")
        try:
            return int(tok)
        except ValueError:
            self.error(f"expected an integer, got {tok!r}")

    def parse_formula(self) -> Formula:
        kind, m = self.peek()
        if kind is None:
            self.error("unexpected end of input")
        tok = m.group(kind)
        if kind == "true":
            self.take()
            return TRUE
        if kind == "punct" and tok == "!":
            self.take()
            return Not(self.parse_formula())
        if kind == "temporal":
            self.take()
            self.expect("punct", "[")
            lo = self.parse_int()
            self.expect("punct", ",")
            hi = self.parse_int()
            self.expect("punct", "]")
            if lo < 0 or hi < lo:
                self.error(f"bad interval [{lo},{hi}]: need 0 <= lo <= hi")
            sub = self.parse_formula()
            return Eventually(lo, hi, sub) if tok == "F" else Always(lo, hi, sub)
        if kind == "punct" and tok == "(":
            self.take()
            kind2, m2 = self.peek()
            if kind2 == "var":
                self.take()
                dim = int(m2.group(kind2)[1:])
                if dim < 1:
                    self.error("predicate dimension must be >= 1")
                op = self.expect("op")
                thr = float(self.expect("num"))
                self.expect("punct", ")")
                return pred(dim, op, thr)
            left = self.parse_formula()
            conn = self.expect("punct")
            if conn not in ("&", "|"):
                self.error(f"expected '&' or '|', got {conn!r}")
            right = self.parse_formula()
            self.expect("punct", ")")
            return And(left, right) if conn == "&" else Or(left, right)
        self.error(f"unexpected token {tok!r}")


def parse_formula(text: str) -> Formula:
    """Parse the canonical text grammar back into a formula."""
    p = _Parser(text)
    phi = p.parse_formula()
    kind, _ = p.peek()
    if kind is not None:
        p.error("trailing input after formula")
    return phi
