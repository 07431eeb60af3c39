"""Kernel from the frequency to (frequency, first level of type 1) and the
two-variable generator it intertwines with the Wright-Fisher generator.

Test functions are per-level polynomials in x up to a declared level
``M`` and, above it, a polynomial in the level with polynomial-in-x
coefficients.  Kernel sums then have closed forms num(x) / x^m, so all
series are summed exactly.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial

from lookdown.errors import ConfigError, DomainError

_ONE = Polynomial([1.0])
_X = Polynomial([0.0, 1.0])


@dataclass(frozen=True)
class Laurent:
    """num(x) / x**shift."""

    num: Polynomial
    shift: int = 0

    def __call__(self, x):
        return self.num(x) / np.power(x, self.shift)

    def _lift(self, shift: int) -> Polynomial:
        return self.num * _X ** (shift - self.shift)

    def __add__(self, other: Laurent) -> Laurent:
        s = max(self.shift, other.shift)
        return Laurent(self._lift(s) + other._lift(s), s)

    def __sub__(self, other: Laurent) -> Laurent:
        return self + other.scale(_ONE * -1.0)

    def scale(self, p: Polynomial) -> Laurent:
        return Laurent(self.num * p, self.shift)

    def deriv(self) -> Laurent:
        # (n / x^m)' = (x n' - m n) / x^(m+1)
        return Laurent(_X * self.num.deriv() - self.shift * self.num, self.shift + 1)


def eulerian(k: int) -> Polynomial:
    """Eulerian polynomial A_k with sum_l l^k y^(l-1) = A_k(y) / (1-y)^(k+1)."""
    if k == 0:
        return _ONE
    coef = [sum((-1) ** j * math.comb(k + 1, j) * (m + 1 - j) ** k for j in range(m + 1))
            for m in range(k)]
    return Polynomial(np.array(coef, dtype=float))


def geometric_moment(k: int) -> Laurent:
    """E[G^k] for G geometric on {1,2,...} with success probability x."""
    return Laurent(eulerian(k)(1 - _X), k)


def _poly(p) -> Polynomial:
    return p if isinstance(p, Polynomial) else Polynomial(np.atleast_1d(np.asarray(p, dtype=float)))


@dataclass(frozen=True)
class TwoVarTestFn:
    """f(x, l): ``levels[l-1](x)`` for l <= len(levels), else sum_k tail[k](x) l^k.

    ``at_infinity`` is f(0, inf), used by the kernel at x = 0; ``None``
    means the value is infinite (unbounded tails).
    """

    __test__ = False

    levels: tuple
    tail: tuple
    at_infinity: float | None = 0.0
    name: str = ""

    def __post_init__(self):
        if self.tail is None:
            raise ConfigError("a two-variable test function must declare its level tail")
        object.__setattr__(self, "levels", tuple(_poly(p) for p in self.levels))
        object.__setattr__(self, "tail", tuple(_poly(p) for p in self.tail))

    @property
    def M(self) -> int:
        return len(self.levels)

    def tail_at(self, level: int) -> Polynomial:
        out = Polynomial([0.0])
        for k, p in enumerate(self.tail):
            out = out + p * float(level) ** k
        return out

    def level_poly(self, level: int) -> Polynomial:
        if level < 1:
            raise DomainError("levels start at 1")
        return self.levels[level - 1] if level <= self.M else self.tail_at(level)

    def __call__(self, x: float, level) -> float:
        if level == math.inf:
            if self.at_infinity is None:
                return math.inf
            return float(self.at_infinity)
        return float(self.level_poly(int(level))(x))


def kernel_weight(x: float, level: int) -> float:
    """Geometric weight (1-x)^(l-1) x of level l."""
    return (1 - x) ** (level - 1) * x


def khat_laurent(f: TwoVarTestFn) -> Laurent:
    """x -> sum_l (1-x)^(l-1) x f(x,l) on (0,1] in closed form."""
    out = Laurent(Polynomial([0.0]))
    for k, p in enumerate(f.tail):
        out = out + geometric_moment(k).scale(p)
    head = Polynomial([0.0])
    for level in range(1, f.M + 1):
        w = (1 - _X) ** (level - 1) * _X
        head = head + w * (f.levels[level - 1] - f.tail_at(level))
    return out + Laurent(head)


def khat_apply(f: TwoVarTestFn, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise DomainError("x must lie in [0,1]")
    if x == 0.0:
        if f.at_infinity is None:
            raise DomainError("f(0, inf) is infinite")
        return float(f.at_infinity)
    return float(khat_laurent(f)(x))


def _mul_level_poly(tail: Sequence[Polynomial], lp: Sequence[float]) -> list[Polynomial]:
    """Multiply sum_k tail[k] l^k by the numeric polynomial sum_j lp[j] l^j."""
    out = [Polynomial([0.0]) for _ in range(len(tail) + len(lp) - 1)]
    for k, p in enumerate(tail):
        for j, a in enumerate(lp):
            if a != 0.0:
                out[k + j] = out[k + j] + p * a
    return out


def _add_lists(a, b):
    n = max(len(a), len(b))
    zero = Polynomial([0.0])
    return [(a[i] if i < len(a) else zero) + (b[i] if i < len(b) else zero) for i in range(n)]


def ghat(f: TwoVarTestFn, c: float) -> TwoVarTestFn:
    """The two-variable generator applied to f, in the same representation."""
    diff = 0.5 * c * _X * (1 - _X)
    levels = []
    for level in range(1, f.M + 1):
        g = f.levels[level - 1]
        nxt = f.level_poly(level + 1)
        levels.append(diff * g.deriv(2) + c * (1 - level * _X) * g.deriv()
                      + 0.5 * c * level * (level - 1) * (nxt - g))
    tail = list(f.tail)
    if tail:
        d1 = [p.deriv() for p in tail]
        d2 = [p.deriv(2) for p in tail]
        out = [diff * p for p in d2]
        out = _add_lists(out, [c * p for p in d1])
        out = _add_lists(out, _mul_level_poly([-c * _X * p for p in d1], [0.0, 1.0]))
        # (l+1)^k - l^k as a polynomial in l
        shifted = []
        for k, p in enumerate(tail):
            inc = [math.comb(k, j) * 1.0 for j in range(k)] or [0.0]
            shifted = _add_lists(shifted, _mul_level_poly([p], inc))
        out = _add_lists(out, _mul_level_poly(shifted, [0.0, -0.5 * c, 0.5 * c]))
        tail = out
    return TwoVarTestFn(tuple(levels), tuple(tail), 0.0, f"Ghat {f.name}")


def ghat_apply(f: TwoVarTestFn, x: float, level, c: float) -> float:
    if level == math.inf:
        return 0.0
    return ghat(f, c)(x, level)


def intertwining_sides(f: TwoVarTestFn, x: float, c: float) -> tuple[float, float]:
    """(Khat Ghat f, G Khat f) at x with G the Wright-Fisher generator."""
    if not 0.0 < x < 1.0:
        raise DomainError("x must lie in (0,1)")
    lhs = khat_laurent(ghat(f, c))(x)
    kf = khat_laurent(f)
    rhs = 0.5 * c * x * (1 - x) * kf.deriv().deriv()(x)
    return float(lhs), float(rhs)


def intertwining_residual(f: TwoVarTestFn, x: float, c: float = 1.0) -> float:
    lhs, rhs = intertwining_sides(f, x, c)
    return abs(lhs - rhs)


def default_family() -> list[TwoVarTestFn]:
    x = _X
    return [
        TwoVarTestFn((), (_ONE,), 1.0, "one"),
        TwoVarTestFn((), (x,), 0.0, "x"),
        TwoVarTestFn((x ** 2,), (), 0.0, "x^2 at level 1"),
        TwoVarTestFn((x * (1 - x),), (), 0.0, "x(1-x) at level 1"),
        TwoVarTestFn((), (Polynomial([0.0]), _ONE), None, "level"),
        TwoVarTestFn((x, x ** 2 * (1 - x), 1 - x), (x ** 3,), 0.0, "mixed head, cubic tail"),
        TwoVarTestFn((), (Polynomial([0.0]), Polynomial([0.0]), x), 0.0, "x level^2"),
        TwoVarTestFn((_ONE * 0.0, _ONE), (_ONE * 0.0,), 0.0, "indicator level 2"),
    ]


def residual_table(family: Sequence[TwoVarTestFn], grid: Sequence[float], c: float = 1.0):
    rows = []
    for i, f in enumerate(family):
        for x in grid:
            lhs, rhs = intertwining_sides(f, float(x), c)
            rows.append((f.name or str(i), float(x), lhs, rhs, abs(lhs - rhs)))
    return rows


def residual_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f-id", "x", "lhs", "rhs", "residual"])
    for fid, x, lhs, rhs, res in rows:
        w.writerow([fid, repr(x), repr(lhs), repr(rhs), repr(res)])
    return buf.getvalue()
