"""One-dimensional generators of the two-type frequency process and their
jump-diffusion simulators.

For a polynomial test function f and fixed x the jump terms reduce to
integrals of polynomials in the jump size y against nu, computed by
exact Beta moments (or atom sums) after the O(y^2) factor is split off.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy import special

from lookdown.errors import ConfigError, DomainError
from lookdown.measures import LambdaSpec, NuSpec, pushing_rate

KINDS = ("G", "G0+G1", "I0+I1")


@dataclass(frozen=True)
class TestFn:
    """A polynomial test function with exact derivatives."""

    __test__ = False

    poly: Polynomial
    name: str = ""

    @classmethod
    def from_coeffs(cls, coeffs, name: str = "") -> TestFn:
        c = np.asarray(coeffs, dtype=float)
        if c.size > 7:
            raise ConfigError("test polynomials have degree at most 6")
        return cls(Polynomial(c), name)

    def __call__(self, x):
        return self.poly(x)

    def d1(self, x):
        return self.poly.deriv(1)(x)

    def d2(self, x):
        return self.poly.deriv(2)(x)

    def self_test(self, grid=np.linspace(0.05, 0.95, 19), h: float = 1e-4) -> float:
        """Max disagreement between exact and central-difference derivatives."""
        fd1 = (self(grid + h) - self(grid - h)) / (2 * h)
        fd2 = (self(grid + h) - 2 * self(grid) + self(grid - h)) / (h * h)
        return float(max(np.max(np.abs(fd1 - self.d1(grid))), np.max(np.abs(fd2 - self.d2(grid)))))


def polynomial_family(max_degree: int = 4) -> list[TestFn]:
    """Monomials x^k and the centred products used by the identity checks."""
    fam = [TestFn(Polynomial.basis(k), f"x^{k}") for k in range(max_degree + 1)]
    fam.append(TestFn(Polynomial([0, 1, -1]), "x(1-x)"))
    fam.append(TestFn(Polynomial([0.3, -1.0, 0.5, 2.0, -1.5][:max_degree + 1]), "mixed"))
    return fam


# -- building blocks --------------------------------------------------------

_Y = Polynomial([0.0, 1.0])


def _up(f: TestFn, x: float) -> Polynomial:
    """y -> f(x(1-y)+y) - f(x) as a polynomial in y."""
    p = f.poly(Polynomial([x, 1.0 - x]))
    return p - f(x)


def _down(f: TestFn, x: float) -> Polynomial:
    """y -> f(x(1-y)) - f(x) as a polynomial in y."""
    p = f.poly(Polynomial([x, -x]))
    return p - f(x)


def nu_integral(nu: NuSpec, poly: Polynomial) -> float:
    """Integral of a polynomial vanishing to second order at 0 against nu."""
    if nu.is_null:
        return 0.0
    c = np.asarray(poly.coef, dtype=float)
    if c.size <= 2:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(c))))
    if abs(c[0]) > 1e-9 * scale or abs(c[1]) > 1e-9 * scale:
        raise ValueError("integrand must vanish to second order at 0")
    q = c[2:]
    if nu.kind == "beta":
        # int y^(1-a+k) (1-y)^(a-1) dy = B(2-a+k, a)
        a = nu.alpha
        moments = special.beta(2.0 - a + np.arange(q.size), a)
        return float(np.dot(q, moments))
    return nu.moment_integral(Polynomial(q))


def apply_G(f: TestFn, x: float, spec: LambdaSpec) -> float:
    _check_unit(x)
    val = 0.5 * spec.c * x * (1 - x) * f.d2(x)
    return float(val + nu_integral(spec.nu, x * _up(f, x) + (1 - x) * _down(f, x)))


def apply_G0_G1(f: TestFn, x: float, spec: LambdaSpec) -> tuple[float, float]:
    _check_unit(x)
    c, nu = spec.c, spec.nu
    w0 = _Y * (1 - _Y)
    w1 = (1 - _Y) ** 2
    g0 = c * (1 - 2 * x) * f.d1(x) + nu_integral(nu, w0 * _up(f, x)) + nu_integral(nu, w0 * _down(f, x))
    g1 = 0.5 * c * x * (1 - x) * f.d2(x) + nu_integral(nu, w1 * (x * _up(f, x) + (1 - x) * _down(f, x)))
    return float(g0), float(g1)


def apply_I0_I1(f: TestFn, x: float, spec: LambdaSpec) -> tuple[float, float]:
    _check_unit(x)
    c, nu = spec.c, spec.nu
    i0 = c * (1 - x) * f.d1(x) + nu_integral(nu, _Y * _up(f, x))
    i1 = 0.5 * c * x * (1 - x) * f.d2(x) + nu_integral(
        nu, (1 - _Y) * (x * _up(f, x) + (1 - x) * _down(f, x)))
    return float(i0), float(i1)


def harmonic_H(K: int, spec: LambdaSpec, t: float) -> tuple[Polynomial, float]:
    """(x -> H(t,x), dH/dt / H) for the space-time harmonic functions used for K = 1, 2."""
    if K == 2:
        r2 = pushing_rate(spec, 2)
        return Polynomial([0.0, 1.0, -1.0]) * np.exp(r2 * t), r2
    if K == 1:
        return Polynomial([0.0, 1.0]), 0.0
    raise ConfigError("only K = 1 and K = 2 are supported")


def apply_Gh_via_H(f: TestFn, x: float, t: float, K: int, spec: LambdaSpec) -> float:
    """(G(H f) + dH/dt f) / H at time t."""
    H, rate = harmonic_H(K, spec, t)
    h = float(H(x))
    if h <= 0.0:
        raise DomainError(f"H vanishes at x={x}")
    hf = TestFn(H * f.poly)
    return float((apply_G(hf, x, spec) + rate * h * f(x)) / h)


def _check_unit(x):
    if not 0.0 <= x <= 1.0:
        raise DomainError("x must lie in [0,1]")


def decomposition_weights(y: float, K: int) -> dict[str, float]:
    """Split of a jump of size y by the way it meets the first K levels."""
    if K == 2:
        return {"one of levels 1,2": 2 * y * (1 - y), "neither": (1 - y) ** 2, "both": y * y}
    if K == 1:
        return {"level 1": y, "not level 1": 1 - y}
    raise ConfigError("only K = 1 and K = 2 are supported")


# -- jump-diffusion simulator ----------------------------------------------

@dataclass(frozen=True)
class JumpTerm:
    """Jumps of size y at rate ``rate``; the up-map is taken with probability p_up(x)."""

    y: float
    rate: float
    up: str  # "always", "never", "x"


def jump_terms(kind: str, nu: NuSpec) -> list[JumpTerm]:
    if kind not in KINDS:
        raise ConfigError(f"unknown generator kind {kind!r}")
    if nu.is_null:
        return []
    weights = {
        "G": [(lambda y: 1.0, "x")],
        "G0+G1": [(lambda y: y * (1 - y), "always"), (lambda y: y * (1 - y), "never"),
                  (lambda y: (1 - y) ** 2, "x")],
        "I0+I1": [(lambda y: y, "always"), (lambda y: 1 - y, "x")],
    }[kind]
    for w, _ in weights:
        if not np.isfinite(nu.weighted_mass(w)):
            raise ConfigError(f"the jump measure of {kind} has infinite mass for this nu")
    return [JumpTerm(y, mass * w(y), up) for y, mass in nu.atoms for w, up in weights if w(y) > 0]


def _drift(kind: str, c: float, x):
    if kind == "G":
        return np.zeros_like(x)
    if kind == "G0+G1":
        return c * (1 - 2 * x)
    return c * (1 - x)


def simulate_wf_immigration(kind: str, spec: LambdaSpec, x0, horizon: float, dt: float,
                            rng: np.random.Generator, n: int | None = None,
                            fprime: Callable | None = None):
    """Euler scheme (clamped to [0,1]) with Poisson jumps per step.

    Returns the endpoint samples and, when ``fprime`` is given, the Ito sum
    of fprime(X) dW-terms, a mean-zero control variate for f(X).
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    terms = jump_terms(kind, spec.nu)
    x = np.array(x0, dtype=float) * np.ones(1 if n is None else n)
    if np.any((x < 0) | (x > 1)):
        raise ConfigError("x0 must lie in [0,1]")
    steps = max(1, int(round(horizon / dt)))
    h = horizon / steps
    c = spec.c
    cv = np.zeros_like(x)
    for _ in range(steps):
        vol = np.sqrt(c * np.clip(x * (1 - x), 0.0, None) * h)
        z = rng.standard_normal(x.shape)
        if fprime is not None:
            cv += fprime(x) * vol * z
        x = np.clip(x + _drift(kind, c, x) * h + vol * z, 0.0, 1.0)
        for term in terms:
            k = rng.poisson(term.rate * h, size=x.shape)
            for _ in range(int(k.max(initial=0))):
                hit = k > 0
                if term.up == "x":
                    go_up = rng.random(x.shape) < x
                else:
                    go_up = np.full(x.shape, term.up == "always")
                new = np.where(go_up, x * (1 - term.y) + term.y, x * (1 - term.y))
                x = np.where(hit, new, x)
                k = k - 1
    return x, cv


def wf_increment_sampler(kind: str, spec: LambdaSpec, f: TestFn, substeps: int = 20):
    """Simulator handle for ``stats.generator_consistency``."""
    def simulate(x, delta, n, rng):
        return simulate_wf_immigration(kind, spec, x, delta, delta / substeps, rng, n, f.d1)
    return simulate


def operator_value(kind: str, f: TestFn, x: float, spec: LambdaSpec) -> float:
    if kind == "G":
        return apply_G(f, x, spec)
    if kind == "G0+G1":
        return sum(apply_G0_G1(f, x, spec))
    return sum(apply_I0_I1(f, x, spec))


# -- pathwise decomposition ------------------------------------------------

def pathwise_decomposition_sim(c: float, x0: float, horizon: float, rng: np.random.Generator,
                               n: int, cap: int, dt: float = 1e-3):
    """Three-stage construction of (R_t, L1_t) for the Wright-Fisher case.

    L1(0) is geometric with success x0, L1 climbs by one at rate c l(l-1)/2
    and, given L1 = l, R diffuses with drift c(1 - l x).  Levels above
    ``cap`` are reported as cap + 1 (the OverCap band); R is no longer
    needed there and is frozen.
    """
    if not 0.0 <= x0 <= 1.0:
        raise ConfigError("x0 must lie in [0,1]")
    if x0 > 0:
        level = rng.geometric(x0, size=n).astype(np.int64)
    else:
        level = np.full(n, cap + 1, dtype=np.int64)
    level = np.minimum(level, cap + 1)
    # exact jump times of the autonomous level process
    next_jump = np.full(n, np.inf)
    active = (level > 1) & (level <= cap)
    rates = c * level * (level - 1) / 2.0
    next_jump[active] = rng.exponential(1.0 / rates[active])
    x = np.full(n, float(x0))
    steps = max(1, int(round(horizon / dt)))
    h = horizon / steps
    t = 0.0
    for _ in range(steps):
        t_end = t + h
        # levels are piecewise constant; use the level at the start of the step
        live = level <= cap
        ell = level.astype(float)
        target = np.where(live, 1.0 / ell, 0.0)
        decay = np.exp(-c * ell * h)
        drifted = np.where(live, target + (x - target) * decay, x)
        vol = np.sqrt(c * np.clip(x * (1 - x), 0.0, None) * h)
        x = np.where(live, np.clip(drifted + vol * rng.standard_normal(n), 0.0, 1.0), x)
        while True:
            due = next_jump <= t_end
            if not np.any(due):
                break
            level[due] += 1
            now = next_jump[due]
            lv = level[due]
            ok = lv <= cap
            nxt = np.full(lv.shape, np.inf)
            r = c * lv[ok] * (lv[ok] - 1) / 2.0
            nxt[ok] = now[ok] + rng.exponential(1.0 / r)
            next_jump[due] = nxt
        t = t_end
    return x, level
