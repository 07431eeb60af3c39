"""Reproduction intensities (c, nu) and branching mechanisms.

A Lambda-type reproduction intensity is parameterized by the Kingman mass
``c`` and a jump measure ``nu`` on (0, 1] with a finite second moment.  Three
families of ``nu`` are supported: the null measure, the Beta family
``x**(-1-alpha) * (1-x)**(alpha-1) dx`` with ``1 < alpha < 2`` and finite
lists of weighted atoms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from lookdown import _kernels
from lookdown.errors import ConfigError, SamplerFailure

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-14
QUAD_LIMIT = 500

NU_NONE, NU_BETA, NU_ATOMS = _kernels.NU_NONE, _kernels.NU_BETA, _kernels.NU_ATOMS


@dataclass(frozen=True)
class NuSpec:
    kind: str = "none"
    alpha: float | None = None
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("none", "beta", "atoms"):
            raise ConfigError(f"unknown nu kind {self.kind!r}")
        if self.kind == "beta":
            if self.alpha is None or not (1.0 < self.alpha < 2.0):
                raise ConfigError("alpha must lie in (1,2)")
        if self.kind == "atoms":
            atoms = tuple((float(x), float(w)) for x, w in self.atoms)
            for x, w in atoms:
                if not (0.0 < x <= 1.0):
                    raise ConfigError(f"atom location {x} must lie in (0,1]")
                if not w > 0.0:
                    raise ConfigError(f"atom weight {w} must be positive")
            object.__setattr__(self, "atoms", atoms)

    @classmethod
    def none(cls) -> NuSpec:
        return cls("none")

    @classmethod
    def beta(cls, alpha: float) -> NuSpec:
        return cls("beta", alpha=float(alpha))

    @classmethod
    def from_atoms(cls, atoms: Sequence[Sequence[float]]) -> NuSpec:
        if len(atoms) == 0:
            return cls("none")
        return cls("atoms", atoms=tuple((float(x), float(w)) for x, w in atoms))

    @property
    def is_null(self) -> bool:
        return self.kind == "none"

    def moment_integral(self, q: Callable[[float], float]) -> float:
        """Return the integral of ``x**2 * q(x)`` against nu.

        ``q`` must be smooth on [0, 1]; the Beta family is integrated with an
        algebraic end-point weight so the ``x**(1-alpha)`` singularity is
        handled analytically.
        """
        if self.kind == "none":
            return 0.0
        if self.kind == "atoms":
            return float(sum(w * x * x * q(x) for x, w in self.atoms))
        a = self.alpha
        value, _ = integrate.quad(
            q, 0.0, 1.0, weight="alg", wvar=(1.0 - a, a - 1.0),
            epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT,
        )
        return float(value)

    def second_moment(self) -> float:
        if self.kind == "beta":
            return float(special.beta(2.0 - self.alpha, self.alpha))
        return self.moment_integral(lambda x: 1.0)

    def weighted_mass(self, weight: Callable[[float], float]) -> float:
        """Total mass of ``weight(x) nu(dx)``; infinite for Beta unless weight = O(x**2)."""
        if self.kind == "none":
            return 0.0
        if self.kind == "atoms":
            return float(sum(w * weight(x) for x, w in self.atoms))
        # x**(-1-alpha) is not integrable at 0; only weights vanishing like x**2 help
        small = 1e-8
        if abs(weight(small)) > 1e3 * small ** 1.5:
            return math.inf
        return self.moment_integral(lambda x: weight(x) / (x * x) if x > 0 else 0.0)

    def kernel_args(self):
        """(kind code, alpha, atom locations, cdf of the x^2-biased atom law)."""
        if self.kind == "atoms":
            xs = np.array([x for x, _ in self.atoms])
            ws = np.array([w for _, w in self.atoms])
            p = ws * xs * xs
            return NU_ATOMS, 0.0, xs, np.cumsum(p) / p.sum()
        code = NU_BETA if self.kind == "beta" else NU_NONE
        return code, float(self.alpha or 0.0), np.zeros(1), np.ones(1)


@dataclass(frozen=True)
class LambdaSpec:
    c: float = 0.0
    nu: NuSpec = NuSpec()

    def __post_init__(self):
        if not self.c >= 0.0:
            raise ConfigError("Kingman mass c must be nonnegative")

    @classmethod
    def kingman(cls, c: float = 1.0) -> LambdaSpec:
        return cls(float(c), NuSpec.none())

    @classmethod
    def beta(cls, alpha: float, c: float = 0.0) -> LambdaSpec:
        return cls(float(c), NuSpec.beta(alpha))

    @property
    def is_degenerate(self) -> bool:
        return self.c == 0.0 and self.nu.is_null

    def kingman_rate(self, n: int) -> float:
        return self.c * n * (n - 1) / 2.0


def _pair_polynomial(i: int) -> Callable[[float], float]:
    """x -> P(Binomial(i, x) >= 2) / x**2, as a sum of positive terms."""
    coeffs = np.arange(1, i, dtype=float)

    def q(x):
        return np.polynomial.polynomial.polyval(1.0 - x, coeffs)

    return q


def pushing_rate(spec: LambdaSpec, i: int) -> float:
    """Rate at which events touch at least two of the first ``i`` levels."""
    if i < 1:
        raise ValueError("level index must be >= 1")
    if i == 1:
        return 0.0
    return spec.kingman_rate(i) + spec.nu.moment_integral(_pair_polynomial(i))


def pushing_rates(spec: LambdaSpec, imax: int) -> np.ndarray:
    """Array ``r`` with ``r[i-1] = pushing_rate(spec, i)`` for i = 1..imax."""
    return np.array([pushing_rate(spec, i) for i in range(1, imax + 1)])


def pushing_rate_increment(spec: LambdaSpec, j: int) -> float:
    """r_{j+1} - r_j, computed independently of the quadrature route.

    For the Beta family this is ``j * B(2 - alpha, j + alpha - 1)``.
    """
    if j < 1:
        raise ValueError("j must be >= 1")
    value = spec.c * j
    nu = spec.nu
    if nu.kind == "beta":
        value += j * float(special.beta(2.0 - nu.alpha, j + nu.alpha - 1.0))
    elif nu.kind == "atoms":
        value += sum(w * j * (1.0 - x) ** (j - 1) * x * x for x, w in nu.atoms)
    return float(value)


def beta_rate_asymptote(alpha: float, j: int) -> float:
    """Leading-order growth Gamma(2 - alpha) j**alpha / alpha of r_j for Beta nu."""
    return float(special.gamma(2.0 - alpha) * j ** alpha / alpha)


def p_two_or_more(x, n: int):
    """P(Binomial(n, x) >= 2), stable for small x."""
    x = np.asarray(x, dtype=float)
    return x * x * _pair_polynomial(n)(x) if n >= 2 else np.zeros_like(x)


def sample_jump_frequency(spec: LambdaSpec, N: int, rng: np.random.Generator,
                          size: int | None = None, max_iter: int = 10 ** 6):
    """Draw jump frequencies x with law proportional to p2(x) nu(dx).

    Rejection from the x**2-biased law of nu; p2(x) is the probability that a
    Bernoulli(x) selection hits at least two of the first ``N`` levels.
    """
    if spec.nu.is_null:
        raise ConfigError("jump frequencies need a nonzero nu")
    if N < 2:
        raise ValueError("N must be >= 2")
    code, alpha, xs, cdf = spec.nu.kernel_args()
    n = 1 if size is None else int(size)
    _kernels.seed(int(rng.integers(2 ** 32)))
    out = _kernels.jump_frequencies(n, code, alpha, xs, cdf, N, max_iter)
    if np.any(out < 0):
        raise SamplerFailure(f"jump-frequency rejection exceeded {max_iter} proposals")
    return float(out[0]) if size is None else out


# -- branching mechanisms ---------------------------------------------------

@dataclass(frozen=True)
class BranchingMechanism:
    """psi(l) = sigma2 l^2/2 + beta l + sum_i w_i (exp(-l u_i) - 1 + l u_i 1{u_i <= 1})."""

    sigma2: float = 0.0
    beta: float = 0.0
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not self.sigma2 >= 0.0:
            raise ConfigError("sigma2 must be nonnegative")
        atoms = tuple((float(u), float(w)) for u, w in self.atoms)
        for u, w in atoms:
            if not (u > 0.0 and w > 0.0):
                raise ConfigError("jump atoms need positive size and weight")
        object.__setattr__(self, "atoms", atoms)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([u for u, _ in self.atoms], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)

    @property
    def linear_drift(self) -> float:
        """Per-unit-mass drift of the continuous part (jumps left uncompensated)."""
        return -self.beta - sum(w * u for u, w in self.atoms if u <= 1.0)


def psi(bm: BranchingMechanism, lam):
    lam = np.asarray(lam, dtype=float)
    out = 0.5 * bm.sigma2 * lam ** 2 + bm.beta * lam
    for u, w in bm.atoms:
        out = out + w * (np.expm1(-lam * u) + (lam * u if u <= 1.0 else 0.0))
    return out if out.ndim else float(out)


def psi_prime(bm: BranchingMechanism, lam):
    lam = np.asarray(lam, dtype=float)
    out = bm.sigma2 * lam + bm.beta
    for u, w in bm.atoms:
        out = out + w * (-u * np.exp(-lam * u) + (u if u <= 1.0 else 0.0))
    return out if out.ndim else float(out)


def psi_prime_at_zero(bm: BranchingMechanism) -> float:
    return bm.beta - sum(w * u for u, w in bm.atoms if u > 1.0)


@dataclass(frozen=True)
class SubordinatorExponent:
    """phi(l) = drift * l + sum_i w_i (1 - exp(-l u_i))."""

    drift: float = 0.0
    atoms: tuple[tuple[float, float], ...] = ()

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        out = self.drift * lam
        for u, w in self.atoms:
            out = out - w * np.expm1(-lam * u)
        return out if out.ndim else float(out)

    @property
    def jump_rate(self) -> float:
        return float(sum(w for _, w in self.atoms))


def phi_tilde(bm: BranchingMechanism) -> SubordinatorExponent:
    """Immigration exponent psi'(l) - psi'(0+): drift sigma2, Levy measure u nu_Y(du)."""
    return SubordinatorExponent(drift=bm.sigma2, atoms=tuple((u, u * w) for u, w in bm.atoms))
