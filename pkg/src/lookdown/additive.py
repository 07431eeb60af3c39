"""Additive h-transform of the measure-valued process Z = Y R.

Given a space-time function h_t with m(t) h_t(xi_t) a martingale for the
mutation motion xi, the transformed system size-biases the initial measure,
biases the level-one type by h_0, replaces the total mass by its
size-biased version and lets level one mutate along the h-transformed
motion.  The plain system reweighted by

    S_t = h_t(X_t(1)) Y_t / E[Z_0(h_0)],   T_t = Z_t(h_t) / E[Z_0(h_0)]

has the same law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from lookdown import _kernels
from lookdown.branching import CBEnsemble, cbi_laplace, simulate_cb, simulate_cbi
from lookdown.engine import (
    NO_BIAS,
    Dirichlet,
    LevelOneBias,
    MassDrive,
    MutationModel,
    TrajectoryRecord,
    _check_prob,
    run_ensemble,
    run_general,
)
from lookdown.errors import ConfigError
from lookdown.measures import BranchingMechanism, LambdaSpec, psi_prime_at_zero
from lookdown.product import sub_rng, sub_seed
from lookdown.stats import Check, TestReport, agree, martingale_flatness, mc_estimate

STATEMENT_ADDITIVE = "additive h-transform equals the reweighted measure-valued process"
STATEMENT_S = "level-one weight S is a mean-one martingale"
STATEMENT_T = "measure weight T is a mean-one martingale"
STATEMENT_FIRST_LEVEL = "level one is h-biased and the other levels are exchangeable"
EIGEN_TOL = 1e-10
PAIR_CAP = 20.0  # per-pair coalescence time allowed in one grid step


@dataclass(frozen=True)
class HarmonicPair:
    """Space-time function h_t for the mutation motion.

    ``eigen``: A h = theta h, h_t = e^{-theta t} h / m(t).
    ``terminal``: h_t = e^{(T - t) A} g / m(t) for a positive g.
    ``exponential``: Brownian motion with diffusion D, h_t(x) = e^{theta x - theta^2 D t / 2} / m(t).
    m(t) = e^{-rho t}; rho = psi'(0+) in branching mode and 0 otherwise.
    """

    kind: str
    mutation: MutationModel
    h: tuple = ()
    theta: float = 0.0
    terminal: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        if self.kind in ("eigen", "terminal"):
            if self.mutation.kind not in ("chain", "none"):
                raise ConfigError("eigen/terminal families need a finite chain")
            h = np.asarray(self.h, dtype=float)
            A = self._rates(h.size)
            if h.ndim != 1 or h.size != A.shape[0] or np.any(h <= 0):
                raise ConfigError("h must be a positive vector on the alphabet")
            if self.kind == "eigen":
                res = np.max(np.abs(A @ h - self.theta * h))
                if res > EIGEN_TOL:
                    raise ConfigError(f"(h, theta) is not an eigenpair of the rate matrix: residual {res:.3g}")
            object.__setattr__(self, "h", tuple(h))
        elif self.kind == "exponential":
            if self.mutation.kind != "brownian":
                raise ConfigError("exponential family needs Brownian mutation")
        else:
            raise ConfigError(f"unknown harmonic family {self.kind!r}")

    @classmethod
    def constant(cls, mutation: MutationModel, n_sym: int, rho: float = 0.0) -> HarmonicPair:
        if mutation.kind == "brownian":
            return cls("exponential", mutation, theta=0.0, rho=rho)
        return cls("eigen", mutation, tuple(np.ones(n_sym)), 0.0, rho=rho)

    def _rates(self, n: int) -> np.ndarray:
        if self.mutation.kind == "none":
            return np.zeros((n, n))
        return np.asarray(self.mutation.rates, dtype=float)

    @property
    def finite(self) -> bool:
        return self.kind != "exponential"

    @property
    def is_constant(self) -> bool:
        if self.kind == "exponential":
            return self.theta == 0.0
        return self.kind == "eigen" and len(set(self.h)) == 1

    def values(self, t: float) -> np.ndarray:
        """h_t on the alphabet."""
        h = np.asarray(self.h)
        if self.kind == "eigen":
            v = math.exp(-self.theta * t) * h
        else:
            v = linalg.expm((self.terminal - t) * self._rates(h.size)) @ h
        return v * math.exp(self.rho * t)

    def at(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "exponential":
            D = self.mutation.diffusion
            return np.exp(self.theta * x - 0.5 * self.theta ** 2 * D * t + self.rho * t)
        return self.values(t)[x.astype(np.int64)]

    def level_one_bias(self) -> LevelOneBias:
        if self.kind == "exponential":
            return LevelOneBias(_kernels.H1_BROWNIAN, drift=self.theta * self.mutation.diffusion)
        if self.mutation.kind == "none":
            return NO_BIAS
        A = self._rates(len(self.h))
        h = np.asarray(self.h)
        bound = float(np.max(-np.diag(A)) * h.max() / h.min())
        if self.kind == "eigen":
            amp = h[:, None].astype(complex)
            return LevelOneBias(_kernels.H1_CHAIN, amp, np.zeros(1, dtype=complex), 0.0, bound)
        mu, V = np.linalg.eig(A)
        coef = np.linalg.solve(V, h.astype(complex))
        return LevelOneBias(_kernels.H1_CHAIN, V * coef[None, :], mu.astype(complex),
                            float(self.terminal), bound)


@dataclass(frozen=True)
class InitialLaw:
    """Initial de Finetti measure on points: a fixed vector or Dirichlet weights."""

    points: tuple
    probs: tuple | None = None
    dirichlet: tuple | None = None

    def __post_init__(self):
        if (self.probs is None) == (self.dirichlet is None):
            raise ConfigError("give exactly one of probs and dirichlet")
        if self.probs is not None:
            _check_prob(self.probs)
            if len(self.probs) != len(self.points):
                raise ConfigError("probs and points differ in length")
        else:
            Dirichlet(self.dirichlet)
            if len(self.dirichlet) != len(self.points):
                raise ConfigError("dirichlet and points differ in length")

    @classmethod
    def alphabet(cls, probs) -> InitialLaw:
        return cls(tuple(float(i) for i in range(len(probs))), tuple(float(p) for p in probs))


@dataclass(frozen=True)
class AdditiveConfig:
    """GFV mode (``spec`` set, Y = 1) or branching mode (``bm`` set, Y a CB from x0)."""

    mutation: MutationModel
    harmonic: HarmonicPair
    init: InitialLaw
    N: int
    sample_times: tuple
    spec: LambdaSpec | None = None
    bm: BranchingMechanism | None = None
    x0: float = 1.0
    dt: float = 1e-3
    n_sym: int = 2

    def __post_init__(self):
        if (self.spec is None) == (self.bm is None):
            raise ConfigError("give exactly one of a Lambda spec and a branching mechanism")
        if self.N < 2:
            raise ConfigError("N must be >= 2")
        if not self.x0 > 0:
            raise ConfigError("x0 must be positive")
        rho = psi_prime_at_zero(self.bm) if self.bm is not None else 0.0
        if abs(self.harmonic.rho - rho) > 1e-12:
            raise ConfigError(f"the mass normalizer rate must be {rho:g} in this mode")
        if self.expected_initial() <= 0:
            raise ConfigError("E[Z_0(h_0)] vanishes")

    @property
    def mode(self) -> str:
        return "gfv" if self.spec is not None else "cb"

    @property
    def horizon(self) -> float:
        return float(max(self.sample_times))

    def expected_initial(self) -> float:
        """E[Z_0(h_0)]."""
        h0 = self.harmonic.at(0.0, np.asarray(self.init.points))
        if self.init.probs is not None:
            mean = np.asarray(self.init.probs)
        else:
            a = np.asarray(self.init.dirichlet)
            mean = a / a.sum()
        return float(self.x0 if self.mode == "cb" else 1.0) * float(mean @ h0)


def _initial_measures(cfg: AdditiveConfig, replicas: int, rng, biased: bool) -> np.ndarray:
    pts = np.asarray(cfg.init.points)
    if cfg.init.probs is not None:
        return np.broadcast_to(np.asarray(cfg.init.probs), (replicas, pts.size)).copy()
    a = np.asarray(cfg.init.dirichlet, dtype=float)
    if not biased:
        return rng.dirichlet(a, size=replicas)
    # R0(h0)-weighted Dirichlet: mixture of Dirichlet(a + e_j) with weights h0_j a_j
    h0 = cfg.harmonic.at(0.0, pts)
    w = h0 * a / np.dot(h0, a)
    comp = rng.choice(pts.size, size=replicas, p=w)
    out = np.empty((replicas, pts.size))
    for j in range(pts.size):
        idx = np.nonzero(comp == j)[0]
        if idx.size:
            aj = a.copy()
            aj[j] += 1.0
            out[idx] = rng.dirichlet(aj, size=idx.size)
    return out


def _draw(measures: np.ndarray, n: int, rng) -> np.ndarray:
    cdf = np.cumsum(measures, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((measures.shape[0], n))
    return (u[:, :, None] >= cdf[:, None, :-1]).sum(axis=2)


def initial_types(cfg: AdditiveConfig, replicas: int, rng, biased: bool) -> np.ndarray:
    pts = np.asarray(cfg.init.points, dtype=float)
    R0 = _initial_measures(cfg, replicas, rng, biased)
    idx = _draw(R0, cfg.N, rng)
    if biased:
        h0 = cfg.harmonic.at(0.0, pts)
        idx[:, 0] = _draw(R0 * h0[None, :], 1, rng)[:, 0]
    return pts[idx]


def mass_drive(ens: CBEnsemble, bm: BranchingMechanism, N: int) -> MassDrive:
    """Pair intensity C(N,2) sigma^2 / Y dt and jump frequencies u / (Y_- + u) from CB paths."""
    n, m = ens.Y.shape
    if m != ens.times.size:
        raise ConfigError("mass paths must be recorded on the grid")
    h = np.diff(ens.times)
    y = ens.Y[:, :-1]
    with np.errstate(divide="ignore"):
        per_pair = np.where(y > 0, np.minimum(bm.sigma2 * h[None, :] / y, PAIR_CAP), 0.0)
    cum = np.concatenate((np.zeros((n, 1)), np.cumsum(per_pair, axis=1)), axis=1)
    cum *= N * (N - 1) / 2.0
    freq = np.where(np.isfinite(ens.jump_times),
                    ens.jump_sizes / np.maximum(ens.jump_pre + ens.jump_sizes, 1e-300), 0.0)
    grid = np.broadcast_to(ens.times, (n, m)).copy()
    return MassDrive(grid, ens.Y, cum, ens.jump_times, freq, ens.n_jumps, ens.tau)


def _run(cfg: AdditiveConfig, replicas: int, seed: int, built: bool, workers=None):
    tag = 1 if built else 0
    rng = sub_rng(seed, 10 + tag)
    init = initial_types(cfg, replicas, rng, built)
    bias = cfg.harmonic.level_one_bias() if built else NO_BIAS
    n_sym = cfg.n_sym if cfg.harmonic.finite else 0
    n_keep = 2 if cfg.harmonic.finite else cfg.N
    kseed = sub_seed(seed, 20 + tag)
    if cfg.mode == "gfv":
        rec = run_ensemble(cfg.spec, init, cfg.sample_times, kseed, mutation=cfg.mutation,
                           n_sym=n_sym, n_keep=n_keep, level_one=bias, workers=workers)
        return rec, None
    sim = simulate_cbi if built else simulate_cb
    ens = sim(cfg.bm, cfg.x0, cfg.horizon, cfg.dt, sub_rng(seed, 30 + tag), replicas)
    rec = run_general(mass_drive(ens, cfg.bm, cfg.N), init, cfg.sample_times, kseed,
                      mutation=cfg.mutation, n_sym=n_sym, n_keep=n_keep, level_one=bias,
                      workers=workers)
    return rec, ens


def build_additive_engine(cfg: AdditiveConfig, replicas: int, seed: int,
                          workers: int | None = None) -> TrajectoryRecord:
    return _run(cfg, replicas, seed, True, workers)[0]


def plain_engine(cfg: AdditiveConfig, replicas: int, seed: int,
                 workers: int | None = None) -> TrajectoryRecord:
    return _run(cfg, replicas, seed, False, workers)[0]


def measure_of_h(rec: TrajectoryRecord, cfg: AdditiveConfig) -> np.ndarray:
    """R_t(h_t) per replica and sample time."""
    out = np.empty(rec.dropped.shape)
    for i, t in enumerate(rec.sample_times):
        if cfg.harmonic.finite:
            out[:, i] = rec.masses[:, i, :] @ cfg.harmonic.values(t)
        else:
            out[:, i] = cfg.harmonic.at(t, rec.snapshot[:, i, :]).mean(axis=1)
    return out


def weight_S(rec: TrajectoryRecord, cfg: AdditiveConfig) -> np.ndarray:
    out = np.empty(rec.dropped.shape)
    for i, t in enumerate(rec.sample_times):
        out[:, i] = cfg.harmonic.at(t, rec.level_one[:, i]) * rec.Y[:, i]
    return out / cfg.expected_initial()


def weight_T(rec: TrajectoryRecord, cfg: AdditiveConfig) -> np.ndarray:
    return rec.Y * measure_of_h(rec, cfg) / cfg.expected_initial()


@dataclass(frozen=True)
class Functional:
    """F(Z_t) evaluated from (Y, masses) per replica."""

    name: str
    fn: Callable = field(compare=False)

    def __call__(self, Y, masses):
        return self.fn(Y, masses)


def total_mass() -> Functional:
    return Functional("Z(1)", lambda Y, m: Y)


def exp_total_mass() -> Functional:
    return Functional("exp(-Z(1))", lambda Y, m: np.exp(-Y))


def atom_mass(a: int, power: int = 1) -> Functional:
    suffix = "" if power == 1 else f"^{power}"
    return Functional(f"Z({{{a}}}){suffix}", lambda Y, m: (Y * m[:, a]) ** power)


def default_functionals(cfg: AdditiveConfig) -> list[Functional]:
    out = [total_mass()]
    if cfg.mode == "cb":
        out.append(exp_total_mass())
    if cfg.harmonic.finite:
        out += [atom_mass(0), atom_mass(0, 2)]
    return out


def verify_additive_equality(cfg: AdditiveConfig, replicas: int, seed: int,
                             functionals: Sequence[Functional] | None = None,
                             sigmas: float = 3.0, workers: int | None = None,
                             built: TrajectoryRecord | None = None) -> TestReport:
    """Built-engine means of F(Z^h_t) against plain-engine means of F(Z_t) T_t."""
    functionals = default_functionals(cfg) if functionals is None else functionals
    rep = TestReport("additive-htransform")
    if built is None:
        built = build_additive_engine(cfg, replicas, seed, workers)
    plain = plain_engine(cfg, replicas, seed, workers)
    T = weight_T(plain, cfg)
    S = weight_S(plain, cfg)
    rep.extend(martingale_flatness(S, plain.sample_times, sigmas, "S", STATEMENT_S))
    rep.extend(martingale_flatness(T, plain.sample_times, sigmas, "T", STATEMENT_T))
    for i, t in enumerate(cfg.sample_times):
        for F in functionals:
            a_vals = F(built.Y[:, i], built.masses[:, i, :] if cfg.harmonic.finite else None)
            b_vals = F(plain.Y[:, i], plain.masses[:, i, :] if cfg.harmonic.finite else None) * T[:, i]
            a, b = mc_estimate(a_vals), mc_estimate(b_vals)
            rep.add_estimate(f"built {F.name} t={t:g}", a)
            rep.add_estimate(f"weighted {F.name} t={t:g}", b)
            if a.stderr == 0 and b.stderr == 0:
                diff = abs(a.mean - b.mean)
                ok, tol = diff <= 1e-12, 1e-12
            else:
                ok, diff, tol = agree(a, b, sigmas)
            rep.add_check(Check(f"{F.name} at t={t:g}", ok, diff, tol, STATEMENT_ADDITIVE))
            if cfg.mode == "cb" and F.name == "exp(-Z(1))" and cfg.harmonic.is_constant:
                exact = cbi_laplace(cfg.x0, 1.0, float(t), cfg.bm)
                ok, diff, tol = agree(a, exact, sigmas)
                rep.add_estimate(f"analytic {F.name} t={t:g}", exact)
                rep.add_check(Check(f"{F.name} built vs analytic at t={t:g}", ok, diff, tol,
                                    STATEMENT_ADDITIVE))
    if cfg.mode == "cb":
        built_absorbed = int(np.sum(built.Y <= 0.0))
        rep.add_check(Check("size-biased mass never absorbed", built_absorbed == 0,
                            float(built_absorbed), 0.0, STATEMENT_ADDITIVE))
    rep.metadata.update({"replicas": replicas, "seed": seed, "N": cfg.N, "mode": cfg.mode})
    return rep


def first_level_bias_check(cfg: AdditiveConfig, replicas: int, seed: int, sigmas: float = 3.0,
                           workers: int | None = None,
                           built: TrajectoryRecord | None = None) -> TestReport:
    """Level one against h_t(a) R(a) / R(h_t), level two against R(a).

    R is the empirical measure of levels 2..N, which given the path is an
    exchangeable sample of the de Finetti measure.
    """
    if not cfg.harmonic.finite:
        raise ConfigError("the first-level check needs a finite alphabet")
    rep = TestReport("first-level-bias")
    if built is None:
        built = build_additive_engine(cfg, replicas, seed, workers)
    replicas = built.replicas
    N = cfg.N
    for i, t in enumerate(cfg.sample_times):
        ht = cfg.harmonic.values(t)
        x1 = built.level_one[:, i].astype(np.int64)
        x2 = built.snapshot[:, i, 1].astype(np.int64)
        counts = built.counts[:, i, :].astype(float)
        counts[np.arange(replicas), x1] -= 1.0
        tail = counts / (N - 1)
        for a in range(cfg.n_sym):
            lvl1 = mc_estimate(x1 == a)
            target = mc_estimate(ht[a] * tail[:, a] / (tail @ ht))
            lvl2 = mc_estimate(x2 == a)
            mean_r = mc_estimate(tail[:, a])
            rep.add_estimate(f"P(level one = {a}) t={t:g}", lvl1)
            rep.add_estimate(f"E[h(a) R(a) / R(h)] a={a} t={t:g}", target)
            rep.add_estimate(f"P(level two = {a}) t={t:g}", lvl2)
            rep.add_estimate(f"E[R(a)] a={a} t={t:g}", mean_r)
            ok, diff, tol = agree(lvl1, target, sigmas)
            rep.add_check(Check(f"level one biased law a={a} t={t:g}", ok, diff, tol,
                                STATEMENT_FIRST_LEVEL))
            ok, diff, tol = agree(lvl2, mean_r, sigmas)
            rep.add_check(Check(f"level two exchangeable a={a} t={t:g}", ok, diff, tol,
                                STATEMENT_FIRST_LEVEL))
        if not cfg.harmonic.is_constant:
            a = int(np.argmax(ht))
            lvl1 = mc_estimate(x1 == a)
            mean_r = mc_estimate(tail[:, a])
            gap = lvl1.mean - mean_r.mean
            tol = sigmas * math.hypot(lvl1.stderr, mean_r.stderr)
            rep.add_check(Check(f"level one favours the larger h at t={t:g}", gap > tol, gap, tol,
                                STATEMENT_FIRST_LEVEL))
    rep.metadata.update({"replicas": replicas, "seed": seed, "N": N, "mode": cfg.mode})
    return rep
