"""The lookdown particle system at truncation level N.

The public entry points are ``run_ensemble`` (homogeneous Lambda-type
dynamics), ``run_general`` (dynamics driven by a total-mass path) and the
single-path reference implementations ``apply_event``/``evolve_mutation``.
Levels are 1-based in this module.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy import linalg

from lookdown import _kernels
from lookdown.errors import ConfigError, SamplerFailure
from lookdown.events import DEFAULT_MAX_ITER, EventStream, ReproductionEvent
from lookdown.measures import LambdaSpec, pushing_rate

OVERCAP = -1


# -- type spaces, mutation and initial laws -------------------------------

@dataclass(frozen=True)
class TypeSpace:
    size: int | None = None  # None means real-valued types

    def __post_init__(self):
        if self.size is not None and self.size < 2:
            raise ConfigError("a finite alphabet needs at least two symbols")

    @property
    def is_finite(self) -> bool:
        return self.size is not None


@dataclass(frozen=True)
class MutationModel:
    kind: str = "none"  # none | chain | brownian
    rates: np.ndarray | None = None
    diffusion: float = 0.0

    def __post_init__(self):
        if self.kind == "chain":
            q = np.asarray(self.rates, dtype=float)
            if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 2:
                raise ConfigError("rate matrix must be square with at least two states")
            off = q - np.diag(np.diag(q))
            if np.any(off < 0):
                raise ConfigError("off-diagonal rates must be nonnegative")
            if np.max(np.abs(q.sum(axis=1))) > 1e-12:
                raise ConfigError("rate matrix rows must sum to zero")
            object.__setattr__(self, "rates", q)
        elif self.kind == "brownian":
            if not self.diffusion > 0:
                raise ConfigError("diffusion constant must be positive")
        elif self.kind != "none":
            raise ConfigError(f"unknown mutation kind {self.kind!r}")

    @classmethod
    def none(cls) -> MutationModel:
        return cls("none")

    @classmethod
    def chain(cls, rates) -> MutationModel:
        return cls("chain", rates=np.asarray(rates, dtype=float))

    @classmethod
    def brownian(cls, diffusion: float) -> MutationModel:
        return cls("brownian", diffusion=float(diffusion))

    @property
    def uniform_rate(self) -> float:
        if self.kind != "chain":
            return 0.0
        return float(np.max(-np.diag(self.rates)))

    def transition(self, t: float) -> np.ndarray:
        return linalg.expm(self.rates * t)

    def kernel_args(self, n_sym: int = 2):
        if self.kind == "chain":
            return _kernels.MUT_CHAIN, self.rates, self.uniform_rate, 0.0
        q = np.zeros((max(n_sym, 1), max(n_sym, 1)))
        if self.kind == "brownian":
            return _kernels.MUT_BROWNIAN, q, 0.0, self.diffusion
        return _kernels.MUT_NONE, q, 0.0, 0.0


@dataclass(frozen=True)
class Dirichlet:
    """Random de Finetti measure R0 ~ Dirichlet(alpha)."""

    alpha: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(v) for v in self.alpha)
        if len(a) < 2 or min(a) <= 0:
            raise ConfigError("Dirichlet parameters must be positive, at least two")
        object.__setattr__(self, "alpha", a)

    @property
    def size(self) -> int:
        return len(self.alpha)


InitialLaw = "np.ndarray | Dirichlet"


def _check_prob(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ConfigError("R0 must be a probability vector")
    return p


def _draw_measures(R0, replicas: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(R0, Dirichlet):
        return rng.dirichlet(R0.alpha, size=replicas)
    p = _check_prob(R0)
    return np.broadcast_to(p, (replicas, p.size))


def _iid_types(measures: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Row r holds n iid draws from measures[r]."""
    cdf = np.cumsum(measures, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((measures.shape[0], n))
    out = (u[:, :, None] >= cdf[:, None, :-1]).sum(axis=2)
    return out.astype(float)


def init_exchangeable_many(R0, N: int, replicas: int, rng: np.random.Generator) -> np.ndarray:
    """Initial types (symbols 0..K'-1) for ``replicas`` independent systems."""
    return _iid_types(_draw_measures(R0, replicas, rng), N, rng)


def expected_product(R0, K: int) -> float:
    """E[prod_{i<=K} R0{i}], exactly for deterministic and Dirichlet R0."""
    if isinstance(R0, Dirichlet):
        a = np.array(R0.alpha)
        if K > a.size:
            raise ConfigError("K exceeds the alphabet size")
        total = a.sum()
        return float(np.prod(a[:K]) / np.prod(total + np.arange(K)))
    p = _check_prob(R0)
    if K > p.size:
        raise ConfigError("K exceeds the alphabet size")
    return float(np.prod(p[:K]))


def h_biased_law(R0, K: int):
    """The prod_{i<=K} R0{i}-weighted law of R0."""
    if expected_product(R0, K) <= 0:
        raise ConfigError("E[prod R0{i}] vanishes; the weighted law is undefined")
    if isinstance(R0, Dirichlet):
        a = np.array(R0.alpha)
        a[:K] += 1.0
        return Dirichlet(tuple(a))
    return _check_prob(R0)


def init_product_h_many(K: int, R0, N: int, replicas: int, rng: np.random.Generator) -> np.ndarray:
    """First K levels: uniform permutation of the designated symbols; rest from R0^H."""
    if K > N:
        raise ConfigError("K must not exceed N")
    law = h_biased_law(R0, K)
    out = init_exchangeable_many(law, N, replicas, rng)
    out[:, :K] = rng.permuted(np.broadcast_to(np.arange(K, dtype=float), (replicas, K)), axis=1)
    return out


def designated_config(j: int, K: int, N: int) -> np.ndarray:
    """Configuration with L(0) = j: symbol i-1 at level i for i < K, symbol K-1 at level j."""
    if not (K <= j <= N):
        raise ConfigError("need K <= j <= N")
    types = np.zeros(N)
    types[:K - 1] = np.arange(K - 1)
    types[j - 1] = K - 1
    return types


# -- single-path reference implementation ----------------------------------

@dataclass
class ParticleState:
    time: float
    types: np.ndarray

    @property
    def N(self) -> int:
        return int(self.types.shape[0])

    def copy(self) -> ParticleState:
        return ParticleState(self.time, self.types.copy())


def init_exchangeable(R0, N: int, rng: np.random.Generator) -> ParticleState:
    return ParticleState(0.0, init_exchangeable_many(R0, N, 1, rng)[0])


def init_product_h(K: int, R0, N: int, rng: np.random.Generator) -> ParticleState:
    return ParticleState(0.0, init_product_h_many(K, R0, N, 1, rng)[0])


def apply_event(state: ParticleState, event: ReproductionEvent) -> ParticleState:
    """Copy the parent's type to the children and shift the other occupants up."""
    n = state.N
    old = state.types
    block = [b for b in event.block if b <= n]
    new = old.copy()
    if len(block) >= 2:
        parent = block[0]
        children = set(block[1:])
        src = parent + 1
        for lvl in range(parent + 1, n + 1):
            if lvl in children:
                new[lvl - 1] = old[parent - 1]
            else:
                new[lvl - 1] = old[src - 1]
                src += 1
    return ParticleState(max(state.time, event.time), new)


def evolve_mutation(state: ParticleState, dt: float, model: MutationModel,
                    rng: np.random.Generator) -> ParticleState:
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    out = state.copy()
    out.time = state.time + dt
    if model.kind == "none" or dt == 0:
        return out
    if model.kind == "brownian":
        out.types = out.types + rng.normal(0.0, np.sqrt(model.diffusion * dt), size=state.N)
        return out
    q = model.rates
    for lvl in range(state.N):
        a, t = int(out.types[lvl]), 0.0
        while True:
            rate = -q[a, a]
            if rate <= 0:
                break
            t += rng.exponential(1.0 / rate)
            if t > dt:
                break
            w = q[a].copy()
            w[a] = 0.0
            a = int(rng.choice(w.size, p=w / rate))
        out.types[lvl] = a
    return out


# -- ensemble engine --------------------------------------------------------

@dataclass(frozen=True)
class LevelOneBias:
    """Compiled description of an h-transformed level-one motion.

    For a finite chain the level-one jump rate x -> y is q(x,y) h_t(y)/h_t(x)
    with h_t(x) = Re sum_k amp[x,k] exp(mu[k] (end - t)) up to a constant,
    thinned from the uniform rate ``bound``.  For Brownian motion the level
    one particle carries the extra drift ``drift``.
    """

    kind: int
    amp: np.ndarray = field(default_factory=lambda: np.ones((1, 1), dtype=complex))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=complex))
    end: float = 0.0
    bound: float = 0.0
    drift: float = 0.0


NO_BIAS = LevelOneBias(_kernels.H1_NONE)


@dataclass
class TrajectoryRecord:
    """Sample-time snapshots of an ensemble of truncated lookdown systems."""

    sample_times: np.ndarray
    N: int
    counts: np.ndarray  # (replicas, times, symbols)
    first: np.ndarray  # lowest level holding each symbol, -1 if absent
    snapshot: np.ndarray  # types at the first n_keep levels
    dropped: np.ndarray  # cumulative number of dropped (restricted) events
    Y: np.ndarray  # total mass

    @property
    def replicas(self) -> int:
        return int(self.counts.shape[0])

    @property
    def masses(self) -> np.ndarray:
        """Empirical measure R_t^N on the tracked symbols."""
        return self.counts / float(self.N)

    @property
    def Z(self) -> np.ndarray:
        return self.Y[..., None] * self.masses

    def L(self, K: int) -> np.ndarray:
        """Lowest level whose prefix holds symbols 0..K-1; OVERCAP if none."""
        f = self.first[..., :K]
        return np.where(np.all(f > 0, axis=-1), f.max(axis=-1), OVERCAP)

    @property
    def L1(self) -> np.ndarray:
        return self.first[..., 0]

    @property
    def level_one(self) -> np.ndarray:
        return self.snapshot[..., 0]

    def to_csv(self, K: int | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n_sym = self.counts.shape[2]
        header = ["replica", "time", "Y", "L", "L1"] + [f"mass_{s}" for s in range(n_sym)]
        has_x1 = self.snapshot.shape[2] > 0
        if has_x1:
            header.append("x1")
        w.writerow(header)
        L = self.L(K) if K else np.full(self.dropped.shape, OVERCAP)
        L1 = self.L1 if n_sym else np.full(self.dropped.shape, OVERCAP)
        m = self.masses
        for r in range(self.replicas):
            for i, t in enumerate(self.sample_times):
                row = [r, repr(float(t)), repr(float(self.Y[r, i])), int(L[r, i]), int(L1[r, i])]
                row += [repr(float(v)) for v in m[r, i]]
                if has_x1:
                    row.append(repr(float(self.snapshot[r, i, 0])))
                w.writerow(row)
        return buf.getvalue()


def replica_seeds(seed: int, replicas: int) -> np.ndarray:
    """Per-replica kernel seeds; a prefix of the list does not depend on its length."""
    return np.random.SeedSequence(seed).generate_state(replicas).astype(np.int64)


def _set_workers(workers: int | None):
    if workers is not None:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))


def _call_kernel(seeds, init, mode, spec, N, window, grid_args, replay, mutation,
                 level_one, sample_times, n_sym, n_keep, max_iter, workers):
    _set_workers(workers)
    if spec is not None:
        code, alpha, xs, cdf = spec.nu.kernel_args()
        kr, tr = spec.kingman_rate(N), pushing_rate(spec, N)
    else:
        code, alpha, xs, cdf = _kernels.NU_NONE, 0.0, np.zeros(1), np.ones(1)
        kr = tr = 0.0
    if grid_args is None:
        r = init.shape[0]
        grid_args = (np.zeros((r, 2)), np.zeros((r, 2)), np.zeros((r, 1)), np.zeros((r, 1)),
                     np.zeros(r, dtype=np.int64), np.full(r, np.inf))
    if replay is None:
        replay = (np.zeros(0), np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    mut_kind, q, urate, diff = mutation.kernel_args(max(n_sym, 2))
    if level_one.kind == _kernels.H1_CHAIN and mutation.kind != "chain":
        raise ConfigError("a chain level-one bias needs chain mutation")
    counts, first, snap, dropped, status = _kernels.run_ensemble(
        seeds, np.ascontiguousarray(init, dtype=float), mode,
        float(kr), float(tr), code, float(alpha), xs, cdf, int(max_iter), int(window or 0),
        *grid_args, *replay,
        mut_kind, np.ascontiguousarray(q, dtype=float), float(urate), float(diff),
        level_one.kind, np.ascontiguousarray(level_one.amp, dtype=complex),
        np.ascontiguousarray(level_one.mu, dtype=complex), float(level_one.end),
        float(level_one.bound), float(level_one.drift),
        np.ascontiguousarray(sample_times, dtype=float), int(n_sym), int(n_keep))
    if np.any(status != _kernels.STATUS_OK):
        raise SamplerFailure(f"jump-frequency rejection exceeded {max_iter} proposals")
    return counts, first, snap, dropped


def _check_times(sample_times) -> np.ndarray:
    ts = np.asarray(sample_times, dtype=float)
    if ts.ndim != 1 or ts.size == 0 or ts[0] < 0 or np.any(np.diff(ts) < 0):
        raise ConfigError("sample times must be a nonempty nondecreasing list of nonnegative reals")
    return ts


def run_ensemble(spec: LambdaSpec, init: np.ndarray, sample_times: Sequence[float], seed: int,
                 restricted_K: int | None = None, count_K: int | None = None,
                 mutation: MutationModel = MutationModel(),
                 n_sym: int = 2, n_keep: int = 0, level_one: LevelOneBias = NO_BIAS,
                 stream: EventStream | None = None, max_iter: int = DEFAULT_MAX_ITER,
                 workers: int | None = None) -> TrajectoryRecord:
    """Run ``init.shape[0]`` independent replicas of the Lambda-type lookdown.

    With ``restricted_K`` set, events touching two or more of the first K
    levels are skipped and counted in ``record.dropped``; ``count_K`` counts
    such events without skipping them.  With ``stream``
    given, every replica replays that event list instead of sampling one.
    """
    init = np.atleast_2d(np.asarray(init, dtype=float))
    replicas, N = init.shape
    if N < 2:
        raise ConfigError("N must be >= 2")
    if restricted_K is not None and count_K is not None:
        raise ConfigError("restricted_K and count_K are exclusive")
    for k in (restricted_K, count_K):
        if k is not None and not 1 <= k <= N:
            raise ConfigError("K must lie in 1..N")
    window = restricted_K if restricted_K is not None else -(count_K or 0)
    ts = _check_times(sample_times)
    mode = _kernels.MODE_POISSON
    replay = None
    if stream is not None:
        mode = _kernels.MODE_REPLAY
        replay = stream.to_arrays()
    seeds = replica_seeds(seed, replicas)
    counts, first, snap, dropped = _call_kernel(
        seeds, init, mode, spec, N, window, None, replay, mutation, level_one,
        ts, n_sym, n_keep, max_iter, workers)
    return TrajectoryRecord(ts, N, counts, first, snap, dropped, np.ones(dropped.shape))


def run_gfv(spec: LambdaSpec, mutation: MutationModel, init: ParticleState, horizon: float,
            sample_times: Sequence[float], restricted_K: int | None = None,
            rng: np.random.Generator | None = None, n_sym: int = 2,
            n_keep: int | None = None) -> TrajectoryRecord:
    """Single-replica run; sample times must lie in [0, horizon]."""
    ts = _check_times(sample_times)
    if ts[-1] > horizon:
        raise ConfigError("sample times must lie in [0, horizon]")
    rng = rng or np.random.default_rng()
    keep = init.N if n_keep is None else n_keep
    return run_ensemble(spec, init.types[None, :], ts, int(rng.integers(2 ** 63)),
                        restricted_K=restricted_K, mutation=mutation, n_sym=n_sym, n_keep=keep)


@dataclass
class MassDrive:
    """Per-replica driving data for the mass-driven lookdown.

    ``cumlam[r]`` is the cumulative pair-event intensity (already including
    the binomial factor) on ``grid[r]``; jumps carry their block frequency.
    """

    grid: np.ndarray
    Y: np.ndarray
    cumlam: np.ndarray
    jump_times: np.ndarray
    jump_freq: np.ndarray
    n_jumps: np.ndarray
    tau: np.ndarray

    def mass_at(self, times: np.ndarray) -> np.ndarray:
        idx = np.clip(np.searchsorted(self.grid[0], times + 1e-12, side="right") - 1,
                      0, self.grid.shape[1] - 1)
        return self.Y[:, idx]


def run_general(drive: MassDrive, init: np.ndarray, sample_times: Sequence[float], seed: int,
                mutation: MutationModel = MutationModel(), n_sym: int = 2, n_keep: int = 0,
                level_one: LevelOneBias = NO_BIAS, workers: int | None = None) -> TrajectoryRecord:
    """Lookdown driven by a total-mass path; types freeze when the mass is absorbed."""
    init = np.atleast_2d(np.asarray(init, dtype=float))
    replicas, N = init.shape
    ts = _check_times(sample_times)
    if drive.grid.shape[0] != replicas:
        raise ConfigError("one driving path per replica is required")
    if np.any(drive.jump_freq[drive.jump_freq == drive.jump_freq] > 1.0):
        raise ConfigError("jump frequencies above 1 violate the mass constraint")
    grid_args = tuple(np.ascontiguousarray(a) for a in (
        drive.grid, drive.cumlam, drive.jump_times, drive.jump_freq)) + (
        np.ascontiguousarray(drive.n_jumps, dtype=np.int64), np.ascontiguousarray(drive.tau))
    seeds = replica_seeds(seed, replicas)
    counts, first, snap, dropped = _call_kernel(
        seeds, init, _kernels.MODE_GRID, None, N, None, grid_args, None, mutation, level_one,
        ts, n_sym, n_keep, DEFAULT_MAX_ITER, workers)
    return TrajectoryRecord(ts, N, counts, first, snap, dropped, drive.mass_at(ts))


def constant_mass_drive(c: float, N: int, horizon: float, replicas: int,
                        jumps: Sequence[tuple[float, float]] = ()) -> MassDrive:
    """Y = 1 with Kingman mass c and optional (time, frequency) jumps of U."""
    grid = np.broadcast_to(np.array([0.0, horizon]), (replicas, 2)).copy()
    lam = c * N * (N - 1) / 2.0 * horizon
    cumlam = np.broadcast_to(np.array([0.0, lam]), (replicas, 2)).copy()
    jt = np.array([[t for t, _ in jumps] or [np.inf]] * replicas, dtype=float)
    jx = np.array([[x for _, x in jumps] or [0.0]] * replicas, dtype=float)
    return MassDrive(grid, np.ones_like(grid), cumlam, jt, jx,
                     np.full(replicas, len(jumps), dtype=np.int64), np.full(replicas, np.inf))
