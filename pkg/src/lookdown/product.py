"""Product-type h-transform: the weights Q and M, the forgetting construction,
conditioning on coexistence and its decay diagnostics.

Polynomial functionals of the de Finetti measure are estimated from level
counts by U-statistics: the monomial prod_a x{a}^e_a is estimated without
bias by prod_a (n_a)_(e_a) / (N)_(sum e), with (n)_k the falling factorial.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from lookdown.engine import (
    OVERCAP,
    TrajectoryRecord,
    expected_product,
    init_exchangeable_many,
    init_product_h_many,
    run_ensemble,
)
from lookdown.errors import ConfigError, InfeasibleConditioning
from lookdown.measures import LambdaSpec, pushing_rate, pushing_rate_increment
from lookdown.stats import (
    Check,
    MCEstimate,
    TestReport,
    agree,
    ks_band,
    mc_estimate,
    ratio_estimate,
    two_sample_ks,
)

STATEMENT_FORGETTING = "forgetting construction equals product h-transform"
STATEMENT_Q = "indicator weight Q is a mean-one martingale"
STATEMENT_M = "product weight M is a mean-one martingale"
STATEMENT_CONDITIONING = "conditioning on coexistence converges to the h-transform"
STATEMENT_DECAY = "coexistence ratio decays"


def sub_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1, np.uint64)[0] >> 1)


def sub_rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *tags])


# -- polynomial functionals -------------------------------------------------

def falling(n, k: int):
    n = np.asarray(n, dtype=float)
    out = np.ones_like(n)
    for i in range(k):
        out = out * (n - i)
    return out


@dataclass(frozen=True)
class Monomial:
    """x -> coef * prod_a x{a}**exps[a] on the simplex (symbols 0-based)."""

    exps: tuple[int, ...]
    coef: float = 1.0
    name: str = ""

    @property
    def degree(self) -> int:
        return int(sum(self.exps))

    def times(self, other: Sequence[int]) -> Monomial:
        m = max(len(self.exps), len(other))
        a = list(self.exps) + [0] * (m - len(self.exps))
        b = list(other) + [0] * (m - len(other))
        return Monomial(tuple(x + y for x, y in zip(a, b)), self.coef, self.name)

    def exact(self, masses) -> np.ndarray:
        masses = np.asarray(masses, dtype=float)
        out = np.full(masses.shape[:-1], self.coef)
        for a, e in enumerate(self.exps):
            if e:
                out = out * masses[..., a] ** e
        return out

    def ustat(self, counts, total: int) -> np.ndarray:
        """Unbiased estimate from counts among ``total`` exchangeable levels."""
        counts = np.asarray(counts, dtype=float)
        if self.degree > total:
            raise ValueError("degree exceeds the number of levels")
        out = np.full(counts.shape[:-1], self.coef)
        for a, e in enumerate(self.exps):
            if e:
                out = out * falling(counts[..., a], e)
        return out / falling(float(total), self.degree)


def coordinate(a: int) -> Monomial:
    exps = [0] * (a + 1)
    exps[a] = 1
    return Monomial(tuple(exps), name=f"x{{{a + 1}}}")


DEFAULT_FAMILY = (
    Monomial((1,), name="x{1}"),
    Monomial((2,), name="x{1}^2"),
    Monomial((1, 1), name="x{1}x{2}"),
)


def designated_product(K: int) -> Monomial:
    return Monomial((1,) * K, name="prod x{i}")


# -- weights ----------------------------------------------------------------

def weight_M_from_measure(masses, t, K: int, spec: LambdaSpec, R0) -> np.ndarray:
    """prod_{i<=K} R_t{i} e^{r_K t} / E[prod R_0{i}] for given measures."""
    t = np.asarray(t, dtype=float)
    return designated_product(K).exact(masses) * np.exp(pushing_rate(spec, K) * t) / expected_product(R0, K)


def weight_M(record: TrajectoryRecord, K: int, spec: LambdaSpec, R0) -> np.ndarray:
    """M_t per replica and sample time, with the product estimated without bias."""
    prod = designated_product(K).ustat(record.counts, record.N)
    return prod * np.exp(pushing_rate(spec, K) * record.sample_times) / expected_product(R0, K)


def prob_initial_L(R0, K: int) -> float:
    """P(L(0) = K) = K! E[prod R_0{i}]."""
    return math.factorial(K) * expected_product(R0, K)


def weight_Q(record: TrajectoryRecord, K: int, spec: LambdaSpec, R0) -> np.ndarray:
    L = record.L(K)
    return (L == K) * np.exp(pushing_rate(spec, K) * record.sample_times) / prob_initial_L(R0, K)


# -- ensembles --------------------------------------------------------------

def plain_ensemble(spec: LambdaSpec, R0, N: int, sample_times, replicas: int, seed: int,
                   workers: int | None = None, **kw) -> TrajectoryRecord:
    init = init_exchangeable_many(R0, N, replicas, sub_rng(seed, 0))
    return run_ensemble(spec, init, sample_times, sub_seed(seed, 1), workers=workers,
                        n_sym=_alphabet(R0), **kw)


def restricted_ensemble(spec: LambdaSpec, K: int, R0, N: int, sample_times, replicas: int,
                        seed: int, workers: int | None = None) -> TrajectoryRecord:
    """Forgetting construction: product-h initial law, events touching two of the first K skipped."""
    init = init_product_h_many(K, R0, N, replicas, sub_rng(seed, 2))
    return run_ensemble(spec, init, sample_times, sub_seed(seed, 3), restricted_K=K,
                        workers=workers, n_sym=_alphabet(R0))


def _alphabet(R0) -> int:
    return R0.size if hasattr(R0, "size") and not isinstance(R0, np.ndarray) else len(R0)


def tail_counts(record: TrajectoryRecord, K: int) -> np.ndarray:
    """Counts at levels K+1..N of a restricted run (the first K levels are frozen)."""
    c = record.counts.copy()
    c[..., :K] -= 1
    if np.any(c < 0):
        raise AssertionError("restricted run lost a designated type from the first K levels")
    return c


def htransform_values(record: TrajectoryRecord, K: int, f: Monomial) -> np.ndarray:
    return f.ustat(tail_counts(record, K), record.N - K)


def weighted_values(record: TrajectoryRecord, K: int, spec: LambdaSpec, R0, f: Monomial) -> np.ndarray:
    """Unbiased per-replica estimate of f(R_t) M_t."""
    g = f.times((1,) * K)
    return g.ustat(record.counts, record.N) * np.exp(
        pushing_rate(spec, K) * record.sample_times) / expected_product(R0, K)


def verify_htransform_equality(spec: LambdaSpec, K: int, R0, s: float, N: int, replicas: int,
                               seed: int, functionals: Sequence[Monomial] = DEFAULT_FAMILY,
                               sigmas: float = 3.0, workers: int | None = None) -> TestReport:
    """Compare E f(R^h_s) (forgetting construction) with E f(R_s) M_s (reweighting)."""
    times = [float(s)]
    restricted = restricted_ensemble(spec, K, R0, N, times, replicas, seed, workers)
    plain = plain_ensemble(spec, R0, N, times, replicas, sub_seed(seed, 4), workers)
    rep = TestReport("verify-product-h")
    rep.add_check(Check("first K levels frozen in the forgetting construction",
                        bool(np.all(restricted.L(K) == K)), 0.0, 0.0, STATEMENT_FORGETTING))
    for f in functionals:
        a = mc_estimate(htransform_values(restricted, K, f)[:, 0])
        b = mc_estimate(weighted_values(plain, K, spec, R0, f)[:, 0])
        rep.add_estimate(f"E f(R^h_s) [{f.name}]", a)
        rep.add_estimate(f"E f(R_s) M_s [{f.name}]", b)
        ok, diff, tol = agree(a, b, sigmas)
        rep.add_check(Check(f"equality for {f.name} at s={s:g}", ok, diff, tol, STATEMENT_FORGETTING))
    return rep


def martingale_weights(spec: LambdaSpec, K: int, R0, N: int, times, replicas: int, seed: int,
                       workers: int | None = None) -> tuple[np.ndarray, np.ndarray, TrajectoryRecord]:
    rec = plain_ensemble(spec, R0, N, times, replicas, seed, workers)
    return weight_Q(rec, K, spec, R0), weight_M(rec, K, spec, R0), rec


# -- conditioning on coexistence ------------------------------------------

@dataclass
class ConditionedSample:
    t: float
    acceptance: float
    accepted: int
    values: np.ndarray  # R_s^N{1} on accepted replicas
    record: TrajectoryRecord  # accepted replicas, sample times <= s


def conditioned_sampler(spec: LambdaSpec, K: int, condition_times: Sequence[float], s: float,
                        N: int, R0, replicas: int, seed: int, floor: float = 1e-4,
                        workers: int | None = None) -> list[ConditionedSample]:
    """Rejection sampler for the system conditioned on all K designated types
    being present among the N levels at each condition time."""
    cond = [float(t) for t in condition_times]
    if any(t < s for t in cond):
        raise ConfigError("observation time must not exceed the condition time")
    times = sorted(set([float(s)] + cond))
    rec = plain_ensemble(spec, R0, N, times, replicas, seed, workers)
    si = times.index(float(s))
    out = []
    for t in cond:
        ti = times.index(t)
        ok = np.all(rec.first[:, ti, :K] > 0, axis=1)
        rate = float(ok.mean())
        if rate < floor:
            raise InfeasibleConditioning(f"acceptance {rate:.2e} below floor {floor:.0e} at t={t:g}")
        keep = [i for i, u in enumerate(times) if u <= s]
        sub = TrajectoryRecord(rec.sample_times[keep], rec.N, rec.counts[ok][:, keep],
                               rec.first[ok][:, keep], rec.snapshot[ok][:, keep],
                               rec.dropped[ok][:, keep], rec.Y[ok][:, keep])
        vals = rec.counts[ok, si, 0] / float(N)
        out.append(ConditionedSample(t, rate, int(ok.sum()), vals, sub))
    return out


def verify_conditioning(spec: LambdaSpec, K: int, R0, s: float, condition_times: Sequence[float],
                        N: int, replicas: int, h_replicas: int, seed: int, level: float = 0.01,
                        floor: float = 1e-4, workers: int | None = None) -> TestReport:
    """KS distance between conditioned and forgetting-construction laws of R_s{1}."""
    samples = conditioned_sampler(spec, K, condition_times, s, N, R0, replicas, seed, floor, workers)
    restricted = restricted_ensemble(spec, K, R0, N, [s], h_replicas, sub_seed(seed, 5), workers)
    ref = restricted.counts[:, 0, 0] / float(N)
    rep = TestReport("verify-conditioning")
    dists = []
    for cs in samples:
        d, p = two_sample_ks(cs.values, ref)
        band = ks_band(cs.values.size, ref.size)
        dists.append((cs.t, d, p, band))
        rep.metadata.setdefault("ks_table", []).append(
            {"t": cs.t, "acceptance": cs.acceptance, "accepted": cs.accepted,
             "ks": d, "p": p, "band": band})
        rep.add_estimate(f"acceptance t={cs.t:g}", cs.acceptance)
        rep.add_estimate(f"KS distance t={cs.t:g}", d, band / 1.36)
        rep.add_estimate(f"mean R_s{{1}} conditioned t={cs.t:g}", mc_estimate(cs.values))
    rep.add_estimate("mean R^h_s{1}", mc_estimate(ref))
    t_last, d_last, p_last, _ = dists[-1]
    rep.add_check(Check(f"KS p-value at t={t_last:g}", p_last > level, p_last, level,
                        STATEMENT_CONDITIONING))
    for (t0, d0, _, b0), (t1, d1, _, b1) in zip(dists, dists[1:]):
        tol = math.hypot(b0, b1)
        rep.add_check(Check(f"KS distance nonincreasing from t={t0:g} to t={t1:g}",
                            d1 <= d0 + tol, d1 - d0, tol, STATEMENT_CONDITIONING))
    return rep


# -- decay of the coexistence ratio ---------------------------------------

def rate_partial_sums(spec: LambdaSpec, K: int, upper: Sequence[int]) -> dict[int, float]:
    """sum_{j=K}^{J} 1/r_j for each J in ``upper``, using the increment formula."""
    jmax = max(upper)
    r = np.empty(jmax + 1)
    r[1] = 0.0
    for j in range(1, jmax):
        r[j + 1] = r[j] + pushing_rate_increment(spec, j)
    inv = np.zeros(jmax + 1)
    inv[K:] = 1.0 / r[K:]
    cums = np.cumsum(inv)
    return {int(J): float(cums[J]) for J in upper}


def label_presence(spec: LambdaSpec, K: int, N: int, times, replicas: int, seed: int,
                   workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Indicators of {L(t) <= N} started from L(0)=K and L(0)=K+1, on common events.

    Every level starts with its own label; the configuration with L(0)=j puts
    the last designated type at level j, so its designated types coexist at
    time t iff the labels of levels 2..K-1 and j are all still present.
    """
    init = np.broadcast_to(np.arange(N, dtype=float), (replicas, N))
    rec = run_ensemble(spec, init, times, seed, n_sym=K + 1, workers=workers)
    present = rec.first > 0
    base = np.all(present[..., 1:K - 1], axis=-1) if K > 2 else np.ones(present.shape[:2], bool)
    return base & present[..., K - 1], base & present[..., K]


def coexistence_decay(spec: LambdaSpec, K: int, times: Sequence[float], N: int, replicas: int,
                      seed: int, sigmas: float = 3.0, sensitivity: bool = True,
                      decreasing_pair: tuple[float, float] | None = None,
                      workers: int | None = None) -> TestReport:
    times = [float(t) for t in times]
    rK, rK1 = pushing_rate(spec, K), pushing_rate(spec, K + 1)
    gap = (rK1 - rK) / 2.0
    rep = TestReport("coexistence-decay")
    sums = rate_partial_sums(spec, K, [10, 100, 1000, 10000])
    for J, v in sums.items():
        rep.add_estimate(f"sum 1/r_j, j={K}..{J}", v)
    sizes = [N, 2 * N] if sensitivity else [N]
    ratios_by_size = {}
    for size in sizes:
        pK, pK1 = label_presence(spec, K, size, times, replicas, sub_seed(seed, size), workers)
        ratios = []
        for i, t in enumerate(times):
            eK = mc_estimate(pK[:, i])
            eK1 = mc_estimate(pK1[:, i])
            ratio = ratio_estimate(pK1[:, i], pK[:, i])
            ratios.append(ratio)
            rep.add_estimate(f"P_K(L(t)<=N) N={size} t={t:g}", eK)
            rep.add_estimate(f"P_K+1(L(t)<=N) N={size} t={t:g}", eK1)
            rep.add_estimate(f"ratio N={size} t={t:g}", ratio)
            rep.add_check(Check(f"ratio in [0,1] N={size} t={t:g}",
                                bool(0.0 <= ratio.mean <= 1.0) or math.isnan(ratio.mean),
                                ratio.mean, 1.0, "persistence ordering"))
            lower = math.exp(-rK * t)
            rep.add_check(Check(f"lower bound exp(-r_K t) N={size} t={t:g}",
                                eK.mean >= lower - sigmas * eK.stderr, eK.mean, lower,
                                "persistence lower bound"))
        ratios_by_size[size] = ratios
        good = [(t, r.mean) for t, r in zip(times, ratios) if r.mean > 0]
        if good:
            logc = float(np.mean([math.log(v) + gap * t for t, v in good]))
            rep.add_estimate(f"fitted envelope constant N={size}", math.exp(logc))
    rep.metadata["envelope_rate"] = gap
    if decreasing_pair is not None:
        t0, t1 = decreasing_pair
        r0 = ratios_by_size[N][times.index(t0)]
        r1 = ratios_by_size[N][times.index(t1)]
        se = math.hypot(r0.stderr, r1.stderr)
        sep = (r0.mean - r1.mean) / se if se > 0 else math.inf
        status = "decreasing" if sep >= sigmas else ("increasing" if sep <= -sigmas else "inconclusive")
        rep.add_check(Check(f"ratio at t={t1:g} below ratio at t={t0:g}", status != "increasing",
                            sep, sigmas, STATEMENT_DECAY, {"status": status}))
    return rep
