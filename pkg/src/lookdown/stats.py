"""Monte Carlo estimators, two-sample tests and JSON test reports."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats as sps

DEFAULT_SIGMAS = 3.0
DEFAULT_KS_LEVEL = 0.01


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int
    m2: float = 0.0  # sum of squared deviations, kept for exact merging

    @property
    def sd(self) -> float:
        return math.sqrt(self.m2 / (self.n - 1)) if self.n > 1 else 0.0

    def merge(self, other: MCEstimate) -> MCEstimate:
        """Pairwise (Chan et al.) combination of two shard estimates."""
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return MCEstimate(mean, math.sqrt(m2 / (n - 1) / n), n, m2)

    def to_dict(self, name: str) -> dict:
        return {"name": name, "value": self.mean, "stderr": self.stderr, "n": self.n}


def mc_estimate(samples) -> MCEstimate:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    mean = float(x.mean())
    m2 = float(np.sum((x - mean) ** 2))
    return MCEstimate(mean, math.sqrt(m2 / (x.size - 1) / x.size), int(x.size), m2)


def ratio_estimate(num, den) -> MCEstimate:
    """mean(num)/mean(den) for paired samples, delta-method standard error."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = num.size
    mn, md = num.mean(), den.mean()
    if md == 0:
        return MCEstimate(float("nan"), float("nan"), n)
    r = mn / md
    resid = num - r * den
    se = math.sqrt(np.var(resid, ddof=1) / n) / abs(md)
    return MCEstimate(float(r), float(se), n)


def agree(a: MCEstimate, b: MCEstimate | float, sigmas: float = DEFAULT_SIGMAS) -> tuple[bool, float, float]:
    """(pass, |difference|, tolerance) for a 'within k combined sigmas' check."""
    if isinstance(b, MCEstimate):
        diff = abs(a.mean - b.mean)
        tol = sigmas * math.hypot(a.stderr, b.stderr)
    else:
        diff = abs(a.mean - b)
        tol = sigmas * a.stderr
    return bool(diff <= tol), float(diff), float(tol)


def two_sample_ks(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    grid = np.concatenate((a, b))
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    p = float(sps.kstwobign.sf(d * en)) if d > 0 else 1.0
    return d, min(1.0, p)


def ks_band(n: int, m: int, coef: float = 1.36) -> float:
    """Half-width of the asymptotic 95% band of the KS distance for sizes n, m."""
    return coef * math.sqrt((n + m) / (n * m))


# -- reports ----------------------------------------------------------------

@dataclass
class Check:
    check: str
    passed: bool
    statistic: float
    tolerance: float
    statement: str = ""
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"check": self.check, "pass": bool(self.passed), "statistic": _clean(self.statistic),
               "tolerance": _clean(self.tolerance), "statement": self.statement}
        if self.detail:
            out["detail"] = _clean(self.detail)
        return out


def _clean(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def config_hash(config: Any) -> str:
    text = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    experiment: str
    config_hash: str = ""
    estimates: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add_estimate(self, name: str, est: MCEstimate | float, stderr: float | None = None):
        if isinstance(est, MCEstimate):
            self.estimates.append(est.to_dict(name))
        else:
            self.estimates.append({"name": name, "value": float(est),
                                   "stderr": None if stderr is None else float(stderr)})

    def add_check(self, check: Check) -> Check:
        self.verdicts.append(check)
        return check

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.verdicts)

    def check(self, name: str) -> Check:
        for c in self.verdicts:
            if c.check == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "config_hash": self.config_hash,
                "estimates": _clean(self.estimates),
                "verdicts": [c.to_dict() for c in self.verdicts],
                "metadata": _clean(self.metadata), "pass": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def extend(self, other: TestReport, prefix: str = ""):
        self.estimates.extend({**e, "name": prefix + e["name"]} for e in other.estimates)
        for c in other.verdicts:
            self.verdicts.append(Check(prefix + c.check, c.passed, c.statistic, c.tolerance,
                                       c.statement, c.detail))


def martingale_flatness(weights, times: Sequence[float], sigmas: float = DEFAULT_SIGMAS,
                        name: str = "weight", statement: str = "") -> TestReport:
    """Check that each column of ``weights`` (replicas x times) has mean 1."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    rep = TestReport("martingale-flatness")
    for j, t in enumerate(times):
        col = w[:, j]
        if np.all(col == col[0]):
            est = MCEstimate(float(col[0]), 0.0, col.size)
            ok, diff, tol = abs(col[0] - 1.0) <= 1e-12, abs(col[0] - 1.0), 1e-12
        else:
            est = mc_estimate(col)
            ok, diff, tol = agree(est, 1.0, sigmas)
        rep.add_estimate(f"E[{name}] t={t:g}", est)
        rep.add_check(Check(f"{name} mean is 1 at t={t:g}", ok, diff, tol, statement))
    return rep


def richardson(values: Sequence[float], ratio: float) -> tuple[float, np.ndarray]:
    """Neville elimination of the O(d), O(d^2), ... terms on a geometric ladder.

    Returns the extrapolated value and its weights on the inputs, so that the
    standard error can be propagated by the caller.
    """
    m = len(values)
    w = np.eye(m)
    for level in range(1, m):
        q = ratio ** level
        w = np.array([(q * w[i + 1] - w[i]) / (q - 1.0) for i in range(w.shape[0] - 1)])
    weights = w[0]
    return float(weights @ np.asarray(values, dtype=float)), weights


def generator_consistency(simulate: Callable, operator_value: float, f: Callable, x: float,
                          deltas: Sequence[float], n: int, rng: np.random.Generator,
                          rel_tol: float = 0.05, sigmas: float = DEFAULT_SIGMAS,
                          statement: str = "") -> Check:
    """Compare the extrapolated (E f(X_d) - f(x)) / d with an operator value.

    ``simulate(x, d, n, rng)`` returns endpoint samples and a mean-zero control
    variate of the same shape (zeros if none is available).
    """
    deltas = [float(d) for d in deltas]
    if len(deltas) < 2 or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("need at least two strictly decreasing deltas")
    ratios = [a / b for a, b in zip(deltas, deltas[1:])]
    if max(ratios) - min(ratios) > 1e-9:
        raise ValueError("deltas must form a geometric ladder")
    quotients, errs = [], []
    for d in deltas:
        xs, cv = simulate(x, d, n, rng)
        est = mc_estimate((f(xs) - f(x) - cv) / d)
        quotients.append(est.mean)
        errs.append(est.stderr)
    value, w = richardson(quotients, ratios[0])
    se = float(np.sqrt(np.sum((w * np.array(errs)) ** 2)))
    diff = abs(value - operator_value)
    tol = max(rel_tol * abs(operator_value), sigmas * se)
    return Check("generator consistency", bool(diff <= tol), diff, tol, statement,
                 {"extrapolated": value, "stderr": se, "operator": operator_value,
                  "quotients": quotients, "deltas": deltas})
