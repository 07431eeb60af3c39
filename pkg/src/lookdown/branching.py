"""Continuous-state branching processes, with and without immigration.

The cumulant u(lambda, t) solves du/dt = -psi(u), u(lambda, 0) = lambda.
Paths are simulated on a grid: the continuous part uses the exact
square-root diffusion transition (a scaled noncentral chi-square), and the
finitely many jump sizes are added per step from Poisson counts.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from lookdown.errors import ConfigError, SolverFailure
from lookdown.measures import (BranchingMechanism, SubordinatorExponent, phi_tilde, psi,
                               psi_prime_at_zero)
from lookdown.stats import Check, MCEstimate, TestReport, agree, mc_estimate

RESIDUAL_TOL = 1e-8
ABSORB_EPS = 1e-12
STATEMENT_SIZE_BIAS = "size-biased CB is a CBI with immigration psi'(.) - psi'(0+)"
STATEMENT_TAGGED = "tagged jumps of the size-biased CB form a subordinator with Levy measure u nu(du)"


@dataclass(frozen=True)
class CumulantSolution:
    lam: float
    times: np.ndarray
    u: np.ndarray
    step: float
    order: int = 4
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # the solution at half steps, for Simpson sums of functionals of u
    fine_u: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0

    def simpson(self, g) -> np.ndarray:
        """Cumulative integrals int_0^{t_i} g(u(s)) ds at the grid nodes."""
        vals = np.asarray(g(self.fine_u), dtype=float)
        pieces = (vals[0:-1:2] + 4 * vals[1::2] + vals[2::2]) * self.step / 6.0
        return np.concatenate(([0.0], np.cumsum(pieces)))


def _rk4(fun, y, h):
    k1 = fun(y)
    k2 = fun(y + 0.5 * h * k1)
    k3 = fun(y + 0.5 * h * k2)
    k4 = fun(y + h * k3)
    return y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def solve_u(bm: BranchingMechanism, lam: float, T: float, step: float = 1e-2,
            tol: float = RESIDUAL_TOL) -> CumulantSolution:
    """Fourth-order integration of du/dt = -psi(u) on [0, T]."""
    if lam < 0:
        raise ConfigError("lambda must be nonnegative")
    if not step > 0 or T < 0:
        raise ConfigError("need step > 0 and T >= 0")
    n = max(1, int(math.ceil(T / step - 1e-12)))
    h = T / n
    fine = np.empty(2 * n + 1)
    fine[0] = lam

    def rhs(v):
        return -psi(bm, v)

    for i in range(2 * n):
        fine[i + 1] = _rk4(rhs, fine[i], 0.5 * h)
    times = np.linspace(0.0, T, n + 1)
    sol = CumulantSolution(float(lam), times, fine[::2].copy(), h, 4, np.zeros(n + 1), fine)
    if np.any(sol.u < -1e-12):
        raise SolverFailure("the cumulant left [0, inf)")
    residual = sol.u + sol.simpson(lambda v: psi(bm, v)) - lam
    sol = CumulantSolution(sol.lam, times, sol.u, h, 4, residual, fine)
    if sol.max_residual > tol:
        raise SolverFailure(f"integral-equation residual {sol.max_residual:.3g} exceeds {tol:g}")
    return sol


def u_value(bm: BranchingMechanism, lam: float, t: float, step: float = 1e-2) -> float:
    return float(solve_u(bm, lam, t, step).u[-1])


def cb_laplace(x: float, lam: float, t: float, bm: BranchingMechanism, step: float = 1e-2) -> float:
    if x < 0 or lam < 0 or t < 0:
        raise ConfigError("inputs must be nonnegative")
    return math.exp(-x * u_value(bm, lam, t, step))


def cbi_laplace(x: float, lam: float, t: float, bm: BranchingMechanism,
                phi: SubordinatorExponent | None = None, step: float = 1e-2) -> float:
    """exp(-x u(lam,t) - int_0^t phi(u(lam,s)) ds); phi defaults to phi_tilde(bm)."""
    if x < 0 or lam < 0 or t < 0:
        raise ConfigError("inputs must be nonnegative")
    phi = phi_tilde(bm) if phi is None else phi
    sol = solve_u(bm, lam, t, step)
    return math.exp(-x * sol.u[-1] - sol.simpson(phi)[-1])


def feller_cbi_laplace(x: float, lam: float, t: float) -> float:
    """Closed form for psi(l) = l^2/2 with immigration phi(l) = l."""
    d = 1.0 + lam * t / 2.0
    return math.exp(-x * lam / d) / d ** 2


def size_biased_cb_laplace(x: float, lam: float, t: float, bm: BranchingMechanism,
                           step: float = 1e-2, h: float = 1e-4) -> float:
    """E[exp(-lam Y_t) Y_t] e^{psi'(0+) t} / x for the CB started at x, from the cumulant.

    -d/dlam exp(-x u(lam,t)) by a central difference of the ODE flow.
    """
    up = u_value(bm, lam + h, t, step)
    lo = u_value(bm, max(lam - h, 0.0), t, step)
    du = (up - lo) / (lam + h - max(lam - h, 0.0))
    return du * math.exp(-x * u_value(bm, lam, t, step) + psi_prime_at_zero(bm) * t)


# -- paths --------------------------------------------------------------------

@dataclass
class CBEnsemble:
    """Grid paths of n independent CB (or CBI) processes."""

    times: np.ndarray
    Y: np.ndarray  # (n, steps+1), or (n, 1) holding the endpoint only
    jump_times: np.ndarray  # (n, J), padded with inf
    jump_sizes: np.ndarray
    jump_pre: np.ndarray  # mass just before the jump
    tagged: np.ndarray  # (n, J) bool
    n_jumps: np.ndarray
    tau: np.ndarray  # absorption time, inf if none
    immigration: bool = False

    @property
    def endpoint(self) -> np.ndarray:
        return self.Y[:, -1]

    @property
    def absorbed(self) -> np.ndarray:
        return np.isfinite(self.tau)

    def tagged_sum(self) -> np.ndarray:
        return np.where(self.tagged, self.jump_sizes, 0.0).sum(axis=1)

    def to_csv(self, replica: int = 0) -> str:
        """Path dump: grid rows with jump-size 0, plus one row per jump."""
        if self.Y.shape[1] != self.times.size:
            raise ConfigError("path was simulated without the grid record")
        rows = [(float(t), float(y), 0.0, 0) for t, y in zip(self.times, self.Y[replica])]
        for j in range(int(self.n_jumps[replica])):
            t = float(self.jump_times[replica, j])
            u = float(self.jump_sizes[replica, j])
            rows.append((t, float(self.jump_pre[replica, j]) + u, u, int(self.tagged[replica, j])))
        rows.sort(key=lambda r: (r[0], r[2] > 0))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "Y", "jump-size", "tagged"])
        for r in rows:
            w.writerow([repr(r[0]), repr(r[1]), repr(r[2]), r[3]])
        return buf.getvalue()


def _diffusion_step(y, a, sigma2, delta, h, rng):
    """Exact transition of dY = (delta + a Y) dt + sqrt(sigma2 Y) dB over time h."""
    growth = math.exp(a * h)
    if sigma2 == 0.0:
        drift = delta * h if a == 0.0 else delta * (growth - 1.0) / a
        return y * growth + drift
    scale = sigma2 * h / 4.0 if abs(a * h) < 1e-12 else sigma2 * (growth - 1.0) / (4.0 * a)
    nonc = y * growth / scale
    if delta == 0.0:
        # zero degrees of freedom: Poisson mixture of Gamma laws with an atom at 0
        k = rng.poisson(nonc / 2.0)
        return scale * 2.0 * rng.gamma(np.maximum(k, 1e-300)) * (k > 0)
    return scale * rng.noncentral_chisquare(4.0 * delta / sigma2, nonc)


def simulate_cb(bm: BranchingMechanism, x0, horizon: float, dt: float, rng: np.random.Generator,
                n: int = 1, immigration: bool = False, record: bool = True) -> CBEnsemble:
    """CB paths; with ``immigration`` the CBI(psi, phi_tilde) of the size-biased process.

    Jumps of size u_i arrive at rate Y w_i (branching) and, with immigration,
    at rate u_i w_i; each jump is tagged with probability u / (Y_- + u).
    """
    if not dt > 0 or not horizon >= 0:
        raise ConfigError("need dt > 0 and horizon >= 0")
    y = np.asarray(x0, dtype=float) * np.ones(n)
    if np.any(y < 0):
        raise ConfigError("x0 must be nonnegative")
    steps = max(1, int(round(horizon / dt))) if horizon > 0 else 0
    h = horizon / steps if steps else 0.0
    times = np.linspace(0.0, horizon, steps + 1)
    a = bm.linear_drift
    delta = bm.sigma2 if immigration else 0.0
    sizes, weights = bm.sizes, bm.weights
    path = np.empty((n, steps + 1)) if record else None
    if record:
        path[:, 0] = y
    tau = np.where(y <= 0.0, 0.0, np.inf) if not immigration else np.full(n, np.inf)
    y = np.where(np.isfinite(tau), 0.0, y)
    jt, js, jp, jg = [], [], [], []  # per-event (replica, value) chunks
    for k in range(steps):
        alive = ~np.isfinite(tau)
        y = np.where(alive, _diffusion_step(y, a, bm.sigma2, delta, h, rng), 0.0)
        t_now = times[k + 1]
        for u, w in zip(sizes, weights):
            counts = rng.poisson(np.where(alive, y * w * h, 0.0))
            if immigration:
                counts = counts + rng.poisson(u * w * h, size=n)
            while np.any(counts > 0):
                idx = np.nonzero(counts > 0)[0]
                pre = y[idx]
                tag = rng.random(idx.size) < u / (pre + u)
                jt.append((idx, np.full(idx.size, t_now)))
                js.append(np.full(idx.size, u))
                jp.append(pre)
                jg.append(tag)
                y[idx] = pre + u
                counts[idx] -= 1
        if not immigration:
            dead = alive & (y < ABSORB_EPS)
            tau[dead] = t_now
            y[dead] = 0.0
        if record:
            path[:, k + 1] = y
    if not record:
        path = y[:, None].copy()
    jump_times, jump_sizes, jump_pre, tagged, n_jumps = _pack_jumps(n, jt, js, jp, jg)
    return CBEnsemble(times, path, jump_times, jump_sizes, jump_pre, tagged, n_jumps, tau,
                      immigration)


def simulate_cbi(bm: BranchingMechanism, x0, horizon: float, dt: float,
                 rng: np.random.Generator, n: int = 1, record: bool = True) -> CBEnsemble:
    return simulate_cb(bm, x0, horizon, dt, rng, n, immigration=True, record=record)


def _pack_jumps(n, jt, js, jp, jg):
    if not jt:
        return (np.full((n, 1), np.inf), np.zeros((n, 1)), np.zeros((n, 1)),
                np.zeros((n, 1), dtype=bool), np.zeros(n, dtype=np.int64))
    rep = np.concatenate([r for r, _ in jt])
    tim = np.concatenate([t for _, t in jt])
    siz, pre, tag = np.concatenate(js), np.concatenate(jp), np.concatenate(jg)
    order = np.argsort(rep, kind="stable")  # chunks are already time ordered
    rep, tim, siz, pre, tag = rep[order], tim[order], siz[order], pre[order], tag[order]
    n_jumps = np.bincount(rep, minlength=n).astype(np.int64)
    width = max(1, int(n_jumps.max()))
    start = np.concatenate(([0], np.cumsum(n_jumps)[:-1]))
    col = np.arange(rep.size) - start[rep]
    out_t = np.full((n, width), np.inf)
    out_s = np.zeros((n, width))
    out_p = np.zeros((n, width))
    out_g = np.zeros((n, width), dtype=bool)
    out_t[rep, col], out_s[rep, col], out_p[rep, col], out_g[rep, col] = tim, siz, pre, tag
    return out_t, out_s, out_p, out_g, n_jumps


# -- checks -------------------------------------------------------------------

def size_bias_check(bm: BranchingMechanism, x0: float, t: float, lams: Sequence[float],
                    n: int, dt: float, rng: np.random.Generator, sigmas: float = 3.0,
                    step: float = 1e-2) -> TestReport:
    """Size-biased CB, simulated CBI and the analytic CBI transform at each lambda."""
    if not x0 > 0:
        raise ConfigError("x0 must be positive")
    rep = TestReport("size-bias")
    cb = simulate_cb(bm, x0, t, dt, rng, n, record=False).endpoint
    cbi = simulate_cbi(bm, x0, t, dt, rng, n, record=False).endpoint
    growth = math.exp(psi_prime_at_zero(bm) * t)
    for lam in lams:
        a = mc_estimate(np.exp(-lam * cb) * cb / x0 * growth)
        b = mc_estimate(np.exp(-lam * cbi))
        c = cbi_laplace(x0, lam, t, bm, step=step)
        c2 = size_biased_cb_laplace(x0, lam, t, bm, step=step)
        rep.add_estimate(f"size-biased CB lambda={lam:g}", a)
        rep.add_estimate(f"CBI lambda={lam:g}", b)
        rep.add_estimate(f"analytic CBI lambda={lam:g}", c)
        for name, (ok, diff, tol) in (("size-biased CB vs CBI", agree(a, b, sigmas)),
                                      ("size-biased CB vs analytic", agree(a, c, sigmas)),
                                      ("CBI vs analytic", agree(b, c, sigmas))):
            rep.add_check(Check(f"{name} lambda={lam:g}", ok, diff, tol, STATEMENT_SIZE_BIAS))
        diff = abs(c - c2)
        rep.add_check(Check(f"analytic legs agree lambda={lam:g}", diff <= 1e-6, diff, 1e-6,
                            STATEMENT_SIZE_BIAS))
    return rep


def tagged_exponent(bm: BranchingMechanism, lam: float) -> float:
    """sum_i w_i u_i (1 - exp(-lam u_i))."""
    return float(np.sum(bm.weights * bm.sizes * (1.0 - np.exp(-lam * bm.sizes))))


def tagged_jump_test(bm: BranchingMechanism, x0: float, t: float, lams: Sequence[float],
                     n: int, dt: float, rng: np.random.Generator,
                     sigmas: float = 3.0) -> TestReport:
    if not t > 0:
        raise ConfigError("t must be positive")
    rep = TestReport("tagged-jumps")
    ens = simulate_cbi(bm, x0, t, dt, rng, n, record=False)
    s = ens.tagged_sum()
    for lam in lams:
        target = tagged_exponent(bm, lam)
        lt = mc_estimate(np.exp(-lam * s))
        if lt.mean <= 0:
            raise SolverFailure("empirical Laplace transform vanished")
        exponent = MCEstimate(-math.log(lt.mean) / t, lt.stderr / (lt.mean * t), lt.n)
        rep.add_estimate(f"tagged exponent lambda={lam:g}", exponent)
        rep.add_estimate(f"target exponent lambda={lam:g}", target)
        if exponent.stderr == 0.0:
            ok, diff, tol = abs(exponent.mean - target) <= 1e-12, abs(exponent.mean - target), 1e-12
        else:
            ok, diff, tol = agree(exponent, target, sigmas)
        rep.add_check(Check(f"tagged exponent lambda={lam:g}", ok, diff, tol, STATEMENT_TAGGED))
    return rep
