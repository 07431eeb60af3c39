"""Compiled inner loops for the lookdown engine.

Types are stored as float64 (alphabet symbols are 0.0, 1.0, ...).  Levels
are 0-based here; the Python layer converts to 1-based levels.  Every
replica reseeds numba's generator from its own seed, so ensemble output does
not depend on the number of worker threads.
"""
import math
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

NU_NONE, NU_BETA, NU_ATOMS = 0, 1, 2
MUT_NONE, MUT_CHAIN, MUT_BROWNIAN = 0, 1, 2
H1_NONE, H1_CHAIN, H1_BROWNIAN = 0, 1, 2
MODE_POISSON, MODE_GRID, MODE_REPLAY = 0, 1, 2

STATUS_OK, STATUS_SAMPLER_FAILURE = 0, 1


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def p2_over_x2(x, n):
    """(1 - (1-x)^n - n x (1-x)^(n-1)) / x^2 = sum_{j<n} j (1-x)^(j-1)."""
    if n < 2:
        return 0.0
    if n * x < 0.1:
        y = 1.0 - x
        acc = 0.0
        for j in range(n - 1, 0, -1):
            acc = acc * y + j
        return acc
    ly = math.log1p(-x) if x < 1.0 else -np.inf
    return (1.0 - math.exp(n * ly) - n * x * math.exp((n - 1) * ly)) / (x * x)


@njit(cache=True)
def _draw_beta_frequency(alpha, n, max_iter):
    """Rejection under the envelope min(C x^2, 1) x^(-1-alpha), C = n(n-1)/2.

    The target p2(x) x^(-1-alpha) (1-x)^(alpha-1) sits below the envelope
    because p2(x) <= min(C x^2, 1); both envelope pieces invert in closed form.
    """
    cn2 = n * (n - 1) / 2.0
    xs = 1.0 / math.sqrt(cn2)
    mass_a = cn2 * xs ** (2.0 - alpha) / (2.0 - alpha)
    top = xs ** (-alpha)
    mass_b = (top - 1.0) / alpha
    for _ in range(max_iter):
        if np.random.random() * (mass_a + mass_b) < mass_a:
            x = xs * np.random.random() ** (1.0 / (2.0 - alpha))
            env = cn2 * x * x
        else:
            x = (top - np.random.random() * (top - 1.0)) ** (-1.0 / alpha)
            env = 1.0
        if x <= 0.0 or x > 1.0:
            continue
        accept = p2_over_x2(x, n) * x * x * (1.0 - x) ** (alpha - 1.0) / env
        if np.random.random() <= accept:
            return x
    return -1.0


@njit(cache=True)
def draw_frequency(code, alpha, xs, cdf, n, max_iter):
    """Draw x ~ p2(x) nu(dx); returns -1 after max_iter proposals.

    Atom lists use the x^2-biased atom law as proposal with acceptance
    p2(x) / (C(n,2) x^2).
    """
    if code == NU_BETA:
        return _draw_beta_frequency(alpha, n, max_iter)
    cn2 = n * (n - 1) / 2.0
    for _ in range(max_iter):
        i = np.searchsorted(cdf, np.random.random(), side="right")
        x = xs[min(i, xs.shape[0] - 1)]
        if np.random.random() * cn2 <= p2_over_x2(x, n):
            return x
    return -1.0


@njit(cache=True)
def jump_frequencies(size, code, alpha, xs, cdf, n, max_iter):
    out = np.empty(size)
    for i in range(size):
        out[i] = draw_frequency(code, alpha, xs, cdf, n, max_iter)
        if out[i] < 0.0:
            break
    return out


@njit(cache=True)
def _binomial_at_least_two(n, x):
    """Binomial(n, x) conditioned on >= 2, by inversion in log space."""
    if x >= 1.0:
        return n
    if n == 2:
        return 2
    target = np.random.random() * p2_over_x2(x, n) * x * x
    lr = math.log(x) - math.log1p(-x)
    lp = (math.lgamma(n + 1.0) - math.lgamma(3.0) - math.lgamma(n - 1.0)
          + 2.0 * math.log(x) + (n - 2) * math.log1p(-x))
    acc = 0.0
    for k in range(2, n + 1):
        acc += math.exp(lp)
        if acc >= target:
            return k
        if k < n:
            lp += math.log((n - k) / (k + 1.0)) + lr
    return n


@njit(cache=True)
def _subset(n, k, mask, block):
    """Uniform k-subset of 0..n-1 written sorted into block[:k] (Floyd)."""
    m = 0
    for j in range(n - k, n):
        t = np.random.randint(0, j + 1)
        if mask[t]:
            t = j
        mask[t] = True
        block[m] = t
        m += 1
    if k <= 32:
        for i in range(1, k):
            v = block[i]
            j = i - 1
            while j >= 0 and block[j] > v:
                block[j + 1] = block[j]
                j -= 1
            block[j + 1] = v
        for i in range(k):
            mask[block[i]] = False
    else:
        m = 0
        for i in range(n):
            if mask[i]:
                block[m] = i
                m += 1
                mask[i] = False
    return k


@njit(cache=True)
def _pair(n, block):
    a = np.random.randint(0, n)
    b = np.random.randint(0, n - 1)
    if b >= a:
        b += 1
    if a > b:
        a, b = b, a
    block[0] = a
    block[1] = b
    return 2


@njit(cache=True)
def draw_event(n, kingman_rate, total_rate, code, alpha, xs, cdf, max_iter, mask, block):
    """Draw the block of one state-changing event at truncation n.

    Returns (size, frequency); frequency is 0 for a Kingman pair and -1 when
    the frequency sampler failed.
    """
    if kingman_rate >= total_rate or (
            kingman_rate > 0.0 and np.random.random() * total_rate < kingman_rate):
        return _pair(n, block), 0.0
    x = draw_frequency(code, alpha, xs, cdf, n, max_iter)
    if x < 0.0:
        return 0, -1.0
    k = _binomial_at_least_two(n, x)
    return _subset(n, k, mask, block), x


@njit(cache=True)
def bernoulli_block(n, x, mask, block):
    """Unconditioned Bernoulli(x) selection over n levels; size may be < 2."""
    k = np.random.binomial(n, x)
    return _subset(n, k, mask, block)


@njit(cache=True)
def event_stream(n, horizon, kingman_rate, total_rate, code, alpha, xs, cdf, max_iter):
    """Homogeneous stream of state-changing events on [0, horizon]."""
    cap = 64
    times = np.empty(cap)
    freqs = np.empty(cap)
    ptr = np.zeros(cap + 1, dtype=np.int64)
    levels = np.empty(4 * cap, dtype=np.int64)
    mask = np.zeros(n, dtype=np.bool_)
    block = np.empty(n, dtype=np.int64)
    m = 0
    status = STATUS_OK
    if total_rate <= 0.0:
        return times[:0], freqs[:0], ptr[:1], levels[:0], status
    t = np.random.exponential(1.0 / total_rate)
    while t <= horizon:
        k, x = draw_event(n, kingman_rate, total_rate, code, alpha, xs, cdf, max_iter, mask, block)
        if x < 0.0:
            status = STATUS_SAMPLER_FAILURE
            break
        if m == times.shape[0]:
            times = np.concatenate((times, np.empty(m)))
            freqs = np.concatenate((freqs, np.empty(m)))
            ptr = np.concatenate((ptr, np.zeros(m, dtype=np.int64)))
        while ptr[m] + k > levels.shape[0]:
            levels = np.concatenate((levels, np.empty(levels.shape[0], dtype=np.int64)))
        times[m] = t
        freqs[m] = x
        levels[ptr[m]:ptr[m] + k] = block[:k]
        ptr[m + 1] = ptr[m] + k
        m += 1
        t += np.random.exponential(1.0 / total_rate)
    return times[:m], freqs[:m], ptr[:m + 1], levels[:ptr[m]], status


# -- state updates ----------------------------------------------------------

@njit(cache=True)
def _bm_catch_up(types, last, lvl, now, diff, drift1):
    dt = now - last[lvl]
    if dt > 0.0:
        inc = math.sqrt(diff * dt) * np.random.standard_normal()
        if lvl == 0:
            inc += drift1 * dt
        types[lvl] += inc
        last[lvl] = now


@njit(cache=True)
def apply_block(types, last, block, k, now, lazy_bm, diff, drift1):
    """Children in block[1:k] copy the type at block[0]; other levels shift up."""
    p = block[0]
    if lazy_bm:
        _bm_catch_up(types, last, p, now, diff, drift1)
    parent = types[p]
    hi = types.shape[0] - 1
    for j in range(k - 1, 0, -1):
        cj = block[j]
        # occupants above child j move up by the j children at or below them
        for lvl in range(hi, cj, -1):
            types[lvl] = types[lvl - j]
        types[cj] = parent
        if lazy_bm:
            for lvl in range(hi, cj, -1):
                last[lvl] = last[lvl - j]
            last[cj] = now
        hi = cj - 1


@njit(cache=True)
def _chain_jump(types, lvl, q, urate):
    a = int(types[lvl])
    u = np.random.random() * urate
    acc = 0.0
    for b in range(q.shape[0]):
        if b != a:
            acc += q[a, b]
            if u < acc:
                types[lvl] = b
                return


@njit(cache=True)
def _h_value(h_amp, h_mu, h_end, t, a):
    s = 0.0
    for k in range(h_mu.shape[0]):
        s += (h_amp[a, k] * np.exp(h_mu[k] * (h_end - t))).real
    return s


@njit(cache=True)
def _chain_jump_h(types, q, urate, h_amp, h_mu, h_end, t):
    a = int(types[0])
    ha = _h_value(h_amp, h_mu, h_end, t, a)
    u = np.random.random() * urate
    acc = 0.0
    for b in range(q.shape[0]):
        if b != a:
            acc += q[a, b] * _h_value(h_amp, h_mu, h_end, t, b) / ha
            if u < acc:
                types[0] = b
                return


@njit(cache=True)
def _record(types, si, n_sym, n_keep, counts, first, snap):
    n = types.shape[0]
    for s in range(n_sym):
        first[si, s] = -1
        counts[si, s] = 0
    for lvl in range(n):
        v = types[lvl]
        s = int(v)
        if s >= 0 and s < n_sym and s == v:
            counts[si, s] += 1
            if first[si, s] < 0:
                first[si, s] = lvl + 1
    for lvl in range(n_keep):
        snap[si, lvl] = types[lvl]


@njit(cache=True)
def _next_grid_pair(level, cl, grid):
    if level >= cl[cl.shape[0] - 1]:
        return np.inf
    i = np.searchsorted(cl, level, side="right") - 1
    return grid[i] + (level - cl[i]) / (cl[i + 1] - cl[i]) * (grid[i + 1] - grid[i])


@njit(cache=True)
def run_replica(types, mode,
                kingman_rate, total_rate, code, alpha, xs, cdf, max_iter, restrict_k,
                grid, cumlam, jump_t, jump_x, n_jumps, tau,
                ev_t, ev_ptr, ev_lv,
                mut_kind, q, urate, diff,
                h1_kind, h_amp, h_mu, h_end, u1, drift1,
                sample_times, n_sym, n_keep, counts, first, snap, dropped):
    """Run one replica in place and record at each sample time.

    ``mode`` selects the event source: a homogeneous Poisson stream at the
    truncated total rate, a mass-driven stream (pair intensity given by the
    cumulative table ``cumlam`` over ``grid`` plus explicit jumps) or the
    replay of a fixed event list.
    """
    n = types.shape[0]
    n_s = sample_times.shape[0]
    mask = np.zeros(n, dtype=np.bool_)
    block = np.empty(n, dtype=np.int64)
    last = np.zeros(n)
    lazy_bm = mut_kind == MUT_BROWNIAN
    if not lazy_bm:
        diff = 0.0
    d1 = drift1 if h1_kind == H1_BROWNIAN else 0.0

    mut_lo = 1 if h1_kind == H1_CHAIN else 0
    mut_total = (n - mut_lo) * urate if mut_kind == MUT_CHAIN else 0.0
    next_mut = np.random.exponential(1.0 / mut_total) if mut_total > 0.0 else np.inf
    next_m1 = np.inf
    if h1_kind == H1_CHAIN and u1 > 0.0:
        next_m1 = np.random.exponential(1.0 / u1)

    next_rep = np.inf
    pair_level = 0.0
    next_jump = np.inf
    ji = 0
    ei = 0
    if mode == MODE_POISSON:
        if total_rate > 0.0:
            next_rep = np.random.exponential(1.0 / total_rate)
    elif mode == MODE_GRID:
        pair_level = np.random.exponential(1.0)
        next_rep = _next_grid_pair(pair_level, cumlam, grid)
        if n_jumps > 0:
            next_jump = jump_t[0]
    else:
        if ev_t.shape[0] > 0:
            next_rep = ev_t[0]
    stop = tau if mode == MODE_GRID else np.inf

    # restrict_k > 0 skips events touching two of the first restrict_k levels;
    # restrict_k < 0 only counts them
    window = abs(restrict_k)
    n_drop = 0
    si = 0
    while si < n_s:
        ts = sample_times[si]
        tmin = min(next_rep, next_jump, next_mut, next_m1)
        if tmin >= stop:
            tmin = np.inf
        if ts <= tmin:
            if lazy_bm:
                now = min(ts, stop)
                for lvl in range(n):
                    _bm_catch_up(types, last, lvl, now, diff, d1)
            _record(types, si, n_sym, n_keep, counts, first, snap)
            dropped[si] = n_drop
            si += 1
            continue
        if tmin == next_rep:
            now = next_rep
            if mode == MODE_POISSON:
                k, x = draw_event(n, kingman_rate, total_rate, code, alpha, xs, cdf,
                                  max_iter, mask, block)
                if x < 0.0:
                    return STATUS_SAMPLER_FAILURE
                next_rep = now + np.random.exponential(1.0 / total_rate)
            elif mode == MODE_GRID:
                k = _pair(n, block)
                pair_level += np.random.exponential(1.0)
                next_rep = _next_grid_pair(pair_level, cumlam, grid)
            else:
                k = 0
                for j in range(ev_ptr[ei], ev_ptr[ei + 1]):
                    if ev_lv[j] < n:
                        block[k] = ev_lv[j]
                        k += 1
                ei += 1
                next_rep = ev_t[ei] if ei < ev_t.shape[0] else np.inf
            if k >= 2:
                inside = 0
                for j in range(k):
                    if block[j] < window:
                        inside += 1
                if inside >= 2:
                    n_drop += 1
                if inside < 2 or restrict_k <= 0:
                    apply_block(types, last, block, k, now, lazy_bm, diff, d1)
        elif tmin == next_jump:
            now = next_jump
            k = bernoulli_block(n, jump_x[ji], mask, block)
            if k >= 2:
                apply_block(types, last, block, k, now, lazy_bm, diff, d1)
            ji += 1
            next_jump = jump_t[ji] if ji < n_jumps else np.inf
        elif tmin == next_mut:
            lvl = mut_lo + np.random.randint(0, n - mut_lo)
            _chain_jump(types, lvl, q, urate)
            next_mut += np.random.exponential(1.0 / mut_total)
        else:
            _chain_jump_h(types, q, u1, h_amp, h_mu, h_end, next_m1)
            next_m1 += np.random.exponential(1.0 / u1)
    return STATUS_OK


@njit(parallel=True, cache=True)
def run_ensemble(seeds, init, mode,
                 kingman_rate, total_rate, code, alpha, xs, cdf, max_iter, restrict_k,
                 grid, cumlam, jump_t, jump_x, n_jumps, tau,
                 ev_t, ev_ptr, ev_lv,
                 mut_kind, q, urate, diff,
                 h1_kind, h_amp, h_mu, h_end, u1, drift1,
                 sample_times, n_sym, n_keep):
    """Replica-parallel driver; grid arrays carry one row per replica."""
    r_count, n = init.shape
    n_s = sample_times.shape[0]
    counts = np.zeros((r_count, n_s, n_sym), dtype=np.int64)
    first = np.zeros((r_count, n_s, n_sym), dtype=np.int64)
    snap = np.zeros((r_count, n_s, n_keep))
    dropped = np.zeros((r_count, n_s), dtype=np.int64)
    status = np.zeros(r_count, dtype=np.int64)
    for r in prange(r_count):
        np.random.seed(seeds[r])
        types = init[r].copy()
        status[r] = run_replica(
            types, mode, kingman_rate, total_rate, code, alpha, xs, cdf, max_iter, restrict_k,
            grid[r], cumlam[r], jump_t[r], jump_x[r], n_jumps[r], tau[r],
            ev_t, ev_ptr, ev_lv,
            mut_kind, q, urate, diff,
            h1_kind, h_amp, h_mu, h_end, u1, drift1,
            sample_times, n_sym, n_keep, counts[r], first[r], snap[r], dropped[r])
    return counts, first, snap, dropped, status
