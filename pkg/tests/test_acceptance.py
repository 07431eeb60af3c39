"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Experiments run in-process from the shipped configs at their stated scale.
Runtimes are measured around the computation only (imports and compiled
kernels are warm after the first experiment).
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import special

from lookdown.branching import cbi_laplace, solve_u
from lookdown.config import load_config
from lookdown.experiments import run_experiment
from lookdown.generators import apply_G0_G1, apply_Gh_via_H, apply_I0_I1, polynomial_family
from lookdown.intertwining import default_family, intertwining_residual
from lookdown.measures import BranchingMechanism, LambdaSpec, pushing_rate

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
GRID = np.linspace(0.1, 0.9, 9)
_RUNS: dict = {}


def _run(name, out_root, **overrides):
    """Run a shipped config once per session; returns (report, seconds)."""
    key = (name, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        cfg = load_config(CONFIGS / f"{name}.yaml", overrides)
        t0 = time.perf_counter()
        outcome = run_experiment(cfg, out_root / name)
        _RUNS[key] = (outcome.report, time.perf_counter() - t0)
    return _RUNS[key]


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _verdict(capsys, number, title, passed, detail):
    with capsys.disabled():
        print(f"\ncriterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
    assert passed, detail


def _checks(report, prefix):
    cs = [c for c in report.verdicts if c.check.startswith(prefix)]
    assert cs, f"no checks named {prefix!r}"
    return cs


def _worst(checks):
    return max(checks, key=lambda c: (not c.passed, c.statistic / c.tolerance if c.tolerance else 0.0))


def test_criterion_01_event_rate(capsys, out_root):
    rep, secs = _run("rates", out_root)
    c = rep.check("event rate matches r_50")
    ok = c.passed and secs < 60
    _verdict(capsys, 1, "engine event rate vs r_50", ok,
             f"|diff|={c.statistic:.4g} tol(3se)={c.tolerance:.4g} runtime={secs:.1f}s<60s")


def test_criterion_02_beta_asymptote(capsys):
    t0 = time.perf_counter()
    a = 1.5
    r = pushing_rate(LambdaSpec.beta(a), 500)
    dev = abs(r * a / (special.gamma(2 - a) * 500 ** a) - 1)
    secs = time.perf_counter() - t0
    _verdict(capsys, 2, "Beta rate asymptote at j=500", dev < 0.05 and secs < 1,
             f"|ratio-1|={dev:.4g} tol=0.05 runtime={secs:.3f}s<1s")


def test_criterion_03_martingale_flatness(capsys, out_root):
    rep, secs = _run("product-h-kingman", out_root)
    cs = _checks(rep, "Q mean is 1") + _checks(rep, "M mean is 1")
    times = sorted({c.check.rsplit("t=", 1)[1] for c in cs})
    ok = all(c.passed for c in cs) and times == ["0.25", "0.5", "1"] and secs < 300
    w = _worst(cs)
    _verdict(capsys, 3, "E[Q_t], E[M_t] flat at 1", ok,
             f"{len(cs)} checks, worst {w.check}: {w.statistic:.4g} vs {w.tolerance:.4g} "
             f"runtime={secs:.0f}s<300s")


@pytest.mark.parametrize("name", ["product-h-kingman", "product-h-beta"])
def test_criterion_04_htransform_equality(capsys, out_root, name):
    rep, secs = _run(name, out_root)
    cs = _checks(rep, "equality for")
    ok = all(c.passed for c in cs) and len(cs) == 3 and secs < 600
    w = _worst(cs)
    _verdict(capsys, 4, f"forgetting construction = reweighting ({name})", ok,
             f"worst {w.check}: {w.statistic:.4g} vs {w.tolerance:.4g} runtime={secs:.0f}s<600s")


def test_criterion_05_conditioning(capsys, out_root):
    rep, secs = _run("conditioning", out_root)
    ks = rep.check("KS p-value at t=4")
    mono = _checks(rep, "KS distance nonincreasing")
    ok = ks.passed and all(c.passed for c in mono) and secs < 600
    _verdict(capsys, 5, "conditioned law converges to the h-transform", ok,
             f"p(t=4)={ks.statistic:.3g}>0.01, monotone within bars: {all(c.passed for c in mono)} "
             f"runtime={secs:.0f}s<600s")


def test_criterion_06_generator_identity(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for spec in (LambdaSpec.kingman(1.0), LambdaSpec.beta(1.5, c=1.0)):
        for f in polynomial_family(4):
            for x in GRID:
                worst = max(worst, abs(apply_Gh_via_H(f, x, 0.5, 2, spec) - sum(apply_G0_G1(f, x, spec))),
                            abs(apply_Gh_via_H(f, x, 0.5, 1, spec) - sum(apply_I0_I1(f, x, spec))))
    secs = time.perf_counter() - t0
    _verdict(capsys, 6, "G^h = G0+G1 (K=2), I0+I1 (K=1)", worst < 1e-8 and secs < 1,
             f"max residual={worst:.3g} tol=1e-8 runtime={secs:.3f}s<1s")


def test_criterion_07_intertwining(capsys):
    t0 = time.perf_counter()
    worst = max(intertwining_residual(f, float(x)) for f in default_family() for x in GRID)
    secs = time.perf_counter() - t0
    _verdict(capsys, 7, "Khat Ghat = G Khat", worst < 1e-8 and secs < 1,
             f"max residual={worst:.3g} tol=1e-8 runtime={secs:.3f}s<1s")


def test_criterion_08_cross_simulator(capsys, out_root):
    rep, secs = _run("generators", out_root)
    c = rep.check("cross-simulator KS p-value at t=0.5")
    _verdict(capsys, 8, "immigration SDE vs restricted engine", c.passed and secs < 300,
             f"p={c.statistic:.3g}>0.01 runtime(whole experiment)={secs:.0f}s<300s")


def test_criterion_09_pathwise_decomposition(capsys, out_root):
    rep, secs = _run("decomposition", out_root)
    cs = _checks(rep, "band ")
    ks = [c for c in cs if c.check.endswith("KS p-value")]
    ok = all(c.passed for c in cs) and len(ks) == 4 and secs < 300
    _verdict(capsys, 9, "three-stage decomposition vs engine", ok,
             f"min band p={min(c.statistic for c in ks):.3g}>0.01 runtime={secs:.0f}s<300s")


def test_criterion_10_cumulant(capsys):
    t0 = time.perf_counter()
    feller = BranchingMechanism(1.0)
    mixed = BranchingMechanism(1.0, 0.0, ((0.5, 1.0),))
    res = max(solve_u(bm, lam, 2.0).max_residual for bm in (feller, mixed) for lam in (0.5, 1.0, 4.0))
    sol = solve_u(feller, 1.0, 2.0)
    closed = float(np.max(np.abs(sol.u - 1.0 / (1.0 + sol.times / 2.0))))
    u_t = solve_u(mixed, 1.0, 0.4).u[-1]
    flow = abs(solve_u(mixed, u_t, 0.9).u[-1] - solve_u(mixed, 1.0, 1.3).u[-1])
    secs = time.perf_counter() - t0
    ok = res < 1e-8 and closed < 1e-6 and flow < 1e-8 and secs < 1
    _verdict(capsys, 10, "cumulant equation", ok,
             f"residual={res:.3g}<1e-8 closed form={closed:.3g}<1e-6 flow={flow:.3g}<1e-8 "
             f"runtime={secs:.3f}s<1s")


def test_criterion_11_size_bias(capsys, out_root):
    rep, secs = _run("cbi", out_root)
    legs = [rep.check(f"{n} lambda=1") for n in
            ("size-biased CB vs CBI", "size-biased CB vs analytic", "CBI vs analytic")]
    analytic = cbi_laplace(1.0, 1.0, 1.0, BranchingMechanism(1.0))
    dev = abs(analytic - math.exp(-2 / 3) / 1.5 ** 2)
    ok = all(c.passed for c in legs) and dev < 1e-6 and secs < 300
    _verdict(capsys, 11, "size-biased CB = CBI, three ways", ok,
             f"MC legs pass: {[c.passed for c in legs]}, analytic {analytic:.8f} vs "
             f"e^(-2/3)/1.5^2 dev={dev:.3g}<1e-6 runtime={secs:.0f}s<300s")


def test_criterion_12_tagged_jumps(capsys, out_root):
    rep, secs = _run("tagged-jumps", out_root)
    cs = _checks(rep, "tagged exponent")
    ok = all(c.passed for c in cs) and len(cs) == 3 and secs < 300
    w = _worst(cs)
    _verdict(capsys, 12, "tagged jumps form the u nu(du) subordinator", ok,
             f"worst {w.check}: {w.statistic:.4g} vs {w.tolerance:.4g} runtime={secs:.0f}s<300s")


@pytest.mark.parametrize("name", ["additive-gfv", "additive-cb"])
def test_criterion_13_additive(capsys, out_root, name):
    rep, secs = _run(name, out_root)
    lvl = _checks(rep, "level ")
    ok = rep.passed and bool(lvl) and secs < 600
    w = _worst(rep.verdicts)
    _verdict(capsys, 13, f"additive h-transform and first-level bias ({name})", ok,
             f"{len(rep.verdicts)} checks, worst {w.check}: {w.statistic:.4g} vs {w.tolerance:.4g} "
             f"runtime={secs:.0f}s<600s")


DETERMINISM = [("rates", None), ("gfv-simulate", 2000), ("product-h-beta", 2000),
               ("additive-cb", 1000), ("additive-gfv", 1000), ("conditioning", 20000),
               ("decomposition", 2000), ("tagged-jumps", 2000), ("intertwining", None)]


def test_criterion_14_determinism(capsys, tmp_path):
    mismatched = []
    for name, replicas in DETERMINISM:
        outs = []
        for run, workers in enumerate((1, None, 1)):
            cfg = load_config(CONFIGS / f"{name}.yaml", {"replicas": replicas})
            cfg = cfg.model_copy(update={"workers": workers})
            d = tmp_path / f"{name}-{run}"
            run_experiment(cfg, d)
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        if not (outs[0] == outs[1] == outs[2]):
            mismatched.append(name)
    _verdict(capsys, 14, "byte-identical outputs across reruns and worker counts", not mismatched,
             f"{len(DETERMINISM)} experiments, mismatches: {mismatched or 'none'}")
