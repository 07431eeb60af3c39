import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from lookdown.stats import (
    Check,
    MCEstimate,
    TestReport,
    agree,
    config_hash,
    generator_consistency,
    ks_band,
    martingale_flatness,
    mc_estimate,
    ratio_estimate,
    richardson,
    two_sample_ks,
)


def test_mc_estimate_constant_samples():
    est = mc_estimate([1, 1, 1, 1])
    assert (est.mean, est.stderr, est.n) == (1.0, 0.0, 4)


def test_mc_estimate_two_points():
    est = mc_estimate([0, 2])
    assert est.mean == 1.0
    assert est.stderr == pytest.approx(1.0)  # sd sqrt(2) over sqrt(2)


def test_mc_estimate_uniform_mean():
    est = mc_estimate(np.random.default_rng(0).random(100_000))
    assert abs(est.mean - 0.5) < 3 * est.stderr
    assert est.stderr == pytest.approx(math.sqrt(1 / 12 / 100_000), rel=0.02)


def test_mc_estimate_rejects_bad_input():
    with pytest.raises(ValueError):
        mc_estimate([1.0])
    with pytest.raises(ValueError):
        mc_estimate([1.0, float("nan")])


@settings(max_examples=50)
@given(a=st.lists(st.floats(-100, 100), min_size=2, max_size=30),
       b=st.lists(st.floats(-100, 100), min_size=2, max_size=30),
       c=st.lists(st.floats(-100, 100), min_size=2, max_size=30))
def test_merge_is_associative_and_exact(a, b, c):
    ea, eb, ec = map(mc_estimate, (a, b, c))
    left = ea.merge(eb).merge(ec)
    right = ea.merge(eb.merge(ec))
    full = mc_estimate(a + b + c)
    for m in (left, right):
        assert m.n == full.n
        assert m.mean == pytest.approx(full.mean, abs=1e-9)
        assert m.stderr == pytest.approx(full.stderr, rel=1e-7, abs=1e-9)


def test_ratio_estimate():
    rng = np.random.default_rng(1)
    den = rng.exponential(size=50_000)
    num = 2 * den + rng.normal(scale=0.1, size=den.size)
    r = ratio_estimate(num, den)
    assert abs(r.mean - 2) < 3 * r.stderr
    assert math.isnan(ratio_estimate([1, 2], [0, 0]).mean)


def test_agree():
    est = MCEstimate(1.0, 0.1, 100)
    assert agree(est, 1.25)[0]
    assert not agree(est, 1.35)[0]
    assert agree(est, MCEstimate(1.4, 0.1, 100))[0]  # tolerance 3*sqrt(2)*0.1


def test_ks_matches_scipy():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=400), rng.normal(0.1, size=600)
    d, p = two_sample_ks(a, b)
    ref = sps.ks_2samp(a, b, method="asymp")
    assert d == pytest.approx(ref.statistic, abs=1e-12)
    en = math.sqrt(400 * 600 / 1000)
    assert p == pytest.approx(sps.kstwobign.sf(ref.statistic * en), rel=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=0.1)  # scipy adds a finite-size correction


def test_ks_identical_samples():
    x = np.arange(10.0)
    assert two_sample_ks(x, x) == (0.0, 1.0)


def test_ks_separates_shifted_samples():
    rng = np.random.default_rng(3)
    _, p = two_sample_ks(rng.normal(size=2000), rng.normal(0.5, size=2000))
    assert p < 1e-6


def test_ks_calibration():
    """Under the null the p-value falls below 0.05 about 5% of the time."""
    rng = np.random.default_rng(4)
    ps = [two_sample_ks(rng.random(300), rng.random(300))[1] for _ in range(1000)]
    rate = np.mean(np.array(ps) < 0.05)
    assert abs(rate - 0.05) < 3 * math.sqrt(0.05 * 0.95 / 1000) + 0.01  # asymptotic slack


def test_ks_band():
    assert ks_band(100, 100) == pytest.approx(1.36 * math.sqrt(0.02))


def test_flatness_passes_for_unit_mean_weights():
    rng = np.random.default_rng(5)
    w = rng.exponential(size=(20_000, 3))
    assert martingale_flatness(w, [0.1, 0.2, 0.3]).passed


def test_flatness_catches_scaled_weights():
    rng = np.random.default_rng(5)
    w = 1.1 * rng.exponential(size=(20_000, 3))
    assert not martingale_flatness(w, [0.1, 0.2, 0.3]).passed


def test_flatness_constant_column():
    assert martingale_flatness(np.ones((10, 1)), [1.0]).passed
    with pytest.raises(ValueError):
        martingale_flatness(-np.ones((10, 1)), [1.0])


def test_richardson_removes_polynomial_error():
    ds = np.array([0.04, 0.02, 0.01])
    vals = 3.0 + 2.0 * ds - 5.0 * ds ** 2
    v, w = richardson(vals, 2.0)
    assert v == pytest.approx(3.0, abs=1e-12)
    assert w.sum() == pytest.approx(1.0)


def _brownian(x, d, n, rng):
    return x + math.sqrt(d) * rng.standard_normal(n), np.zeros(n)


def test_generator_consistency_brownian():
    """Half the Laplacian of x^2 is 1."""
    ok = generator_consistency(_brownian, 1.0, lambda y: y ** 2, 0.3, [0.04, 0.02, 0.01],
                               20_000, np.random.default_rng(6))
    assert ok.passed
    bad = generator_consistency(_brownian, 1.5, lambda y: y ** 2, 0.3, [0.04, 0.02, 0.01],
                                20_000, np.random.default_rng(6))
    assert not bad.passed


def test_generator_consistency_validates_ladder():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        generator_consistency(_brownian, 1.0, np.square, 0.0, [0.01, 0.02], 10, rng)
    with pytest.raises(ValueError):
        generator_consistency(_brownian, 1.0, np.square, 0.0, [0.04, 0.02, 0.005], 10, rng)


def test_report_json_roundtrip():
    rep = TestReport("demo", config_hash({"seed": 1}))
    rep.add_estimate("m", mc_estimate([0.0, 2.0]))
    rep.add_estimate("exact", 0.5)
    rep.add_check(Check("a", True, np.float64(0.1), 0.2, "s", {"x": np.arange(2)}))
    rep.add_check(Check("b", False, float("inf"), 1.0))
    data = json.loads(rep.to_json())
    assert data["pass"] is False
    assert data["verdicts"][0]["detail"] == {"x": [0, 1]}
    assert data["verdicts"][1]["statistic"] == "inf"
    assert rep.check("a").passed
    other = TestReport("x")
    other.add_check(Check("c", True, 0.0, 1.0))
    rep.extend(other, "sub: ")
    assert rep.check("sub: c").passed


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1.5]}) == config_hash({"b": [1.5], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
