import math

import numpy as np
import pytest
from numpy.polynomial import Polynomial
from scipy import stats

from lookdown.errors import ConfigError, DomainError
from lookdown.intertwining import (
    Laurent,
    TwoVarTestFn,
    default_family,
    eulerian,
    geometric_moment,
    ghat_apply,
    intertwining_residual,
    kernel_weight,
    khat_apply,
    khat_laurent,
    residual_csv,
    residual_table,
)

FAMILY = default_family()
GRID = np.linspace(0.1, 0.9, 9)


@pytest.mark.parametrize("k", range(6))
def test_eulerian_against_truncated_series(k):
    y = 0.6
    ls = np.arange(1, 400)
    series = np.sum(ls.astype(float) ** k * y ** (ls - 1))
    assert eulerian(k)(y) / (1 - y) ** (k + 1) == pytest.approx(series, rel=1e-12)


@pytest.mark.parametrize("k", range(1, 5))
def test_geometric_moments_match_scipy(k):
    for x in (0.2, 0.5, 0.9):
        assert geometric_moment(k)(x) == pytest.approx(stats.geom.moment(k, x), rel=1e-12)


def test_kernel_weights_sum_to_one():
    ls = np.arange(1, 3000)
    assert sum(kernel_weight(0.3, int(l)) for l in ls) == pytest.approx(1.0)


@pytest.mark.parametrize("f", FAMILY, ids=lambda f: f.name)
def test_khat_against_truncated_sum(f):
    for x in (0.15, 0.5, 0.9):
        brute = sum(kernel_weight(x, l) * f(x, l) for l in range(1, 4000))
        assert khat_apply(f, x) == pytest.approx(brute, rel=1e-10, abs=1e-12)


def test_khat_examples():
    one = FAMILY[0]
    for x in (0.0, 0.3, 1.0):
        assert khat_apply(one, x) == pytest.approx(1.0)
    # at x = 1 the first level is reached with certainty
    f = FAMILY[5]
    assert khat_apply(f, 1.0) == pytest.approx(f(1.0, 1))


def test_khat_at_zero_needs_finite_limit():
    with pytest.raises(DomainError):
        khat_apply(FAMILY[4], 0.0)
    with pytest.raises(DomainError):
        khat_apply(FAMILY[0], 1.5)
    with pytest.raises(ConfigError):
        TwoVarTestFn((), None)


def _ghat_by_difference(f, x, level, c, h=1e-4):
    g = lambda y: f(y, level)
    d1 = (g(x + h) - g(x - h)) / (2 * h)
    d2 = (g(x + h) - 2 * g(x) + g(x - h)) / h**2
    return (0.5 * c * x * (1 - x) * d2 + c * (1 - level * x) * d1
            + 0.5 * c * level * (level - 1) * (f(x, level + 1) - g(x)))


@pytest.mark.parametrize("f", FAMILY, ids=lambda f: f.name)
def test_ghat_against_pointwise_formula(f):
    for x in (0.2, 0.7):
        for level in (1, 2, 3, 4, 9):
            ref = _ghat_by_difference(f, x, level, 1.5)
            assert ghat_apply(f, x, level, 1.5) == pytest.approx(ref, rel=1e-5, abs=1e-5)
    assert ghat_apply(f, 0.5, math.inf, 1.5) == 0.0


@pytest.mark.parametrize("c", [1.0, 2.5])
@pytest.mark.parametrize("f", FAMILY, ids=lambda f: f.name)
def test_intertwining_holds(f, c):
    for x in GRID:
        assert intertwining_residual(f, float(x), c) < 1e-10


def test_intertwining_detects_wrong_generator():
    """Dropping the level-climbing term breaks the identity."""
    f = FAMILY[5]
    x, c = 0.4, 1.0
    lhs_without_climb = sum(
        kernel_weight(x, l) * (_ghat_by_difference(f, x, l, c) - 0.5 * c * l * (l - 1) * (f(x, l + 1) - f(x, l)))
        for l in range(1, 2000))
    rhs = 0.5 * c * x * (1 - x) * khat_laurent(f).deriv().deriv()(x)
    assert abs(lhs_without_climb - rhs) > 1e-3


def test_laurent_derivative():
    q = Laurent(Polynomial([1.0, 2.0, 3.0]), 2)
    x, h = 0.4, 1e-6
    assert q.deriv()(x) == pytest.approx((q(x + h) - q(x - h)) / (2 * h), rel=1e-7)
    assert (q - q)(x) == 0.0


def test_residual_csv_format():
    rows = residual_table(FAMILY[:2], [0.5])
    lines = residual_csv(rows).splitlines()
    assert lines[0] == "f-id,x,lhs,rhs,residual"
    assert lines[1].startswith("one,0.5,")
    assert len(lines) == 3
