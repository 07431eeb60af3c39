import math

import numpy as np
import pytest
from numpy.polynomial import Polynomial
from scipy import integrate

from lookdown.errors import ConfigError, DomainError
from lookdown.generators import (
    KINDS,
    TestFn,
    apply_G,
    apply_G0_G1,
    apply_Gh_via_H,
    apply_I0_I1,
    decomposition_weights,
    harmonic_H,
    jump_terms,
    nu_integral,
    operator_value,
    pathwise_decomposition_sim,
    polynomial_family,
    simulate_wf_immigration,
    wf_increment_sampler,
)
from lookdown.measures import LambdaSpec, NuSpec
from lookdown.stats import generator_consistency

KINGMAN = LambdaSpec.kingman(1.0)
ATOMS = LambdaSpec(0.5, NuSpec.from_atoms([(0.3, 2.0), (0.8, 0.5)]))
SPECS = [KINGMAN, LambdaSpec.beta(1.5), LambdaSpec.beta(1.2, c=0.4), ATOMS]
GRID = np.linspace(0.1, 0.9, 9)
HET = TestFn(Polynomial([0, 1, -1]), "x(1-x)")


def test_kingman_heterozygosity_example():
    for x in GRID:
        assert apply_G(HET, x, KINGMAN) == pytest.approx(-x * (1 - x), abs=1e-15)


def test_atom_jump_term_by_hand():
    spec = LambdaSpec(0.0, NuSpec.from_atoms([(0.3, 2.0)]))
    f = TestFn(Polynomial([0, 0, 0, 1]))
    x, y = 0.4, 0.3
    # atoms carry nu-mass, so the jump part is the plain weighted sum
    by_hand = 2.0 * (x * (f(x + (1 - x) * y) - f(x)) + (1 - x) * (f(x - x * y) - f(x)))
    assert apply_G(f, x, spec) == pytest.approx(by_hand, rel=1e-12)


def _beta_oracle(f, x, alpha):
    """Jump part of G under Beta(2-a, a) by quadrature after u = y^(2-a).

    The polynomial integrand is divided by y^2 symbolically so that the
    remaining integrand is smooth in u.
    """
    g = x * (f.poly(Polynomial([x, 1 - x])) - f(x)) + (1 - x) * (f.poly(Polynomial([x, -x])) - f(x))
    q, _ = divmod(g, Polynomial([0, 0, 1]))
    e = 1.0 / (2.0 - alpha)

    def integrand(u):
        y = u ** e
        return q(y) * (1 - y) ** (alpha - 1)

    val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    return e * val


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
@pytest.mark.parametrize("f", polynomial_family(4), ids=lambda f: f.name)
def test_beta_generator_against_quadrature(alpha, f):
    spec = LambdaSpec.beta(alpha, c=0.0)
    for x in (0.15, 0.5, 0.85):
        assert apply_G(f, x, spec) == pytest.approx(_beta_oracle(f, x, alpha), rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("spec", SPECS)
@pytest.mark.parametrize("K", [1, 2])
def test_htransform_identity(spec, K):
    split = apply_G0_G1 if K == 2 else apply_I0_I1
    for f in polynomial_family(4):
        for x in GRID:
            lhs = apply_Gh_via_H(f, x, 0.5, K, spec)
            assert lhs == pytest.approx(sum(split(f, x, spec)), abs=1e-10)


def test_constants_are_annihilated():
    one = TestFn(Polynomial([1.0]))
    for spec in SPECS:
        assert apply_G(one, 0.3, spec) == 0.0
        assert sum(apply_G0_G1(one, 0.3, spec)) == 0.0
        assert sum(apply_I0_I1(one, 0.3, spec)) == 0.0


def test_domain_and_range_errors():
    with pytest.raises(DomainError):
        apply_G(HET, 1.2, KINGMAN)
    with pytest.raises(DomainError):
        apply_Gh_via_H(HET, 0.0, 0.5, 2, KINGMAN)
    with pytest.raises(ConfigError):
        harmonic_H(3, KINGMAN, 0.0)
    with pytest.raises(ConfigError):
        TestFn.from_coeffs(np.ones(8))
    with pytest.raises(ValueError):
        nu_integral(NuSpec.beta(1.5), Polynomial([0, 1, 1]))


def test_test_functions_self_test():
    for f in polynomial_family(4):
        assert f.self_test() < 1e-5


@pytest.mark.parametrize("K", [1, 2])
def test_decomposition_weights_sum_to_one(K):
    for y in (0.0, 0.3, 1.0):
        assert sum(decomposition_weights(y, K).values()) == pytest.approx(1.0)


def test_harmonic_H_kingman_is_space_time_harmonic():
    H, rate = harmonic_H(2, KINGMAN, 0.7)
    f = TestFn(H)
    for x in GRID:
        assert apply_G(f, x, KINGMAN) + rate * H(x) == pytest.approx(0.0, abs=1e-14)


def test_beta_jump_simulation_rejected():
    for kind in KINDS:
        with pytest.raises(ConfigError):
            jump_terms(kind, NuSpec.beta(1.5))
    with pytest.raises(ConfigError):
        jump_terms("bogus", NuSpec.none())


@pytest.mark.parametrize("kind, mean", [
    ("G", lambda x0, t: x0),
    ("G0+G1", lambda x0, t: 0.5 + (x0 - 0.5) * math.exp(-2 * t)),
    ("I0+I1", lambda x0, t: 1 - (1 - x0) * math.exp(-t)),
])
def test_simulator_mean_ode(kind, mean):
    x, _ = simulate_wf_immigration(kind, KINGMAN, 0.3, 0.5, 1e-3, np.random.default_rng(0), 20_000)
    assert np.all((x >= 0) & (x <= 1))
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - mean(0.3, 0.5)) < 3 * se + 2e-3  # Euler bias O(dt)


@pytest.mark.parametrize("kind", KINDS)
def test_generator_consistency_with_atoms(kind):
    f = HET
    chk = generator_consistency(wf_increment_sampler(kind, ATOMS, f), operator_value(kind, f, 0.4, ATOMS),
                                f, 0.4, [0.04, 0.02, 0.01], 40_000, np.random.default_rng(1))
    assert chk.passed, chk.to_dict()


def test_pathwise_decomposition_extremes():
    rng = np.random.default_rng(2)
    x, lv = pathwise_decomposition_sim(1.0, 1.0, 0.5, rng, 100, cap=5)
    assert np.all(lv == 1) and np.all(x == 1.0)
    x, lv = pathwise_decomposition_sim(1.0, 0.0, 0.5, rng, 100, cap=5)
    assert np.all(lv == 6)


def test_pathwise_initial_level_is_geometric():
    n, x0 = 50_000, 0.3
    _, lv = pathwise_decomposition_sim(1.0, x0, 1e-3, np.random.default_rng(3), n, cap=50, dt=1e-3)
    assert abs(np.mean(lv == 1) - x0) < 3 * math.sqrt(x0 * (1 - x0) / n)
    assert abs(np.mean(lv == 2) - x0 * (1 - x0)) < 0.01
