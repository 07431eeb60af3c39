import math

import numpy as np
import pytest
from scipy import stats

from lookdown.engine import (
    OVERCAP,
    Dirichlet,
    MutationModel,
    ParticleState,
    apply_event,
    constant_mass_drive,
    designated_config,
    evolve_mutation,
    expected_product,
    init_exchangeable,
    init_exchangeable_many,
    init_product_h_many,
    run_ensemble,
    run_general,
    run_gfv,
)
from lookdown.errors import ConfigError
from lookdown.events import ReproductionEvent, sample_event_stream, truncate_stream
from lookdown.measures import LambdaSpec, NuSpec, pushing_rate
from lookdown.stats import two_sample_ks

BETA = LambdaSpec.beta(1.5)
KINGMAN = LambdaSpec.kingman(1.0)


# -- initial laws ---------------------------------------------------------

def test_init_point_mass():
    s = init_exchangeable(np.array([0.0, 1.0, 0.0]), 50, np.random.default_rng(0))
    assert np.all(s.types == 1)


def test_init_binomial_concentration():
    s = init_exchangeable(np.array([0.5, 0.5]), 10_000, np.random.default_rng(1))
    assert abs(np.mean(s.types == 0) - 0.5) < 3 * 0.5 / 100


def test_init_dirichlet_beta_binomial():
    """Under Dirichlet(1,1) the count of symbol 0 among N levels is uniform on 0..N."""
    N, reps = 10, 40_000
    types = init_exchangeable_many(Dirichlet((1.0, 1.0)), N, reps, np.random.default_rng(2))
    counts = np.bincount((types == 0).sum(axis=1).astype(int), minlength=N + 1)
    expected = stats.betabinom.pmf(np.arange(N + 1), N, 1, 1) * reps
    assert stats.chisquare(counts, expected).pvalue > 0.01


def test_init_rejects_bad_vector():
    with pytest.raises(ConfigError):
        init_exchangeable(np.array([0.6, 0.6]), 5, np.random.default_rng(0))


def test_product_h_first_levels_uniform_permutation():
    t = init_product_h_many(2, np.array([0.5, 0.5]), 20, 20_000, np.random.default_rng(3))
    first = t[:, :2]
    assert set(map(tuple, first)) == {(0.0, 1.0), (1.0, 0.0)}
    share = np.mean(first[:, 0] == 0)
    assert abs(share - 0.5) < 3 * 0.5 / math.sqrt(20_000)
    assert abs(np.mean(t[:, 2:] == 0) - 0.5) < 0.01


def test_product_h_single_designated_level():
    t = init_product_h_many(1, np.array([0.2, 0.8]), 5, 100, np.random.default_rng(0))
    assert np.all(t[:, 0] == 0)


def test_product_h_dirichlet_weighting():
    """For Dirichlet(1,1) and K=2 the weighted law is Dirichlet(2,2): tail frequency moments."""
    N, reps = 400, 20_000
    t = init_product_h_many(2, Dirichlet((1.0, 1.0)), N, reps, np.random.default_rng(4))
    p = np.mean(t[:, 2:] == 0, axis=1)
    # Beta(2,2): mean 1/2, variance 1/20, plus binomial sampling noise E[p(1-p)]/(N-2)
    var = 1 / 20 + (0.25 - 1 / 20) / (N - 2)
    assert abs(p.mean() - 0.5) < 3 * math.sqrt(var / reps)
    assert abs(p.var() - var) < 0.1 * var


def test_product_h_needs_positive_weight():
    with pytest.raises(ConfigError):
        init_product_h_many(2, np.array([1.0, 0.0]), 5, 3, np.random.default_rng(0))


def test_expected_product_dirichlet():
    assert expected_product(Dirichlet((1.0, 1.0)), 2) == pytest.approx(1 / 6)
    assert expected_product(np.array([0.3, 0.7]), 2) == pytest.approx(0.21)


# -- single events and mutation -------------------------------------------

@pytest.mark.parametrize("types, block, out", [
    ("abc", (1, 2), "aab"),
    ("abcd", (2, 3), "abbc"),
    ("abcd", (1, 3, 4), "abaa"),
])
def test_apply_event_examples(types, block, out):
    codes = {c: float(i) for i, c in enumerate("abcd")}
    s = ParticleState(0.0, np.array([codes[c] for c in types]))
    kind = "kingman" if len(block) == 2 else "jump"
    r = apply_event(s, ReproductionEvent(1.0, block, kind, 0.5 if kind == "jump" else 0.0))
    assert "".join("abcd"[int(v)] for v in r.types) == out


def test_mutation_none_and_zero_time():
    s = ParticleState(0.0, np.array([0.0, 1.0]))
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(evolve_mutation(s, 3.0, MutationModel.none(), rng).types, s.types)
    np.testing.assert_array_equal(evolve_mutation(s, 0.0, MutationModel.brownian(1.0), rng).types, s.types)


def test_mutation_two_state_oracle():
    """P(b at t | a at 0) = (1 - exp(-2t)) / 2 for unit rates both ways."""
    t, n = 0.4, 20_000
    model = MutationModel.chain([[-1.0, 1.0], [1.0, -1.0]])
    s = evolve_mutation(ParticleState(0.0, np.zeros(n)), t, model, np.random.default_rng(5))
    p = (1 - math.exp(-2 * t)) / 2
    assert abs(np.mean(s.types == 1) - p) < 3 * math.sqrt(p * (1 - p) / n)
    np.testing.assert_allclose(model.transition(t)[0, 1], p, rtol=1e-12)


def test_mutation_model_validation():
    with pytest.raises(ConfigError):
        MutationModel.chain([[-1.0, 2.0], [1.0, -1.0]])
    with pytest.raises(ConfigError):
        MutationModel.chain([[1.0, -1.0], [1.0, -1.0]])
    with pytest.raises(ConfigError):
        MutationModel.brownian(0.0)


# -- ensemble kernel ------------------------------------------------------

def test_kernel_replay_matches_reference():
    """The compiled engine replaying a stream equals sequential apply_event."""
    N = 25
    rng = np.random.default_rng(6)
    stream = sample_event_stream(BETA, N, 0.5, rng)
    init = init_exchangeable(np.array([0.2, 0.3, 0.5]), N, rng)
    state = init
    for e in stream:
        state = apply_event(state, e)
    rec = run_ensemble(BETA, init.types[None, :], [0.5], 0, stream=stream, n_sym=3, n_keep=N)
    np.testing.assert_array_equal(rec.snapshot[0, 0], state.types)


def test_truncation_consistency():
    N, n = 40, 12
    rng = np.random.default_rng(7)
    stream = sample_event_stream(BETA, N, 1.0, rng)
    types = init_exchangeable(np.array([0.25] * 4), N, rng).types
    big = run_ensemble(BETA, types[None, :], [1.0], 0, stream=stream, n_sym=4, n_keep=N)
    small = run_ensemble(BETA, types[None, :n], [1.0], 0, stream=truncate_stream(stream, n),
                         n_sym=4, n_keep=n)
    np.testing.assert_array_equal(big.snapshot[0, 0, :n], small.snapshot[0, 0])


def test_no_dynamics_keeps_state():
    init = init_exchangeable_many(np.array([0.4, 0.6]), 30, 5, np.random.default_rng(0))
    rec = run_ensemble(LambdaSpec(), init, [0.0, 1.0, 5.0], 1, n_keep=30)
    for i in range(3):
        np.testing.assert_array_equal(rec.snapshot[:, i], init)


def test_masses_sum_to_one():
    init = init_exchangeable_many(np.array([0.2, 0.3, 0.5]), 50, 20, np.random.default_rng(0))
    rec = run_ensemble(BETA, init, [0.5, 1.0], 2, n_sym=3)
    np.testing.assert_allclose(rec.masses.sum(axis=-1), 1.0, atol=1e-12)


def test_results_independent_of_workers():
    init = init_exchangeable_many(np.array([0.5, 0.5]), 60, 64, np.random.default_rng(0))
    a = run_ensemble(BETA, init, [0.3, 0.6], 11, workers=1, n_keep=5)
    b = run_ensemble(BETA, init, [0.3, 0.6], 11, n_keep=5)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.snapshot, b.snapshot)


def test_restricted_run_never_loses_designated_levels():
    init = init_product_h_many(2, np.array([0.5, 0.5]), 50, 500, np.random.default_rng(1))
    rec = run_ensemble(KINGMAN, init, [0.5, 1.0], 3, restricted_K=2, n_keep=2)
    assert np.all(rec.L(2) == 2)
    np.testing.assert_array_equal(rec.snapshot[:, 0], rec.snapshot[:, 1])
    assert np.all(rec.dropped[:, 1] >= rec.dropped[:, 0])


def test_L_equals_K_iff_no_event_hits_two_of_first_K():
    """Pathwise: {L(t)=K} = {L(0)=K} and no event touched two of the first K levels."""
    init = init_exchangeable_many(np.array([0.5, 0.5]), 40, 3000, np.random.default_rng(2))
    rec = run_ensemble(BETA, init, [0.0, 0.2, 0.5], 4, count_K=2)
    L = rec.L(2)
    for i in (1, 2):
        np.testing.assert_array_equal(L[:, i] == 2, (L[:, 0] == 2) & (rec.dropped[:, i] == 0))


def test_L_overcap_when_type_absent():
    init = np.zeros((1, 10))
    rec = run_ensemble(KINGMAN, init, [0.1], 0)
    assert rec.L(2)[0, 0] == OVERCAP
    assert rec.L1[0, 0] == 1


def test_probability_L_equals_K_decays():
    reps, t = 20_000, 0.5
    init = init_exchangeable_many(np.array([0.5, 0.5]), 30, reps, np.random.default_rng(3))
    rec = run_ensemble(KINGMAN, init, [t], 5)
    p = np.mean(rec.L(2)[:, 0] == 2)
    target = 2 * 0.25 * math.exp(-pushing_rate(KINGMAN, 2) * t)
    assert abs(p - target) < 3 * math.sqrt(target * (1 - target) / reps)


def test_heterozygosity_moment_ode():
    """E[x(1-x)] = 0.25 exp(-t) under Kingman c=1, estimated by the unbiased n(N-n)/(N(N-1))."""
    N, reps = 200, 4000
    init = init_exchangeable_many(np.array([0.5, 0.5]), N, reps, np.random.default_rng(4))
    rec = run_ensemble(KINGMAN, init, [0.5, 1.0], 6)
    n = rec.counts[..., 0].astype(float)
    h = n * (N - n) / (N * (N - 1.0))
    for i, t in enumerate((0.5, 1.0)):
        se = h[:, i].std(ddof=1) / math.sqrt(reps)
        assert abs(h[:, i].mean() - 0.25 * math.exp(-t)) < 3 * se


def test_pair_exchangeability_and_level_one_sampling():
    reps = 20_000
    init = init_exchangeable_many(np.array([0.3, 0.7]), 30, reps, np.random.default_rng(5))
    rec = run_ensemble(BETA, init, [0.7], 7, n_keep=3)
    x = rec.snapshot[:, 0]
    ab = np.sum((x[:, 0] == 0) & (x[:, 2] == 1))
    ba = np.sum((x[:, 0] == 1) & (x[:, 2] == 0))
    assert stats.binomtest(int(ab), int(ab + ba)).pvalue > 0.01
    diff = (x[:, 0] == 0) - rec.masses[:, 0, 0]
    assert abs(diff.mean()) < 3 * diff.std(ddof=1) / math.sqrt(reps)


def test_run_gfv_single_path():
    init = init_exchangeable(np.array([0.5, 0.5]), 20, np.random.default_rng(0))
    rec = run_gfv(KINGMAN, MutationModel.none(), init, 1.0, [0.5, 1.0], rng=np.random.default_rng(1))
    assert rec.snapshot.shape == (1, 2, 20)
    with pytest.raises(ConfigError):
        run_gfv(KINGMAN, MutationModel.none(), init, 1.0, [2.0])


def test_engine_mutation_marginal():
    reps, t = 20_000, 0.3
    model = MutationModel.chain([[-1.0, 1.0], [1.0, -1.0]])
    rec = run_ensemble(LambdaSpec(), np.zeros((reps, 3)), [t], 8, mutation=model, n_keep=1)
    p = (1 - math.exp(-2 * t)) / 2
    assert abs(np.mean(rec.snapshot[:, 0, 0] == 1) - p) < 3 * math.sqrt(p * (1 - p) / reps)


def test_engine_brownian_variance():
    reps, t = 20_000, 0.5
    rec = run_ensemble(LambdaSpec(), np.zeros((reps, 2)), [t], 9,
                       mutation=MutationModel.brownian(2.0), n_keep=2, n_sym=0)
    x = rec.snapshot[:, 0, 0]
    assert abs(x.var() - 1.0) < 0.05
    assert abs(np.corrcoef(rec.snapshot[:, 0, 0], rec.snapshot[:, 0, 1])[0, 1]) < 0.05


# -- mass-driven mode -----------------------------------------------------

def test_unit_mass_drive_matches_gfv_law():
    N, reps, t = 30, 4000, 0.5
    init = init_exchangeable_many(np.array([0.5, 0.5]), N, reps, np.random.default_rng(6))
    a = run_ensemble(KINGMAN, init, [t], 10)
    b = run_general(constant_mass_drive(1.0, N, t, reps), init, [t], 11)
    _, p = two_sample_ks(a.counts[:, 0, 0], b.counts[:, 0, 0])
    assert p > 0.01
    np.testing.assert_array_equal(b.Y, 1.0)


def test_full_jump_copies_level_one():
    N, reps = 20, 50
    init = init_exchangeable_many(np.array([0.5, 0.5]), N, reps, np.random.default_rng(7))
    drive = constant_mass_drive(0.0, N, 1.0, reps, jumps=[(0.5, 1.0)])
    rec = run_general(drive, init, [0.25, 0.75], 12, n_keep=N)
    np.testing.assert_array_equal(rec.snapshot[:, 0], init)
    np.testing.assert_array_equal(rec.snapshot[:, 1], np.repeat(init[:, :1], N, axis=1))


def test_drive_rejects_oversized_jumps():
    drive = constant_mass_drive(0.0, 5, 1.0, 2, jumps=[(0.5, 1.5)])
    with pytest.raises(ConfigError):
        run_general(drive, np.zeros((2, 5)), [1.0], 0)


def test_designated_config():
    np.testing.assert_array_equal(designated_config(4, 3, 5), [0, 1, 0, 2, 0])
    with pytest.raises(ConfigError):
        designated_config(2, 3, 5)


def test_trajectory_csv_header():
    init = init_exchangeable_many(np.array([0.5, 0.5]), 10, 2, np.random.default_rng(0))
    rec = run_ensemble(KINGMAN, init, [0.1], 0, n_keep=1)
    lines = rec.to_csv(2).splitlines()
    assert lines[0] == "replica,time,Y,L,L1,mass_0,mass_1,x1"
    assert len(lines) == 3
