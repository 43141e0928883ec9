import math

import numpy as np
import pytest

from gramphase.metrics import d_sigma
from gramphase.moments import GramTuple, second_moment
from gramphase.priors import (
    generic_linear_prior,
    relu_prior,
    sparse_prior,
    sphere_prior,
    torus_prior,
)
from gramphase.recovery import (
    SAMPLE_COLUMNS,
    STABILITY_COLUMNS,
    MomentAccumulator,
    MraConfig,
    blocks_to_signal,
    cryoem_toy,
    dft_power_spectrum,
    extract_gram,
    gram_objective,
    loglog_slope,
    mean_error,
    mra_simulate,
    noise_stability_experiment,
    population_moment,
    random_symmetric_tuple,
    real_fourier_basis,
    recover_from_gram,
    sample_complexity_experiment,
    shift_action,
    signal_to_blocks,
)
from gramphase.repspec import RepSpec, Signal, zn_rep_spec
from gramphase.serialize import Table

Z8 = zn_rep_spec(8)

# ------------------------------------------------------------ Fourier bridge


def test_fourier_basis_n2():
    F = real_fourier_basis(2)
    s = 1.0 / math.sqrt(2.0)
    assert np.allclose(F, [[s, s], [s, -s]], atol=1e-15)


@pytest.mark.parametrize("N", [4, 8, 16, 32])
def test_fourier_basis_orthonormal(N):
    F = real_fourier_basis(N)
    assert np.allclose(F @ F.T, np.eye(N), atol=1e-12)


def test_fourier_basis_rejects_odd():
    with pytest.raises(ValueError):
        real_fourier_basis(7)


def test_shift_equivariance(rng):
    N = 16
    F = real_fourier_basis(N)
    X = rng.standard_normal((1000, N))
    for s in (1, 3, 8, 15):
        lhs = np.roll(X, s, axis=1) @ F.T
        rhs = X @ F.T @ shift_action(N, s).T
        assert np.abs(lhs - rhs).max() <= 1e-12


def test_shift_action_is_block_orthogonal():
    A = shift_action(12, 5)
    assert np.allclose(A @ A.T, np.eye(12), atol=1e-14)
    assert A[1, 1] == -1.0


def test_parseval_and_round_trip(rng):
    x = rng.standard_normal(16)
    xs = signal_to_blocks(x)
    assert xs.norm() == pytest.approx(np.linalg.norm(x), rel=1e-13)
    assert np.allclose(blocks_to_signal(xs), x, atol=1e-13)


def test_delta_and_constant_signals():
    N = 8
    delta = np.zeros(N)
    delta[0] = 1.0
    g = dft_power_spectrum(delta)
    assert np.allclose([b[0, 0] for b in g.blocks], [1 / N, 1 / N] + [2 / N] * (N // 2 - 1))
    const = signal_to_blocks(np.ones(N)).to_vector()
    assert const[0] == pytest.approx(math.sqrt(N))
    assert np.abs(const[1:]).max() <= 1e-13


def test_blocks_to_signal_rejects_other_spec(rng):
    with pytest.raises(ValueError):
        blocks_to_signal(Signal.random(RepSpec(((2, 4),)), rng))


# ------------------------------------------------------------ moments


def test_mra_identity_noiseless_single_sample(rng):
    x = Signal.random(Z8, rng)
    cfg = MraConfig(Z8, "block_action", 1, 0.0)
    est = mra_simulate(x, cfg, rng, force_identity=True)
    v = x.to_vector()
    assert np.allclose(est.raw, np.outer(v, v), atol=1e-14)


@pytest.mark.parametrize("action", ["block_action", "zn_circulant"])
def test_mra_noiseless_matches_exact_gram_per_sample(rng, action):
    # every draw g.x has the same Gram tuple, so one sample suffices without noise
    x = Signal.random(Z8, rng)
    est = mra_simulate(x, MraConfig(Z8, action, 3, 0.0), rng)
    assert (est.extracted - second_moment(x)).norm() <= 1e-12 * second_moment(x).norm()


def test_mra_law_of_large_numbers(rng):
    x = Signal.random(Z8, rng)
    x = x / x.norm()
    n = 100_000
    est = mra_simulate(x, MraConfig(Z8, "block_action", n, 0.0), rng)
    err = np.linalg.norm(est.raw - population_moment(x))
    assert err <= 2.0 / math.sqrt(n)


def test_mra_zn_time_domain_input(rng):
    x = rng.standard_normal(8)
    est = mra_simulate(x, MraConfig(Z8, "zn_circulant", 10, 0.0), rng)
    assert (est.extracted - dft_power_spectrum(x)).norm() <= 1e-12


def test_mra_seed_reproducible():
    x = Signal.random(Z8, 0)
    cfg = MraConfig(Z8, "zn_circulant", 500, 0.5, seed=9)
    assert np.array_equal(mra_simulate(x, cfg).raw, mra_simulate(x, cfg).raw)


def test_mra_config_validation():
    with pytest.raises(ValueError):
        MraConfig(Z8, "zn_circulant", 0, 0.0)
    with pytest.raises(ValueError):
        MraConfig(Z8, "zn_circulant", 10, -1.0)
    with pytest.raises(ValueError):
        MraConfig(RepSpec(((2, 4),)), "zn_circulant", 10, 0.0)
    with pytest.raises(ValueError):
        MraConfig(Z8, "rotation", 10, 0.0)


def test_extract_gram_identity_moment():
    spec = RepSpec(((3, 2), (1, 1)))
    G = extract_gram(np.eye(spec.ambient_dim), spec)
    assert np.allclose(G.blocks[0], 3.0 * np.eye(2))
    assert np.allclose(G.blocks[1], [[1.0]])


def test_extract_gram_planted_multiplicity_two(rng):
    spec = RepSpec(((3, 2),))
    x = Signal.random(spec, rng)
    G = extract_gram(population_moment(x), spec)
    X = x.blocks[0]
    assert np.allclose(G.blocks[0], X.T @ X, atol=1e-13)


@pytest.mark.parametrize("N", [8, 16, 32])
def test_extract_gram_is_power_spectrum(rng, N):
    x = rng.standard_normal(N)
    G = extract_gram(population_moment(signal_to_blocks(x)), zn_rep_spec(N))
    assert (G - dft_power_spectrum(x)).norm() <= 1e-12 * (1.0 + np.linalg.norm(x) ** 2)


def test_extract_gram_rejects_bad_input():
    with pytest.raises(ValueError):
        extract_gram(np.eye(3), Z8)
    m = np.zeros((8, 8))
    m[0, 1] = 1.0
    with pytest.raises(ValueError):
        extract_gram(m, Z8)


def test_debiased_error_bound(rng):
    sigma, n = 1.0, 20_000
    x = Signal.random(Z8, rng)
    est = mra_simulate(x, MraConfig(Z8, "zn_circulant", n, sigma), rng)
    d = Z8.ambient_dim
    # noise-only part of the debiased moment; the signal part is exact per sample
    assert (est.extracted - second_moment(x)).norm() <= 3.0 * sigma**2 * d / math.sqrt(n)
    assert np.allclose(est.debiased, est.raw - sigma**2 * np.eye(d))


def test_accumulator_stream_equals_batch(rng):
    Y = rng.standard_normal((1000, 6))
    acc = MomentAccumulator(6)
    for chunk in np.array_split(Y, 7):
        acc.update(chunk)
    assert np.abs(acc.mean() - Y.T @ Y / 1000).max() <= 1e-12
    a = MomentAccumulator(6).update(Y[:300])
    b = MomentAccumulator(6).update(Y[300:])
    assert np.abs(a.merge(b).mean() - acc.mean()).max() <= 1e-12
    assert a.merge(b).count == 1000


def test_accumulator_errors():
    with pytest.raises(ValueError):
        MomentAccumulator(3).mean()
    with pytest.raises(ValueError):
        MomentAccumulator(3).update(np.ones((2, 4)))
    with pytest.raises(ValueError):
        MomentAccumulator(3).merge(MomentAccumulator(4))


# ------------------------------------------------------------ objective and recovery


def _zero_gram(spec):
    return GramTuple(spec, tuple(np.zeros((r, r)) for _, r in spec.blocks))


def _priors(rng):
    emb = np.linalg.qr(rng.standard_normal((8, 3)))[0]
    return {
        "linear": generic_linear_prior(Z8, 3, rng),
        "sparse": sparse_prior(Z8, 2, False, rng),
        "relu": relu_prior(Z8, [3, 6, 8, 8], rng),
        "sphere": sphere_prior(Z8, 2, embed=emb),
        "torus": torus_prior(Z8, embed=emb),
    }


@pytest.mark.parametrize("kind", ["linear", "sparse", "relu", "sphere", "torus"])
def test_gradient_matches_finite_differences(rng, kind):
    prior = _priors(rng)[kind]
    G = second_moment(prior.sample(1, rng)[0])
    h = 1e-6
    for theta in prior.sample_params(20, rng):
        _, g = gram_objective(prior, G, theta)
        fd = np.empty_like(g)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (gram_objective(prior, G, theta + e)[0] - gram_objective(prior, G, theta - e)[0]) / (2 * h)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_objective_zero_at_truth(rng):
    prior = generic_linear_prior(Z8, 3, rng)
    theta = prior.sample_params(1, rng)[0]
    f, g = gram_objective(prior, second_moment(prior.signal(theta)), theta)
    assert f <= 1e-24
    assert np.linalg.norm(g) <= 1e-10


def test_recover_from_truth_init_is_immediate(rng):
    prior = generic_linear_prior(zn_rep_spec(16), 3, rng)
    theta = prior.sample_params(1, rng)[0]
    x = prior.signal(theta)
    res = recover_from_gram(second_moment(x), prior, rng=rng, truth=x, init=theta)
    assert res.converged
    assert res.iterations <= 5
    assert res.restarts_used == 1
    assert res.relative_error <= 1e-10


def test_recover_zero_gram(rng):
    prior = generic_linear_prior(Z8, 3, rng)
    res = recover_from_gram(_zero_gram(Z8), prior, rng=rng)
    assert res.estimate.norm() == 0.0
    assert res.converged


def test_recover_up_to_sign(rng):
    prior = generic_linear_prior(zn_rep_spec(16), 3, rng)
    x = prior.sample(1, rng)[0]
    res = recover_from_gram(second_moment(x), prior, rng=rng, truth=x)
    assert res.converged
    assert min((res.estimate - x).norm(), (res.estimate + x).norm()) <= 1e-6 * x.norm()
    assert res.relative_error == pytest.approx(d_sigma(res.estimate, x) / x.norm())


def test_recover_sparse_enumerates_supports(rng):
    prior = sparse_prior(Z8, 1, False, rng)
    x = prior.sample(1, rng)[0]
    res = recover_from_gram(second_moment(x), prior, restarts=8, rng=rng, truth=x)
    assert res.converged
    assert res.relative_error <= 1e-6


@pytest.mark.parametrize("kind", ["sphere", "torus"])
def test_recover_manifold(rng, kind):
    prior = _priors(rng)[kind]
    x = prior.sample(1, rng)[0]
    res = recover_from_gram(second_moment(x), prior, restarts=30, rng=rng, truth=x)
    assert res.converged
    assert res.relative_error <= 1e-4


def test_recover_input_validation(rng):
    prior = generic_linear_prior(Z8, 3, rng)
    with pytest.raises(ValueError):
        recover_from_gram(_zero_gram(zn_rep_spec(16)), prior)
    neg = GramTuple(Z8, tuple(-np.eye(r) for _, r in Z8.blocks))
    with pytest.raises(ValueError):
        recover_from_gram(neg, prior)
    with pytest.raises(ValueError):
        recover_from_gram(_zero_gram(Z8), prior, restarts=0)


# ------------------------------------------------------------ experiments


def test_random_symmetric_tuple(rng):
    E = random_symmetric_tuple(Z8, 0.3, rng)
    assert E.norm() == pytest.approx(0.3)
    assert all(np.array_equal(b, b.T) for b in E.blocks)


def test_noise_stability_table(rng):
    prior = generic_linear_prior(zn_rep_spec(16), 3, rng)
    x = prior.sample(1, rng)[0]
    table = noise_stability_experiment(prior, x, [1e-3, 1e-2], 2, rng)
    assert table.columns == STABILITY_COLUMNS
    assert len(table.rows) == 4
    assert table.column("perturbation_norm") == pytest.approx([1e-3, 1e-3, 1e-2, 1e-2])
    assert 0.7 <= table.checks["slope"] <= 1.3


def test_loglog_slope_exact():
    t = Table(("x", "y"))
    for v in (1.0, 10.0, 100.0):
        t.append((v, 3.0 * v**2))
    assert loglog_slope(t, "x", "y") == pytest.approx(2.0)
    t0 = Table(("x", "y"))
    t0.append((1.0, 1.0))
    assert math.isnan(loglog_slope(t0, "x", "y"))


def test_cryoem_toy_linear_gate_passes():
    rep = cryoem_toy(2, 5, "linear", 6, 0)
    assert rep.K == 32
    assert rep.gate_passes
    assert rep.exact_converged
    assert rep.exact_error <= 1e-6
    assert rep.perturbed_error <= 0.1


def test_cryoem_toy_sparse_gate_fails_reported():
    rep = cryoem_toy(2, 5, "sparse", 8, 0, restarts=2, max_iters=50)
    assert not rep.gate_passes
    assert rep.to_dict()["gate_kind"] == rep.gate_kind


def test_cryoem_toy_validation():
    with pytest.raises(ValueError):
        cryoem_toy(2, 4, "linear", 3, 0)
    with pytest.raises(ValueError):
        cryoem_toy(1, 3, "relu", 3, 0)
    assert cryoem_toy(1, 3, "linear", 0, 0).exact_error == 0.0


def test_sample_complexity_table(rng):
    x = rng.standard_normal(8)
    table = sample_complexity_experiment(x, [0.5], [100, 10_000], 3, rng)
    assert table.columns == SAMPLE_COLUMNS
    assert len(table.rows) == 6
    assert mean_error(table, 0.5, 10_000) < mean_error(table, 0.5, 100)
    with pytest.raises(KeyError):
        mean_error(table, 1.0, 100)


def test_sample_complexity_per_sigma_grid(rng):
    x = rng.standard_normal(8)
    table = sample_complexity_experiment(x, [0.5, 1.0], {0.5: [50], 1.0: [200, 400]}, 1, rng)
    assert [(r[0], r[1]) for r in table.rows] == [(0.5, 50), (1.0, 200), (1.0, 400)]


@pytest.mark.slow
def test_sample_complexity_rate(rng):
    # at fixed sigma the debiased error decays like n^{-1/2}
    x = rng.standard_normal(8)
    ns = [1000, 4000, 16000, 64000]
    table = sample_complexity_experiment(x, [1.0], ns, 6, rng)
    errs = [mean_error(table, 1.0, n) for n in ns]
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert abs(slope + 0.5) <= 0.1
