"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``python tests/test_acceptance.py`` or as part of ``pytest``.
"""

import math
import os
import time

import numpy as np
import pytest

from gramphase import cli
from gramphase.metrics import SQRT2, d_H, gram_sqrt_dist, metric_report
from gramphase.moments import second_moment, skew_defect, skew_pair_witness
from gramphase.priors import AffineChart, LinearPrior, affine_plane_prior, generic_linear_prior, segment_prior, sphere_prior
from gramphase.recovery import (
    dft_power_spectrum,
    extract_gram,
    gram_objective,
    mean_error,
    noise_stability_experiment,
    population_moment,
    recover_from_gram,
    sample_complexity_experiment,
    signal_to_blocks,
)
from gramphase.repspec import (
    RepSpec,
    Signal,
    apply_group,
    cryoem_K,
    cryoem_rep_spec,
    effective_dim_K,
    haar_sample,
    zn_rep_spec,
)
from gramphase.stability import (
    VerdictKind,
    brute_force_d_H,
    c_constant,
    counterexample_affine_plane,
    counterexample_line_segment,
    lipschitz_ratio,
    transversality_search_linear,
    transversality_search_set,
)

from conftest import SPECS


@pytest.fixture
def report(capsys):
    def _report(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
        assert ok, detail

    return _report


def test_c01_k_cross_check(report):
    t0 = time.perf_counter()
    bad = [(L, R) for L in range(9) for R in range(2 * L + 1, 2 * L + 11)
           if effective_dim_K(cryoem_rep_spec(L, R)) != cryoem_K(L, R)]
    bad += [("zn", N) for N in range(2, 65, 2) if effective_dim_K(zn_rep_spec(N)) != N // 2 + 1]
    single = effective_dim_K(RepSpec(((7, 1),))) == 1
    dt = time.perf_counter() - t0
    report(1, not bad and single and dt < 1.0, f"mismatches={bad} single_irrep_K1={single} time={dt:.3f}s")


def test_c02_derksen_sandwich(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    violations, n = 0, 0
    per_spec = 10_000 // len(SPECS)
    for spec in SPECS:
        for _ in range(per_spec):
            x, y = Signal.random(spec, rng), Signal.random(spec, rng)
            if rng.uniform() < 0.2:
                # near-orbit pairs stress the lower bound
                y = apply_group(haar_sample(spec, rng), x) + Signal.random(spec, rng) * 1e-3
            dh, gs = d_H(x, y), gram_sqrt_dist(x, y)
            tol = 1e-8 * max(dh, 1e-300)
            violations += not (dh - tol <= gs <= SQRT2 * dh + tol)
            n += 1
    dt = time.perf_counter() - t0
    multiplicity = any(r >= 2 for s in SPECS for _, r in s.blocks)
    report(2, violations == 0 and n >= 10_000 and multiplicity and dt < 30,
           f"pairs={n} specs={len(SPECS)} violations={violations} time={dt:.1f}s")


def test_c03_procrustes_oracle(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(1000):
        nb = int(rng.integers(1, 13))
        spec = RepSpec(tuple((1, int(r)) for r in rng.integers(1, 4, size=nb)))
        x, y = Signal.random(spec, rng), Signal.random(spec, rng)
        worst = max(worst, abs(d_H(x, y) - brute_force_d_H(x, y)))
    report(3, worst <= 1e-10, f"max |d_H - brute force| = {worst:.2e} over 1000 pairs")


def test_c04_skew_pair_round_trip(report):
    rng = np.random.default_rng(4)
    worst_defect, worst_resid = 0.0, 0.0
    for i in range(1000):
        spec = SPECS[i % len(SPECS)]
        x = Signal.random(spec, rng)
        hx = apply_group(haar_sample(spec, rng), x)
        a, b = (x + hx) / 2, (x - hx) / 2
        worst_defect = max(worst_defect, skew_defect(a, b) / x.norm() ** 2)
        w = skew_pair_witness(a, b, tol=1e-8)
        worst_resid = max(worst_resid, w.residual / (a + b).norm())
    report(4, worst_defect <= 1e-9 and worst_resid <= 1e-8,
           f"max defect/||x||^2={worst_defect:.2e} max witness residual={worst_resid:.2e}")


def test_c05_segment_counterexample(report):
    table = counterexample_line_segment([0.4, 0.2, 0.1, 0.05])
    x = Signal.from_vector(RepSpec(((2, 1),)), [1.0, 0.0])
    y = Signal.from_vector(RepSpec(((2, 1),)), [1.0, 0.1])
    r = lipschitz_ratio(x, y)
    ok_ratio = abs(r - 0.049875) <= 1e-4
    ratios = table.column("dH_over_dsigma")
    decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
    quad = all(row[2] <= 0.6 * row[0] ** 2 for row in table.rows)
    report(5, ok_ratio and decreasing and quad,
           f"ratio(0.1)={r:.6f} strictly_decreasing={decreasing} d_H<=0.6y^2={quad}")


def test_c06_plane_counterexample(report):
    table = counterexample_affine_plane([1, 10, 100])
    ok = True
    for a, ds, dh, brute, ratio in table.rows:
        ok &= abs(ds - math.sqrt(8) * a) <= 1e-9 * a
        ok &= brute == 2.0 and abs(dh - 2.0) <= 1e-12
        ok &= abs(ratio - SQRT2 * a) <= 1e-9 * a
    verdict = transversality_search_set(affine_plane_prior(), 2000, 6)
    report(6, ok and verdict.kind is VerdictKind.NO_VIOLATION_FOUND,
           f"table_ok={ok} companion_search={verdict.kind.value} best={verdict.search_stats['best_objective']:.3g}")


def _direct_defects(x0, S):
    """``||X0^T S + S^T X0||`` for each row of ``S``, block by block."""
    total = np.zeros(len(S))
    for off, X in zip(x0.spec.offsets(), x0.blocks):
        n, r = X.shape
        Sb = S[:, off : off + n * r].reshape(-1, n, r)
        m = np.einsum("nr,kns->krs", X, Sb)
        total += np.sum((m + m.transpose(0, 2, 1)) ** 2, axis=(1, 2))
    return np.sqrt(total)


def test_c07_c_constant(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(20):
        spec = SPECS[i % len(SPECS)]
        x0 = Signal.random(spec, rng)
        basis = np.linalg.qr(rng.standard_normal((spec.ambient_dim, 2)))[0]
        chart = AffineChart(spec, np.zeros(spec.ambient_dim), basis)
        c = c_constant(x0, chart)
        u = rng.standard_normal((100_000, 2))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        brute = _direct_defects(x0, u @ basis.T).min()
        worst = max(worst, abs(brute - c))
    circle = c_constant(Signal.from_vector(RepSpec(((2, 1),)), [1.0, 0.0]),
                        sphere_prior(RepSpec(((2, 1),)), 1).chart(np.array([1.0, 0.0])))
    report(7, worst <= 1e-6 and circle <= 1e-12, f"max |c - brute| = {worst:.2e}; circle tangent c = {circle:.1e}")


def _planted_prior(seed):
    spec = zn_rep_spec(32)
    rng = np.random.default_rng(seed)
    x = Signal.random(spec, rng)
    hx = apply_group(haar_sample(spec, rng), x)
    others = [Signal.random(spec, rng) for _ in range(3)]
    return LinearPrior.from_signals([(x + hx) / 2, (x - hx) / 2] + others)


def test_c08_planted_violation(report):
    hits = sum(transversality_search_linear(_planted_prior(s), 1000, 1000 + s).violation for s in range(50))
    spec = zn_rep_spec(32)
    false_pos = sum(
        transversality_search_linear(generic_linear_prior(spec, 5, s), 10_000, 5000 + s).violation for s in range(20)
    )
    report(8, hits >= 48 and false_pos == 0, f"planted hits={hits}/50 generic false positives={false_pos}/20")


def test_c09_noiseless_recovery(report):
    t0 = time.perf_counter()
    spec = zn_rep_spec(32)
    good = 0
    for s in range(50):
        rng = np.random.default_rng(900 + s)
        prior = generic_linear_prior(spec, 5, rng)
        x = prior.sample(1, rng)[0]
        res = recover_from_gram(second_moment(x), prior, restarts=20, rng=rng, truth=x)
        good += res.relative_error <= 1e-6
    dt = time.perf_counter() - t0
    rng = np.random.default_rng(9)
    prior = generic_linear_prior(spec, 5, rng)
    G = second_moment(prior.sample(1, rng)[0])
    worst = 0.0
    for _ in range(20):
        th = rng.standard_normal(5)
        _, g = gram_objective(prior, G, th)
        fd = np.array([(gram_objective(prior, G, th + 1e-6 * e)[0] - gram_objective(prior, G, th - 1e-6 * e)[0]) / 2e-6
                       for e in np.eye(5)])
        worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
    report(9, good >= 45 and dt < 60 and worst <= 1e-5,
           f"successes={good}/50 time={dt:.1f}s gradient rel err={worst:.1e}")


def test_c10_stability_scaling(report):
    rng = np.random.default_rng(10)
    prior = generic_linear_prior(zn_rep_spec(32), 5, rng)
    x = prior.sample(1, rng)[0]
    x = x / x.norm()
    slope = noise_stability_experiment(prior, x, [1e-3, 1e-2, 1e-1], 5, rng).checks["slope"]
    seg = segment_prior()
    control = noise_stability_experiment(seg, seg.signal(np.array([0.0])), [1e-3, 1e-2, 1e-1], 10, rng).checks["slope"]
    report(10, abs(slope - 1.0) <= 0.15 and control < 0.7, f"slope={slope:.3f} segment control slope={control:.3f}")


def test_c11_power_spectrum_identity(report):
    rng = np.random.default_rng(11)
    worst = 0.0
    for N in (8, 16, 32):
        x = rng.standard_normal(N)
        xs = signal_to_blocks(x)
        G = extract_gram(population_moment(xs), xs.spec)
        worst = max(worst, (G - dft_power_spectrum(x)).norm())
    report(11, worst <= 1e-9, f"max deviation from DFT power spectrum = {worst:.1e}")


def test_c12_sample_complexity(report):
    t0 = time.perf_counter()
    x = np.random.default_rng(12).standard_normal(16)
    x /= np.linalg.norm(x)
    n = 2000
    # n / sigma^4 held fixed across sigma in {1, 2}
    table = sample_complexity_experiment(x, [1.0, 2.0], {1.0: [n, 4 * n], 2.0: [16 * n]}, 20, 12)
    ratio = mean_error(table, 1.0, n) / mean_error(table, 1.0, 4 * n)
    same = mean_error(table, 2.0, 16 * n) / mean_error(table, 1.0, n)
    dt = time.perf_counter() - t0
    report(12, abs(ratio - 2.0) <= 0.4 and abs(same - 1.0) <= 0.3 and dt < 300,
           f"error(n)/error(4n)={ratio:.3f} error ratio at fixed n/sigma^4={same:.3f} time={dt:.1f}s")


STOCHASTIC_RUNS = [
    ["metrics", "--spec", "zn8", "--pairs", "50"],
    ["lipschitz", "--prior", "linear", "--spec", "zn16", "--m", "3", "--pairs", "200", "--refine-steps", "5"],
    ["transversality", "--prior", "linear", "--spec", "zn16", "--m", "3", "--mode", "linear", "--budget", "100"],
    ["recover", "--spec", "zn16", "--m", "3", "--trials", "3", "--workers", "1"],
    ["recover", "--spec", "zn16", "--m", "3", "--trials", "2", "--deltas", "0.01,0.1"],
    ["mra", "--zn", "8", "--sigmas", "1", "--ns", "200", "--trials", "2"],
    ["cryoem", "--L", "1", "--R", "3", "--m", "2"],
]


def test_c13_cli_determinism(report, tmp_path):
    mismatched = []
    for i, argv in enumerate(STOCHASTIC_RUNS):
        bodies = []
        for rep in range(2):
            out = tmp_path / f"run{i}_{rep}"
            code = cli.main(argv + ["--seed", "13", "--out", str(out)])
            assert code in (0, 2)
            bodies.append(b"".join(p.read_bytes() for p in sorted(out.glob("*.csv"))))
        if bodies[0] != bodies[1] or not bodies[0]:
            mismatched.append(argv[0])
    report(13, not mismatched, f"commands={len(STOCHASTIC_RUNS)} non-reproducible={mismatched}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([os.path.abspath(__file__), "-q"]))
