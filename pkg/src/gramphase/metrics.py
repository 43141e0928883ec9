"""Distances on the sign quotient, on ``H``-orbits and between Gram tuples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int, check_random_state
from .moments import procrustes_align, second_moment, sqrt_moment
from .repspec import Signal

SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class MetricReport:
    d_sigma: float
    d_H: float
    d_gram: float
    gram_sqrt_dist: float
    derksen_ok: bool

    FIELDS = ("d_sigma", "d_H", "d_gram", "gram_sqrt_dist", "derksen_ok")

    def as_row(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)


def d_sigma(x: Signal, y: Signal) -> float:
    x._check_same(y)
    return min((x + y).norm(), (x - y).norm())


def d_H(x: Signal, y: Signal) -> float:
    return procrustes_align(x, y)[1]


def d_gram(x: Signal, y: Signal) -> float:
    return float(np.sqrt((second_moment(x) - second_moment(y)).norm()))


def d_gram_polarized(x: Signal, y: Signal) -> float:
    """``d_gram`` through ``1/2 ||(X-Y)^T (X+Y) + (X+Y)^T (X-Y)||``."""
    x._check_same(y)
    total = 0.0
    for p, q in zip(x.blocks, y.blocks):
        m = (p - q).T @ (p + q)
        total += float(np.sum((m + m.T) ** 2))
    return float(np.sqrt(0.5 * np.sqrt(total)))


def gram_sqrt_dist(x: Signal, y: Signal) -> float:
    x._check_same(y)
    return (sqrt_moment(x) - sqrt_moment(y)).norm()


def metric_report(x: Signal, y: Signal) -> MetricReport:
    ds, dh, dg, gs = d_sigma(x, y), d_H(x, y), d_gram(x, y), gram_sqrt_dist(x, y)
    tol = 1e-8 * (1.0 + x.norm() + y.norm())
    ok = (dh - tol <= gs) and (gs <= SQRT2 * dh + tol)
    return MetricReport(ds, dh, dg, gs, bool(ok))


def sample_ball(center: Signal, r: float, rng) -> Signal:
    """Uniform sample from the Frobenius ball of radius ``r`` around ``center``."""
    rng = check_random_state(rng)
    d = center.spec.ambient_dim
    u = rng.standard_normal(d)
    u *= r * rng.uniform() ** (1.0 / d) / np.linalg.norm(u)
    return center + Signal.from_vector(center.spec, u)


@dataclass(frozen=True)
class LowLipReport:
    worst_ratio: float
    bound: float
    n_evaluated: int
    n_skipped: int

    @property
    def holds(self) -> bool:
        return self.worst_ratio <= self.bound * (1.0 + 1e-9) + 1e-12


def local_lowlip_check(x0: Signal, r: float, n_pairs: int, rng) -> LowLipReport:
    """Largest ``d_gram^2 / d_H`` over random pairs in the ball ``B_r(x0)``.

    The ratio is bounded by ``2 (||x0|| + r)``; pairs with ``d_H`` below
    ``1e-12`` (times the local scale) are skipped.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    check_positive_int(n_pairs, "n_pairs")
    rng = check_random_state(rng)
    bound = 2.0 * (x0.norm() + r)
    worst, skipped = 0.0, 0
    for _ in range(n_pairs):
        x, y = sample_ball(x0, r, rng), sample_ball(x0, r, rng)
        dh = d_H(x, y)
        if dh <= 1e-12 * (1.0 + x.norm() + y.norm()):
            skipped += 1
            continue
        worst = max(worst, d_gram(x, y) ** 2 / dh)
    return LowLipReport(worst, bound, n_pairs - skipped, skipped)
