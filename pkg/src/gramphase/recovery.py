"""Second-moment pipelines: MRA simulation, Gram extraction and recovery over priors.

The cyclic group ``Z_N`` acting by circular shifts on ``R^N`` is handled in
the time domain through an explicit real Fourier basis; general specs are
simulated in block coordinates with Haar draws from ``H``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive_int, check_random_state, spawn
from .metrics import d_sigma
from .moments import GramTuple, psd_project, second_moment, sqrt_psd
from .priors import LinearPrior, Prior, SparsePrior, generic_linear_prior, sparse_prior
from .repspec import (
    GateKind,
    RepSpec,
    Signal,
    cryoem_K,
    cryoem_rep_spec,
    dimension_gate,
    effective_dim_K,
    zn_rep_spec,
)
from .serialize import Table

# ------------------------------------------------------------ Z_N Fourier bridge


def real_fourier_basis(N: int) -> np.ndarray:
    """Orthonormal ``N x N`` matrix whose rows follow the blocks of ``zn_rep_spec(N)``.

    Rows are the constant vector, the alternating vector, then a
    ``cos, sin`` pair for each frequency ``1..N/2-1``. A circular shift acts
    on the pairs by rotations and on the alternating row by ``-1``.
    """
    check_positive_int(N, "N", minimum=2)
    if N % 2:
        raise ValueError(f"real Fourier basis needs even N, got N={N}")
    t = np.arange(N)
    rows = [np.full(N, 1.0 / math.sqrt(N)), np.where(t % 2, -1.0, 1.0) / math.sqrt(N)]
    c = math.sqrt(2.0 / N)
    for k in range(1, N // 2):
        w = 2.0 * math.pi * k * t / N
        rows += [c * np.cos(w), c * np.sin(w)]
    return np.vstack(rows)


def shift_action(N: int, s: int = 1) -> np.ndarray:
    """Matrix of ``x -> roll(x, s)`` in real Fourier coordinates (block diagonal)."""
    out = np.zeros((N, N))
    out[0, 0] = 1.0
    out[1, 1] = (-1.0) ** s
    for k in range(1, N // 2):
        a = 2.0 * math.pi * k * s / N
        i = 2 * k
        out[i : i + 2, i : i + 2] = [[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]
    return out


def signal_to_blocks(x_time) -> Signal:
    x_time = np.asarray(x_time, dtype=float)
    if x_time.ndim != 1:
        raise ValueError("time-domain signal must be a vector")
    N = x_time.size
    return Signal.from_vector(zn_rep_spec(N), real_fourier_basis(N) @ x_time)


def blocks_to_signal(x: Signal) -> np.ndarray:
    N = x.spec.ambient_dim
    if x.spec != zn_rep_spec(N):
        raise ValueError("signal is not laid out on the Z_N spec")
    return real_fourier_basis(N).T @ x.to_vector()


def dft_power_spectrum(x_time) -> GramTuple:
    """Gram tuple of the ``Z_N`` model computed from the complex DFT.

    Singleton frequencies ``0`` and ``N/2`` give ``|xhat_k|^2 / N``; paired
    frequencies give ``2 |xhat_k|^2 / N``.
    """
    x_time = np.asarray(x_time, dtype=float)
    N = x_time.size
    p = np.abs(np.fft.rfft(x_time)) ** 2 / N
    vals = [p[0], p[N // 2]] + [2.0 * p[k] for k in range(1, N // 2)]
    return GramTuple(zn_rep_spec(N), tuple(np.array([[v]]) for v in vals))


# ------------------------------------------------------------ moment estimation


class GroupAction(str, enum.Enum):
    BLOCK_ACTION = "block_action"
    ZN_CIRCULANT = "zn_circulant"


@dataclass(frozen=True)
class MraConfig:
    spec: RepSpec
    group_action: GroupAction
    n_samples: int
    noise_sigma: float
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "group_action", GroupAction(self.group_action))
        check_positive_int(self.n_samples, "n_samples")
        if not self.noise_sigma >= 0:
            raise ValueError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        if self.group_action is GroupAction.ZN_CIRCULANT and self.spec != zn_rep_spec(self.spec.ambient_dim):
            raise ValueError("zn_circulant needs the Z_N spec")


@dataclass(frozen=True)
class MomentEstimate:
    """Empirical second moment in block coordinates, debiased copy and extracted Gram."""

    raw: np.ndarray
    debiased: np.ndarray
    extracted: GramTuple
    n_samples: int


class MomentAccumulator:
    """Streaming sum of outer products. Partial accumulators merge associatively."""

    def __init__(self, dim: int):
        self.dim = check_positive_int(dim, "dim")
        self.count = 0
        self.total = np.zeros((dim, dim))

    def update(self, samples) -> "MomentAccumulator":
        y = np.atleast_2d(np.asarray(samples, dtype=float))
        if y.shape[1] != self.dim:
            raise ValueError(f"samples must have {self.dim} columns")
        self.total += y.T @ y
        self.count += y.shape[0]
        return self

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.dim != self.dim:
            raise ValueError("accumulators have different dimensions")
        out = MomentAccumulator(self.dim)
        out.total = self.total + other.total
        out.count = self.count + other.count
        return out

    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no samples accumulated")
        m = self.total / self.count
        return 0.5 * (m + m.T)


def extract_gram(moment, spec: RepSpec) -> GramTuple:
    """Gram tuple from a second moment in block coordinates.

    For block ``l`` entry ``(r, s)`` is the trace over the irrep index ``i``
    of the ``(i, r), (i, s)`` entries. The population moment of ``h X`` with
    ``h`` Haar is ``I_N (x) X^T X / N`` per block, so the plain trace returns
    ``X^T X``. Cross-block entries are ignored.
    """
    m = np.asarray(moment, dtype=float)
    d = spec.ambient_dim
    if m.shape != (d, d):
        raise ValueError(f"moment has shape {m.shape}, spec needs {(d, d)}")
    if not np.allclose(m, m.T, atol=1e-12 * (1.0 + np.abs(m).max())):
        raise ValueError("moment is not symmetric")
    blocks = []
    for off, (n, r) in zip(spec.offsets(), spec.blocks):
        sub = m[off : off + n * r, off : off + n * r].reshape(n, r, n, r)
        g = np.einsum("iris->rs", sub)
        blocks.append(0.5 * (g + g.T))
    return GramTuple(spec, tuple(blocks))


def population_moment(x: Signal) -> np.ndarray:
    """Exact ``E[(h x)(h x)^T]`` for Haar ``h``; also the ``Z_N`` shift average."""
    d = x.spec.ambient_dim
    out = np.zeros((d, d))
    for off, b in zip(x.spec.offsets(), x.blocks):
        n, r = b.shape
        out[off : off + n * r, off : off + n * r] = np.kron(np.eye(n), b.T @ b) / n
    return out


def _haar_batch(n: int, count: int, rng) -> np.ndarray:
    z = rng.standard_normal((count, n, n))
    q, r = np.linalg.qr(z)
    d = np.sign(np.diagonal(r, axis1=1, axis2=2))
    d[d == 0] = 1.0
    return q * d[:, None, :]


def _draw_orbit_samples(x: Signal, x_time, cfg: MraConfig, count: int, rng, force_identity: bool) -> np.ndarray:
    """``count`` noiseless draws ``g . x`` in block coordinates."""
    v = x.to_vector()
    if force_identity:
        return np.tile(v, (count, 1))
    if cfg.group_action is GroupAction.ZN_CIRCULANT:
        N = x_time.size
        shifts = rng.integers(0, N, size=count)
        idx = (np.arange(N)[None, :] - shifts[:, None]) % N
        return x_time[idx] @ real_fourier_basis(N).T
    out = np.empty((count, v.size))
    for off, b in zip(x.spec.offsets(), x.blocks):
        n, r = b.shape
        out[:, off : off + n * r] = (_haar_batch(n, count, rng) @ b).reshape(count, n * r)
    return out


def mra_simulate(x, cfg: MraConfig, rng=None, force_identity: bool = False, chunk: int = 4096) -> MomentEstimate:
    """Simulate ``y = g . x + eps`` and estimate the second moment in one streaming pass.

    Observations are drawn in chunks and folded into a running sum of outer
    products. ``zn_circulant`` shifts the time-domain signal and changes to
    block coordinates; ``block_action`` draws ``h`` Haar on ``H``. The
    debiased moment subtracts ``sigma^2 I`` (the basis is orthonormal, so
    the noise covariance is the same in both coordinate systems).
    """
    rng = check_random_state(cfg.seed if rng is None else rng)
    if isinstance(x, Signal):
        xs = x
    elif cfg.group_action is GroupAction.ZN_CIRCULANT:
        xs = signal_to_blocks(x)
    else:
        xs = Signal.from_vector(cfg.spec, x)
    if xs.spec != cfg.spec:
        raise ValueError("signal spec does not match the configuration")
    x_time = blocks_to_signal(xs) if cfg.group_action is GroupAction.ZN_CIRCULANT else None
    d = cfg.spec.ambient_dim
    basis = real_fourier_basis(d) if cfg.group_action is GroupAction.ZN_CIRCULANT else None
    acc = MomentAccumulator(d)
    left = cfg.n_samples
    while left > 0:
        c = min(chunk, left)
        y = _draw_orbit_samples(xs, x_time, cfg, c, rng, force_identity)
        if cfg.noise_sigma > 0:
            eps = cfg.noise_sigma * rng.standard_normal((c, d))
            y = y + (eps @ basis.T if basis is not None else eps)
        acc.update(y)
        left -= c
    raw = acc.mean()
    debiased = raw - cfg.noise_sigma**2 * np.eye(d)
    return MomentEstimate(raw, debiased, extract_gram(debiased, cfg.spec), cfg.n_samples)


# ------------------------------------------------------------ recovery


@dataclass(frozen=True)
class RecoveryResult:
    estimate: Signal
    theta: np.ndarray
    relative_error: float | None
    objective: float
    restarts_used: int
    converged: bool
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)


def _gram_residual_blocks(spec: RepSpec, v: np.ndarray, G: GramTuple):
    out = []
    for off, (n, r), g in zip(spec.offsets(), spec.blocks, G.blocks):
        X = v[off : off + n * r].reshape(n, r)
        out.append((X, X.T @ X - g))
    return out


def gram_objective(prior: Prior, G: GramTuple, theta) -> tuple[float, np.ndarray]:
    """``F = sum ||X^T X - G||^2`` and its gradient in prior coordinates.

    The ambient gradient is ``4 X (X^T X - G)`` blockwise; it is pulled back
    through the prior Jacobian.
    """
    theta = np.asarray(theta, dtype=float)
    v = prior.point(theta)
    f = 0.0
    grad = np.empty_like(v)
    for off, (X, D) in zip(prior.spec.offsets(), _gram_residual_blocks(prior.spec, v, G)):
        f += float(np.sum(D * D))
        grad[off : off + X.size] = (4.0 * X @ D).ravel()
    return f, prior.jacobian(theta).T @ grad


def _descend(prior: Prior, G: GramTuple, theta, coords, max_iters: int, f_floor: float):
    """Projected gradient descent with Barzilai-Borwein steps and Armijo backtracking.

    Runs until ``max_iters``, ``F <= f_floor`` or stagnation; descent is not
    stopped at the convergence tolerance, so a converged run is polished.
    """
    mask = np.zeros(prior.n_params, dtype=bool)
    mask[coords] = True
    theta = prior.project_params(theta)
    f, g = gram_objective(prior, G, theta)
    g = np.where(mask, g, 0.0)
    # a short first step keeps bounded parametrizations off their walls
    step = 0.1 * (1.0 + float(np.linalg.norm(theta))) / max(float(np.linalg.norm(g)), 1e-12)
    stall, it = 0, 0
    for it in range(1, max_iters + 1):
        if f <= f_floor or not np.any(g):
            break
        t = step
        while True:
            trial = prior.project_params(theta - t * g)
            ft, gt = gram_objective(prior, G, trial)
            if ft <= f - 1e-4 * float(g @ (theta - trial)) or t < 1e-20:
                break
            t *= 0.5
        if ft > f:
            break
        gt = np.where(mask, gt, 0.0)
        s, y = trial - theta, gt - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 2.0 * t
        stall = stall + 1 if f - ft <= 1e-14 * f else 0
        theta, f, g = trial, ft, gt
        if stall >= 5:
            break
    return theta, f, it


def _restart_coords(prior: Prior, theta0: np.ndarray) -> np.ndarray:
    return np.asarray(prior.free_coords(theta0))


def _sparse_enumeration(prior: Prior, restarts: int, rng):
    """One Gaussian start per support when all supports fit in the restart budget."""
    if not isinstance(prior, SparsePrior) or math.comb(prior.n_params, prior.dim) > restarts:
        return None
    starts = []
    for support in itertools.combinations(range(prior.n_params), prior.dim):
        t = np.zeros(prior.n_params)
        t[list(support)] = rng.standard_normal(prior.dim)
        starts.append(t)
    return starts


def recover_from_gram(
    G: GramTuple,
    prior: Prior,
    restarts: int = 20,
    max_iters: int = 500,
    tol: float = 1e-10,
    rng=None,
    truth: Signal | None = None,
    init=None,
) -> RecoveryResult:
    """Fit ``X(theta)^T X(theta) = G`` over a prior from random starts.

    Each restart draws ``theta`` from the prior's sampler (for sparse priors
    this fixes a random support) and descends on the squared Gram misfit.
    Sparse priors with no more supports than ``restarts`` try every
    support once instead.
    A run counts as converged when ``F <= tol * ||G||^2``; restarts stop at
    the first converged run. ``init`` replaces the first random start.
    """
    check_positive_int(restarts, "restarts")
    check_positive_int(max_iters, "max_iters")
    if G.spec != prior.spec:
        raise ValueError("Gram tuple and prior have different specs")
    if not G.is_psd():
        raise ValueError("target Gram tuple is not PSD; project it first")
    rng = check_random_state(rng)
    g2 = G.norm() ** 2
    target = tol * g2
    floor = 1e-30 * max(g2, 1e-300)
    starts = _sparse_enumeration(prior, restarts, rng)
    best = None
    used = 0
    for k in range(restarts if starts is None else len(starts)):
        used += 1
        if k == 0 and init is not None:
            theta0 = np.asarray(init, dtype=float)
        else:
            theta0 = prior.sample_params(1, rng)[0] if starts is None else starts[k]
        if g2 == 0.0:
            theta0 = np.zeros_like(theta0) if isinstance(prior, (LinearPrior, SparsePrior)) else theta0
        coords = _restart_coords(prior, theta0)
        theta, f, its = _descend(prior, G, theta0, coords, max_iters, floor)
        if best is None or f < best[1]:
            best = (theta, f, its)
        if f <= target:
            break
    theta, f, its = best
    est = prior.signal(theta)
    rel = None
    if truth is not None:
        tn = truth.norm()
        rel = d_sigma(est, truth) / tn if tn > 0 else est.norm()
    return RecoveryResult(est, theta, rel, f, used, bool(f <= target), its)


# ------------------------------------------------------------ experiments

STABILITY_COLUMNS = ("delta", "trial", "perturbation_norm", "relative_error", "objective", "converged")


def random_symmetric_tuple(spec: RepSpec, norm: float, rng) -> GramTuple:
    """Symmetric tuple with Gaussian direction and total Frobenius norm ``norm``."""
    rng = check_random_state(rng)
    blocks = []
    for _, r in spec.blocks:
        a = rng.standard_normal((r, r))
        blocks.append(a + a.T)
    E = GramTuple(spec, tuple(blocks))
    n = E.norm()
    return E * (norm / n) if n > 0 else E


def noise_stability_experiment(
    prior: Prior,
    x_truth: Signal,
    deltas,
    trials: int,
    rng,
    restarts: int = 20,
    max_iters: int = 500,
    tol: float = 1e-10,
) -> Table:
    """Recovery error against the size of a perturbation of ``sqrt(G)``.

    ``sqrt(G)`` is perturbed by a random symmetric tuple of norm ``delta`` and
    squared back (then clamped to PSD). Each trial keeps one random
    direction across all deltas, so the slope is not blurred by resampling
    the direction. The table's ``checks`` hold the
    fitted log-log slope of the mean error against ``delta`` over the
    positive deltas, under ``slope``.
    """
    check_positive_int(trials, "trials")
    rng = check_random_state(rng)
    S = sqrt_psd(second_moment(x_truth))
    table = Table(STABILITY_COLUMNS)
    directions = [random_symmetric_tuple(prior.spec, 1.0, r) for r in spawn(rng, trials)]
    streams = spawn(rng, len(deltas) * trials)
    for i, delta in enumerate(deltas):
        for t in range(trials):
            E = directions[t] * float(delta)
            P = S + E
            Gt = psd_project(GramTuple(prior.spec, tuple(p @ p for p in P.blocks)))
            res = recover_from_gram(Gt, prior, restarts, max_iters, tol, streams[i * trials + t], truth=x_truth)
            table.append((float(delta), t, E.norm(), res.relative_error, res.objective, res.converged))
    table.checks["slope"] = loglog_slope(table, "delta", "relative_error")
    return table


def loglog_slope(table: Table, xcol: str, ycol: str) -> float:
    """Least-squares slope of ``log mean(y)`` against ``log x`` over positive ``x``."""
    xs = np.asarray(table.column(xcol), dtype=float)
    ys = np.asarray(table.column(ycol), dtype=float)
    grid = sorted(set(xs[xs > 0]))
    means = [ys[xs == v].mean() for v in grid]
    if len(grid) < 2 or min(means) <= 0:
        return math.nan
    return float(np.polyfit(np.log(grid), np.log(means), 1)[0])


@dataclass(frozen=True)
class CryoReport:
    L: int
    R: int
    prior_kind: str
    M: int
    K: int
    gate_kind: str
    gate_passes: bool
    exact_error: float
    exact_converged: bool
    perturbed_error: float
    delta: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def cryoem_toy(
    L: int, R: int, prior_kind: str, M: int, rng, delta: float = 1e-3,
    restarts: int = 20, max_iters: int = 500, tol: float = 1e-10, force: bool = False,
) -> CryoReport:
    """Gram recovery in spherical-harmonic coefficient space.

    The spec is ``(2l+1, R)`` for ``l = 0..L``. Linear priors are gated by
    ``2M < K`` and sparse ones by ``4M < K``; a failed gate is reported,
    not raised. Projection images are not simulated since the second moment
    does not depend on them.
    """
    if prior_kind not in ("linear", "sparse"):
        raise ValueError(f"prior_kind must be 'linear' or 'sparse', got {prior_kind!r}")
    if R < 2 * L + 1 and not force:
        raise ValueError(f"cryo-EM model needs R >= 2L+1, got L={L}, R={R}")
    rng = check_random_state(rng)
    spec = cryoem_rep_spec(L, R)
    K = cryoem_K(L, R) if R >= 2 * L + 1 else effective_dim_K(spec)
    kind = GateKind.INJECTIVITY_2M if prior_kind == "linear" else GateKind.STABILITY_4M
    gate = dimension_gate(M, spec, kind)
    if M == 0:
        return CryoReport(L, R, prior_kind, M, K, kind.value, gate.passes, 0.0, True, 0.0, delta)
    prior = generic_linear_prior(spec, M, rng) if prior_kind == "linear" else sparse_prior(spec, M, False, rng)
    truth = prior.sample(1, rng)[0]
    truth = truth / truth.norm()
    exact = recover_from_gram(second_moment(truth), prior, restarts, max_iters, tol, rng, truth=truth)
    S = sqrt_psd(second_moment(truth))
    P = S + random_symmetric_tuple(spec, delta, rng)
    Gt = psd_project(GramTuple(spec, tuple(p @ p for p in P.blocks)))
    pert = recover_from_gram(Gt, prior, restarts, max_iters, tol, rng, truth=truth)
    return CryoReport(
        L, R, prior_kind, M, K, kind.value, gate.passes,
        exact.relative_error, exact.converged, pert.relative_error, delta,
    )


SAMPLE_COLUMNS = ("sigma", "n", "trial", "gram_error")


def sample_complexity_experiment(x, sigmas, ns, trials: int, rng, group_action: str = "zn_circulant") -> Table:
    """Monte Carlo error ``||extracted - exact Gram||`` over a grid of ``(sigma, n)``.

    ``ns`` is either a list applied to every sigma or a dict mapping each
    sigma to its own list. Every grid cell and trial uses its own stream.
    """
    check_positive_int(trials, "trials")
    rng = check_random_state(rng)
    xs = signal_to_blocks(x) if not isinstance(x, Signal) else x
    exact = second_moment(xs)
    cells = [(float(s), int(n)) for s in sigmas for n in (ns[s] if isinstance(ns, dict) else ns)]
    streams = spawn(rng, len(cells) * trials)
    table = Table(SAMPLE_COLUMNS)
    for i, (s, n) in enumerate(cells):
        for t in range(trials):
            cfg = MraConfig(xs.spec, group_action, n, s)
            est = mra_simulate(xs, cfg, streams[i * trials + t])
            table.append((s, n, t, (est.extracted - exact).norm()))
    return table


def mean_error(table: Table, sigma: float, n: int) -> float:
    rows = [r[3] for r in table.rows if r[0] == sigma and r[1] == n]
    if not rows:
        raise KeyError(f"no cell sigma={sigma}, n={n}")
    return float(np.mean(rows))
