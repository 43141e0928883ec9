"""Empirical bi-Lipschitz diagnostics and transversality searches.

Nothing here certifies a lower Lipschitz bound: the searches are
falsification tools. A ``NoViolationFound`` verdict only reports that the
given budget did not produce a witness.
"""

from __future__ import annotations

import enum
import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from ._validation import check_positive_int, check_random_state
from .metrics import d_H, d_sigma, gram_sqrt_dist
from .moments import procrustes_align, skew_pair_witness
from .priors import AffineChart, LinearPrior, Prior
from .repspec import BlockOrthogonal, RepSpec, Signal
from .serialize import Table, signal_to_dict

SQRT2 = math.sqrt(2.0)
VIOLATION_OBJECTIVE = 1e-14


class DegenerateSampleError(RuntimeError):
    """Every sampled pair was too close to the sign diagonal to give a ratio."""


@functools.lru_cache(maxsize=None)
def _layout(spec: RepSpec) -> tuple[tuple[int, int, int], ...]:
    return tuple((off, n, r) for off, (n, r) in zip(spec.offsets(), spec.blocks))


def _blocks(spec: RepSpec, v: np.ndarray) -> list[np.ndarray]:
    return [v[o : o + n * r].reshape(n, r) for o, n, r in _layout(spec)]


def _d_H_vec(spec, u, v) -> float:
    total = 0.0
    for x, y in zip(_blocks(spec, u), _blocks(spec, v)):
        w, _, zt = np.linalg.svd(x @ y.T)
        total += float(np.sum((x - (w @ zt) @ y) ** 2))
    return math.sqrt(total)


def _sqrt_gram_vec(spec, u) -> list[np.ndarray]:
    out = []
    for x in _blocks(spec, u):
        lam, vec = np.linalg.eigh(x.T @ x)
        out.append((vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T)
    return out


def _gram_sqrt_dist_vec(spec, u, v) -> float:
    return math.sqrt(sum(float(np.sum((a - b) ** 2)) for a, b in zip(_sqrt_gram_vec(spec, u), _sqrt_gram_vec(spec, v))))


def _d_sigma_vec(u, v) -> float:
    return min(float(np.linalg.norm(u + v)), float(np.linalg.norm(u - v)))


# ------------------------------------------------------------ Lipschitz ratios


def lipschitz_ratio(x: Signal, y: Signal) -> float:
    """``||sqrt(X^T X) - sqrt(Y^T Y)|| / d_sigma(X, Y)``; ``nan`` on the sign diagonal."""
    ds = d_sigma(x, y)
    if ds <= 1e-12 * max(x.norm(), y.norm(), 1e-300):
        return math.nan
    return gram_sqrt_dist(x, y) / ds


@dataclass(frozen=True)
class LipschitzEstimate:
    c1_hat: float
    c2_hat: float
    worst_pair: tuple[Signal, Signal]
    n_pairs_evaluated: int
    n_degenerate_skipped: int
    search: dict = field(default_factory=dict)


class _Budget:
    def __init__(self, total: int):
        self.total, self.used = int(total), 0

    @property
    def left(self) -> int:
        return self.total - self.used

    def spend(self, n: int = 1) -> bool:
        if self.used + n > self.total:
            return False
        self.used += n
        return True


def _initial_steps(prior: Prior, theta: np.ndarray) -> np.ndarray:
    if prior.bounds is not None:
        width = np.resize(np.asarray(prior.bounds[1] - prior.bounds[0], dtype=float), theta.shape)
        return 0.25 * np.where(np.isfinite(width), width, 1.0)
    return np.full(theta.shape, 0.25 * max(1.0, float(np.linalg.norm(theta)) / math.sqrt(theta.size)))


def _pattern_search(fun, theta, coords, project, steps, sweeps: int, budget: _Budget | None = None):
    """Coordinate descent with per-coordinate steps halved after a failed sweep."""
    f = fun(theta)
    for _ in range(sweeps):
        improved = False
        for i in coords(theta):
            for sign in (1.0, -1.0):
                if budget is not None and not budget.spend():
                    return theta, f
                trial = theta.copy()
                trial[i] += sign * steps[i]
                trial = project(trial)
                ft = fun(trial)
                if ft < f:
                    theta, f, improved = trial, ft, True
                    break
        if not improved:
            steps = steps * 0.5
            if steps.max() < 1e-12:
                break
    return theta, f


def _pair_tools(prior: Prior):
    p = prior.n_params

    def split(t):
        return t[:p], t[p:]

    def coords(t):
        tx, ty = split(t)
        return np.concatenate([prior.free_coords(tx), p + prior.free_coords(ty)])

    def project(t):
        tx, ty = split(t)
        return np.concatenate([prior.project_params(tx), prior.project_params(ty)])

    return split, coords, project


def estimate_lipschitz_bounds(
    prior: Prior, n_pairs: int, refine_steps: int, rng, n_refine: int = 5, floor: float = 1e-6
) -> LipschitzEstimate:
    """Sample pairs from ``prior``, then sharpen the smallest ratios by coordinate descent.

    Pairs with ``d_sigma < floor * scale`` are excluded from ``c1_hat`` and
    counted in ``n_degenerate_skipped``.
    """
    check_positive_int(n_pairs, "n_pairs")
    rng = check_random_state(rng)
    spec = prior.spec
    split, coords, project = _pair_tools(prior)

    def ratio(t):
        tx, ty = split(t)
        u, v = prior.point(tx), prior.point(ty)
        ds = _d_sigma_vec(u, v)
        if ds < floor * max(np.linalg.norm(u), np.linalg.norm(v), 1e-300):
            return math.inf
        return _gram_sqrt_dist_vec(spec, u, v) / ds

    thetas = np.hstack([prior.sample_params(n_pairs, rng), prior.sample_params(n_pairs, rng)])
    ratios = np.array([ratio(t) for t in thetas])
    ok = np.isfinite(ratios)
    if not ok.any():
        raise DegenerateSampleError("all sampled pairs were degenerate")
    c2 = float(ratios[ok].max())
    order = np.argsort(np.where(ok, ratios, np.inf))[: min(n_refine, int(ok.sum()))]
    best_t, best_f = thetas[order[0]], float(ratios[order[0]])
    for idx in order:
        t0 = thetas[idx]
        if refine_steps > 0:
            t, f = _pattern_search(ratio, t0, coords, project, _initial_steps(prior, t0), refine_steps)
        else:
            t, f = t0, ratios[idx]
        if f < best_f:
            best_t, best_f = t, float(f)
    tx, ty = split(best_t)
    return LipschitzEstimate(
        c1_hat=best_f,
        c2_hat=max(c2, best_f),
        worst_pair=(prior.signal(tx), prior.signal(ty)),
        n_pairs_evaluated=int(ok.sum()),
        n_degenerate_skipped=int((~ok).sum()),
        search={"n_pairs": n_pairs, "refine_steps": refine_steps, "n_refine": len(order), "unrefined_min": float(ratios[order[0]])},
    )


# ------------------------------------------------------------ transversality


class VerdictKind(str, enum.Enum):
    VIOLATION_FOUND = "ViolationFound"
    NO_VIOLATION_FOUND = "NoViolationFound"


@dataclass(frozen=True)
class Witness:
    """Pair in one ``H``-orbit that is not a sign flip; ``x`` is approximately ``h @ y``."""

    x: Signal
    y: Signal
    h: BlockOrthogonal
    d_H: float
    d_sigma: float

    def to_dict(self) -> dict:
        return {
            "x": signal_to_dict(self.x), "y": signal_to_dict(self.y), "h": self.h.to_dict(),
            "d_H": self.d_H, "d_sigma": self.d_sigma,
        }


@dataclass(frozen=True)
class TransversalityVerdict:
    kind: VerdictKind
    witness: Witness | None
    search_stats: dict

    @property
    def violation(self) -> bool:
        return self.kind is VerdictKind.VIOLATION_FOUND

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "witness": None if self.witness is None else self.witness.to_dict(),
            "search_stats": self.search_stats,
        }


@dataclass(frozen=True)
class Thresholds:
    d_H_max: float = 1e-7
    d_sigma_min: float = 1e-3


def _make_witness(x: Signal, y: Signal, thr: Thresholds) -> Witness | None:
    h, dh = procrustes_align(x, y)
    ds = d_sigma(x, y)
    scale = max(x.norm(), y.norm())
    if scale == 0.0 or dh > thr.d_H_max * scale or ds < thr.d_sigma_min * scale:
        return None
    return Witness(x, y, h, dh, ds)


@functools.lru_cache(maxsize=None)
def _shape_groups(spec: RepSpec) -> tuple[tuple[int, int, np.ndarray], ...]:
    """Blocks grouped by shape: ``(n, r, flat indices of shape (count, n*r))``."""
    groups: dict[tuple[int, int], list[np.ndarray]] = {}
    for off, n, r in _layout(spec):
        groups.setdefault((n, r), []).append(np.arange(off, off + n * r))
    return tuple((n, r, np.array(idx)) for (n, r), idx in groups.items())


def _skew_operator(spec: RepSpec, a: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Matrix of ``beta -> (A_l^T B_l + B_l^T A_l)_l`` with ``b = basis @ beta``.

    Rows are grouped by block shape; only norms and singular values of this
    matrix are used, so the row order is irrelevant.
    """
    rows = []
    k = basis.shape[1]
    for n, r, idx in _shape_groups(spec):
        c = idx.shape[0]
        A = a[idx].reshape(c, n, r)
        E = basis[idx].reshape(c, n, r, k)
        m = np.einsum("cnr,cnsk->crsk", A, E)
        rows.append((m + m.transpose(0, 2, 1, 3)).reshape(c * r * r, k))
    return np.vstack(rows)


def _min_direction(op: np.ndarray) -> tuple[np.ndarray, float]:
    _, s, vt = np.linalg.svd(op, full_matrices=True)
    smin = 0.0 if op.shape[1] > s.size else float(s[-1])
    return vt[-1], smin


def _skew_objective(spec, B, alpha, beta) -> float:
    r = _skew_operator(spec, B @ alpha, B) @ beta
    return float(r @ r) / float((alpha @ alpha) * (beta @ beta))


def _polish_skew_pair(spec, B, alpha, beta, max_nfev: int):
    """Levenberg-Marquardt on the bilinear defect with unit-norm constraints.

    The defect is symmetric in its arguments, so both partial Jacobians are
    skew operators.
    """
    k = B.shape[1]

    def fun(p):
        al, be = p[:k], p[k:]
        r = _skew_operator(spec, B @ al, B) @ be
        return np.concatenate([r, [al @ al - 1.0, be @ be - 1.0]])

    def jac(p):
        al, be = p[:k], p[k:]
        top = np.hstack([_skew_operator(spec, B @ be, B), _skew_operator(spec, B @ al, B)])
        cons = np.zeros((2, 2 * k))
        cons[0, :k], cons[1, k:] = 2.0 * al, 2.0 * be
        return np.vstack([top, cons])

    p0 = np.concatenate([alpha, beta])
    method = "lm" if fun(p0).size >= p0.size else "trf"
    sol = least_squares(fun, p0, jac=jac, method=method, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max(1, max_nfev))
    return sol.x[:k], sol.x[k:], int(sol.nfev)


def transversality_search_linear(
    prior: LinearPrior, budget: int, rng, warm_sweeps: int = 5, polish_nfev: int = 60,
    thresholds: Thresholds = Thresholds(),
) -> TransversalityVerdict:
    """Look for nonzero ``a, b`` in the subspace with ``A^T B`` skew, blockwise.

    Minimizes ``skew_defect(a, b)^2 / (||a||^2 ||b||^2)`` from random starts.
    Each start runs a few alternating exact minimizations (with one argument
    fixed the objective is a Rayleigh quotient, solved by the smallest right
    singular vector), then a Levenberg-Marquardt polish. Budget units are
    alternating sweeps plus polish function evaluations. A hit is turned
    into an orbit witness ``x = a + b``, ``y = a - b``.
    """
    check_positive_int(budget, "budget")
    rng = check_random_state(rng)
    spec, B = prior.spec, prior.basis
    k = B.shape[1]
    spent, restarts, best = 0, 0, math.inf
    while spent < budget:
        restarts += 1
        alpha = rng.standard_normal(k)
        alpha /= np.linalg.norm(alpha)
        beta = alpha
        for _ in range(min(warm_sweeps, budget - spent)):
            spent += 1
            beta, _ = _min_direction(_skew_operator(spec, B @ alpha, B))
            alpha, _ = _min_direction(_skew_operator(spec, B @ beta, B))
        if spent < budget:
            alpha, beta, nfev = _polish_skew_pair(spec, B, alpha, beta, min(polish_nfev, budget - spent))
            spent += nfev
        if min(np.linalg.norm(alpha), np.linalg.norm(beta)) == 0.0:
            continue
        f = _skew_objective(spec, B, alpha, beta)
        best = min(best, f)
        if f <= VIOLATION_OBJECTIVE:
            a = Signal.from_vector(spec, B @ (alpha / np.linalg.norm(alpha)))
            b = Signal.from_vector(spec, B @ (beta / np.linalg.norm(beta)))
            witness = _make_witness(a + b, a - b, thresholds)
            if witness is not None:
                rot = skew_pair_witness(a, b, tol=1e-6)
                stats = {"budget_used": spent, "best_objective": f, "restarts": restarts,
                         "rotation_residual": rot.residual}
                return TransversalityVerdict(VerdictKind.VIOLATION_FOUND, witness, stats)
    stats = {"budget_used": spent, "best_objective": best, "restarts": restarts}
    return TransversalityVerdict(VerdictKind.NO_VIOLATION_FOUND, None, stats)


def transversality_search_set(
    prior: Prior, budget: int, rng, n_refine: int = 5, thresholds: Thresholds = Thresholds()
) -> TransversalityVerdict:
    """Minimize ``d_H(x, y) / scale`` over prior pairs subject to ``d_sigma >= floor * scale``.

    Half the budget (objective evaluations) goes to random pairs, the rest
    to coordinate descent from the best of them.
    """
    check_positive_int(budget, "budget")
    rng = check_random_state(rng)
    spec = prior.spec
    split, coords, project = _pair_tools(prior)
    evals = _Budget(budget)

    def objective(t):
        tx, ty = split(t)
        u, v = prior.point(tx), prior.point(ty)
        scale = max(np.linalg.norm(u), np.linalg.norm(v))
        if scale == 0.0 or _d_sigma_vec(u, v) < thresholds.d_sigma_min * scale:
            return math.inf
        return _d_H_vec(spec, u, v) / scale

    n_sample = max(1, budget // 2)
    evals.spend(n_sample)
    thetas = np.hstack([prior.sample_params(n_sample, rng), prior.sample_params(n_sample, rng)])
    values = np.array([objective(t) for t in thetas])
    order = np.argsort(values)[:n_refine]
    best_t, best_f = thetas[order[0]], float(values[order[0]])
    for idx in order:
        if best_f <= thresholds.d_H_max or evals.left <= 0 or not np.isfinite(values[idx]):
            break
        t, f = _pattern_search(objective, thetas[idx], coords, project, _initial_steps(prior, thetas[idx]), 200, evals)
        if f < best_f:
            best_t, best_f = t, float(f)
    stats = {"budget_used": evals.used, "best_objective": best_f}
    if best_f <= thresholds.d_H_max:
        tx, ty = split(best_t)
        witness = _make_witness(prior.signal(tx), prior.signal(ty), thresholds)
        if witness is not None:
            return TransversalityVerdict(VerdictKind.VIOLATION_FOUND, witness, stats)
    return TransversalityVerdict(VerdictKind.NO_VIOLATION_FOUND, None, stats)


def _chart_pair_search(ci: AffineChart, cj: AffineChart, starts: int, rng, thresholds: Thresholds):
    """Search ``x`` in ``ci``, ``y`` in ``cj`` with equal Gram tuples and ``x != +-y``.

    The residual is ``2 (X^T X - Y^T Y) / (||x + y|| ||x - y||)``, whose squared
    norm equals the normalized skew objective of ``a = (x+y)/2, b = (x-y)/2``.
    """
    spec = ci.spec
    ki = ci.dim

    def residual(p):
        u, v = ci.point(p[:ki]), cj.point(p[ki:])
        den = np.linalg.norm(u + v) * np.linalg.norm(u - v)
        parts = [(x.T @ x - y.T @ y).ravel() for x, y in zip(_blocks(spec, u), _blocks(spec, v))]
        return 2.0 * np.concatenate(parts) / max(den, 1e-300)

    best = (math.inf, None)
    for _ in range(starts):
        p0 = rng.standard_normal(ki + cj.dim)
        try:
            sol = least_squares(residual, p0, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400)
        except ValueError:
            continue
        f = float(np.sum(sol.fun**2))
        if f < best[0]:
            best = (f, sol.x)
        if f <= VIOLATION_OBJECTIVE:
            x = Signal.from_vector(spec, ci.point(sol.x[:ki]))
            y = Signal.from_vector(spec, cj.point(sol.x[ki:]))
            witness = _make_witness(x, y, thresholds)
            if witness is not None:
                return f, witness
    return best[0], None


def hull_transversality_check(
    prior: Prior, budget: int, rng, n_pieces: int = 8, thresholds: Thresholds = Thresholds()
) -> TransversalityVerdict:
    """Transversality search on the hull set built from ``prior.hull_pieces``.

    A linear prior is its own hull and is delegated to the linear search.
    Otherwise ``budget`` local least-squares starts are spread over all
    unordered pairs of pieces (at least one start per pair).
    """
    check_positive_int(budget, "budget")
    rng = check_random_state(rng)
    if isinstance(prior, LinearPrior):
        return transversality_search_linear(prior, budget, rng, thresholds=thresholds)
    pieces = prior.hull_pieces(None if prior.kind == "sparse" else n_pieces, rng)
    pairs = list(itertools.combinations_with_replacement(range(len(pieces)), 2))
    starts = max(1, budget // len(pairs))
    best = math.inf
    for i, j in pairs:
        f, witness = _chart_pair_search(pieces[i], pieces[j], starts, rng, thresholds)
        best = min(best, f)
        if witness is not None:
            stats = {"n_pieces": len(pieces), "pairs_searched": pairs.index((i, j)) + 1, "best_objective": f}
            return TransversalityVerdict(VerdictKind.VIOLATION_FOUND, witness, stats)
    stats = {"n_pieces": len(pieces), "pairs_searched": len(pairs), "starts_per_pair": starts, "best_objective": best}
    return TransversalityVerdict(VerdictKind.NO_VIOLATION_FOUND, None, stats)


# ------------------------------------------------------------ exact constants


def c_operator(x0: Signal, chart: AffineChart) -> np.ndarray:
    """Matrix of ``S -> X0^T S + S^T X0`` on the chart's orthonormal directions."""
    return _skew_operator(x0.spec, x0.to_vector(), chart.basis)


def c_constant(x0: Signal, chart: AffineChart) -> float:
    """Exact minimum of ``||X0^T S + S^T X0||`` over unit ``S`` in the chart span."""
    if chart.dim == 0:
        raise ValueError("chart has no directions")
    if chart.spec != x0.spec:
        raise ValueError("chart and point have different specs")
    return _min_direction(c_operator(x0, chart))[1]


# ------------------------------------------------------------ counterexamples

SEGMENT_COLUMNS = ("y", "d_sigma", "d_H", "d_H_bound", "dH_over_dsigma", "lipschitz_ratio")
PLANE_COLUMNS = ("a", "d_sigma", "d_H", "d_H_brute", "dsigma_over_dH")


def counterexample_line_segment(ys) -> Table:
    """Distances between ``(1, 0)`` and ``(1, y)`` in one ``(2, 1)`` block.

    ``d_H`` shrinks like ``y^2 / 2`` while ``d_sigma = y``; the table's
    ``checks`` record the monotone decay and the ``0.6 y^2`` bound.
    """
    spec = RepSpec(((2, 1),))
    x = Signal(spec, (np.array([[1.0], [0.0]]),))
    table = Table(SEGMENT_COLUMNS)
    for y_val in ys:
        y_val = float(y_val)
        if not 0.0 < y_val <= 1.0:
            raise ValueError("grid values must lie in (0, 1]")
        y = Signal(spec, (np.array([[1.0], [y_val]]),))
        bound = math.hypot(math.cos(y_val) - 1.0, math.sin(y_val) - y_val)
        ds, dh = d_sigma(x, y), d_H(x, y)
        table.append((y_val, ds, dh, bound, dh / ds, lipschitz_ratio(x, y)))
    ratios = table.column("dH_over_dsigma")
    table.checks = {
        "ratio_strictly_decreasing": all(b < a for a, b in zip(ratios, ratios[1:])),
        "d_H_below_bound": all(r[2] <= r[3] + 1e-15 for r in table.rows),
        "d_H_quadratic": all(r[2] <= 0.6 * r[0] ** 2 for r in table.rows if r[0] <= 0.5),
    }
    return table


def plane_point(s: float, t: float) -> Signal:
    return Signal.from_vector(RepSpec(((1, 1),) * 4), [s, t, s + 1.0, t + 1.0])


def brute_force_d_H(x: Signal, y: Signal) -> float:
    """``min ||x - h y||`` over all sign patterns; only for all-``N_l = 1`` specs."""
    if any(n != 1 for n, _ in x.spec.blocks):
        raise ValueError("brute force needs every block to have N_l = 1")
    xs = [b.ravel() for b in x.blocks]
    ys = [b.ravel() for b in y.blocks]
    best = math.inf
    for signs in itertools.product((1.0, -1.0), repeat=len(xs)):
        val = math.sqrt(sum(float(np.sum((p - s * q) ** 2)) for p, q, s in zip(xs, ys, signs)))
        best = min(best, val)
    return best


def counterexample_affine_plane(as_) -> Table:
    """``X_a = v[a, a]`` against ``Y_a = v[a, -a]`` under ``O(1)^4``."""
    table = Table(PLANE_COLUMNS)
    for a in as_:
        a = float(a)
        if a < 1.0:
            raise ValueError("a must be >= 1")
        x, y = plane_point(a, a), plane_point(a, -a)
        ds, dh = d_sigma(x, y), d_H(x, y)
        table.append((a, ds, dh, brute_force_d_H(x, y), ds / dh))
    table.checks = {
        "d_sigma_is_sqrt8_a": all(abs(r[1] - math.sqrt(8.0) * r[0]) <= 1e-9 * max(1.0, r[0]) for r in table.rows),
        "d_H_is_2": all(r[3] == 2.0 and abs(r[2] - 2.0) <= 1e-12 for r in table.rows),
        "ratio_is_sqrt2_a": all(abs(r[4] - SQRT2 * r[0]) <= 1e-9 * r[0] for r in table.rows),
    }
    return table
