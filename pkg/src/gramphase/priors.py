"""Structured signal sets: linear, sparse, ReLU-generated and manifold priors.

Every prior is parametrized: ``point(theta)`` maps a parameter vector to a
flattened signal and ``jacobian(theta)`` gives its derivative. The
stability searches and the recovery solver only talk to priors through
that interface plus ``sample_params``, ``bounds`` and ``free_coords``.

"Generic" always means i.i.d. standard Gaussian parameters.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._validation import check_positive_int, check_random_state, orthonormal_columns
from .repspec import RepSpec, Signal

BOUNDARY_TOL = 1e-10


class ActivationBoundaryError(ValueError):
    """The latent point sits on a ReLU switching surface; no chart exists there."""


@dataclass(frozen=True, eq=False)
class AffineChart:
    """Affine piece ``anchor + span(directions)`` with orthonormal directions."""

    spec: RepSpec
    anchor: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float).reshape(self.spec.ambient_dim, -1)
        if basis.shape[1] and np.abs(basis.T @ basis - np.eye(basis.shape[1])).max() > 1e-10:
            raise ValueError("chart directions must be orthonormal")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float).ravel())

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def is_linear(self) -> bool:
        """True when the anchor lies in the direction span (the piece contains 0)."""
        resid = self.anchor - self.basis @ (self.basis.T @ self.anchor)
        return bool(np.linalg.norm(resid) <= 1e-12 * (1.0 + np.linalg.norm(self.anchor)))

    def point(self, coeffs) -> np.ndarray:
        return self.anchor + self.basis @ np.asarray(coeffs, dtype=float)

    def anchor_signal(self) -> Signal:
        return Signal.from_vector(self.spec, self.anchor)

    def directions(self) -> list[Signal]:
        return [Signal.from_vector(self.spec, c) for c in self.basis.T]

    def transformed(self, A: np.ndarray) -> "AffineChart":
        return AffineChart(self.spec, A @ self.anchor, orthonormal_columns(A @ self.basis))


def _check_transform(A, d: int) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape != (d, d):
        raise ValueError(f"transform must be {d}x{d}, got {A.shape}")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise ValueError("transform is singular")
    return A


class Prior:
    """Common parametrized-prior interface."""

    kind = "prior"
    spec: RepSpec
    dim: int
    bounds: tuple[np.ndarray, np.ndarray] | None = None
    recipe: dict | None = None

    @property
    def n_params(self) -> int:
        raise NotImplementedError

    def sample_params(self, n: int, rng) -> np.ndarray:
        raise NotImplementedError

    def point(self, theta) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta) -> np.ndarray:
        raise NotImplementedError

    def free_coords(self, theta) -> np.ndarray:
        return np.arange(self.n_params)

    def project_params(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.bounds is None:
            return theta
        return np.clip(theta, self.bounds[0], self.bounds[1])

    def signal(self, theta) -> Signal:
        return Signal.from_vector(self.spec, self.point(theta))

    def sample(self, n: int, rng) -> list[Signal]:
        check_positive_int(n, "n")
        return [self.signal(t) for t in self.sample_params(n, rng)]

    def chart(self, theta) -> AffineChart:
        raise NotImplementedError

    def hull_pieces(self, budget: int, rng) -> list[AffineChart]:
        raise NotImplementedError

    def transformed(self, A: np.ndarray) -> "Prior":
        raise NotImplementedError

    def to_dict(self) -> dict:
        if self.recipe is None:
            raise TypeError(f"{type(self).__name__} was not built from a serializable recipe")
        return dict(self.recipe)

    def _with_transform_recipe(self, new: "Prior", A: np.ndarray) -> "Prior":
        if self.recipe is not None:
            recipe = dict(self.recipe)
            recipe["transforms"] = list(recipe.get("transforms", [])) + [A.tolist()]
            new.recipe = recipe
        return new


class LinearPrior(Prior):
    """Linear subspace. Samples are ``G @ theta`` with Gaussian ``theta``.

    ``basis`` is the orthonormalized span of ``G``; it is kept separately so
    that a generic transform acts on samples exactly as ``A @ x``.
    """

    kind = "linear"

    def __init__(self, spec: RepSpec, generator: np.ndarray):
        generator = np.asarray(generator, dtype=float)
        if generator.ndim != 2 or generator.shape[0] != spec.ambient_dim:
            raise ValueError("generator must have shape (ambient_dim, M)")
        s = np.linalg.svd(generator, compute_uv=False)
        if s.size == 0 or s[-1] <= 0 or (s[0] / s[-1]) ** 2 >= 1e8:
            raise ValueError("prior vectors are not numerically independent")
        self.spec = spec
        self.generator = generator
        self.basis = np.linalg.qr(generator)[0]
        self.dim = generator.shape[1]

    @classmethod
    def from_signals(cls, signals: Sequence[Signal]) -> "LinearPrior":
        spec = signals[0].spec
        return cls(spec, np.column_stack([s.to_vector() for s in signals]))

    @property
    def n_params(self) -> int:
        return self.dim

    def sample_params(self, n, rng):
        return check_random_state(rng).standard_normal((n, self.dim))

    def point(self, theta):
        return self.generator @ np.asarray(theta, dtype=float)

    def jacobian(self, theta):
        return self.generator

    def contains(self, x: Signal, atol: float = 1e-10) -> bool:
        v = x.to_vector()
        return bool(np.linalg.norm(v - self.basis @ (self.basis.T @ v)) <= atol * (1.0 + np.linalg.norm(v)))

    def chart(self, theta=None):
        return AffineChart(self.spec, np.zeros(self.spec.ambient_dim), self.basis)

    def hull_pieces(self, budget=1, rng=None):
        return [self.chart()]

    def transformed(self, A):
        A = _check_transform(A, self.spec.ambient_dim)
        return self._with_transform_recipe(LinearPrior(self.spec, A @ self.generator), A)


class SparsePrior(Prior):
    """Vectors with at most ``M`` nonzero coefficients in a dictionary basis.

    Parameters are full coefficient vectors; only the support entries move.
    """

    kind = "sparse"

    def __init__(self, spec: RepSpec, dictionary: np.ndarray, sparsity: int, orthonormal: bool = False):
        d = spec.ambient_dim
        dictionary = np.asarray(dictionary, dtype=float)
        if dictionary.shape != (d, d):
            raise ValueError(f"dictionary must be {d}x{d}")
        if np.linalg.matrix_rank(dictionary) < d:
            raise ValueError("dictionary is not full rank")
        if orthonormal and np.abs(dictionary.T @ dictionary - np.eye(d)).max() > 1e-10:
            raise ValueError("dictionary flagged orthonormal but is not")
        self.spec = spec
        self.dictionary = dictionary
        self.dim = check_positive_int(sparsity, "M")
        if self.dim > d:
            raise ValueError("sparsity exceeds ambient dimension")
        self.orthonormal = bool(orthonormal)

    @property
    def n_params(self) -> int:
        return self.spec.ambient_dim

    def supports(self) -> list[tuple[int, ...]]:
        return list(itertools.combinations(range(self.spec.ambient_dim), self.dim))

    def sample_params(self, n, rng):
        rng = check_random_state(rng)
        d = self.spec.ambient_dim
        out = np.zeros((n, d))
        for row in out:
            support = rng.choice(d, size=self.dim, replace=False)
            row[support] = rng.standard_normal(self.dim)
        return out

    def point(self, theta):
        return self.dictionary @ np.asarray(theta, dtype=float)

    def jacobian(self, theta):
        return self.dictionary

    def free_coords(self, theta):
        support = np.flatnonzero(np.asarray(theta) != 0.0)
        if support.size < self.dim:
            # pad so a coefficient that hit zero can come back
            rest = [i for i in range(self.n_params) if i not in set(support)]
            support = np.concatenate([support, rest[: self.dim - support.size]]).astype(int)
        return np.sort(support)

    def coefficients(self, x: Signal) -> np.ndarray:
        return np.linalg.solve(self.dictionary, x.to_vector())

    def support_of(self, point_or_params) -> tuple[int, ...]:
        if isinstance(point_or_params, Signal):
            c = self.coefficients(point_or_params)
        else:
            c = np.asarray(point_or_params, dtype=float)
        tol = 1e-10 * max(np.abs(c).max(initial=0.0), 1.0)
        support = tuple(int(i) for i in np.flatnonzero(np.abs(c) > tol))
        if len(support) > self.dim:
            raise ValueError(f"point has {len(support)} nonzero coefficients, sparsity is {self.dim}")
        return support

    def _span(self, support) -> AffineChart:
        return AffineChart(
            self.spec, np.zeros(self.spec.ambient_dim), orthonormal_columns(self.dictionary[:, list(support)])
        )

    def chart(self, point_or_params):
        return self._span(self.support_of(point_or_params))

    def hull_pieces(self, budget=None, rng=None):
        """Charts ``span(S_i u S_j)`` over unordered support pairs (``i == j`` included)."""
        supports = self.supports()
        n_pairs = len(supports) * (len(supports) + 1) // 2
        if budget is None or n_pairs <= budget:
            pairs = itertools.combinations_with_replacement(supports, 2)
        else:
            rng = check_random_state(rng)
            pairs = []
            for _ in range(budget):
                i, j = rng.integers(len(supports), size=2)
                pairs.append((supports[i], supports[j]))
        return [self._span(sorted(set(a) | set(b))) for a, b in pairs]

    def transformed(self, A):
        A = _check_transform(A, self.spec.ambient_dim)
        new = SparsePrior(self.spec, A @ self.dictionary, self.dim, orthonormal=False)
        return self._with_transform_recipe(new, A)


class ReluPrior(Prior):
    """Image of the latent cube ``[0,1]^M`` under ``A_k o relu o ... o relu o A_1``."""

    kind = "relu"

    def __init__(self, spec: RepSpec, layers: Sequence[tuple[np.ndarray, np.ndarray]]):
        layers = [(np.asarray(w, dtype=float), np.asarray(b, dtype=float).ravel()) for w, b in layers]
        if not layers:
            raise ValueError("need at least one layer")
        for (w1, _), (w2, _) in zip(layers, layers[1:]):
            if w2.shape[1] != w1.shape[0]:
                raise ValueError("consecutive layer shapes do not compose")
        for w, b in layers:
            if b.shape != (w.shape[0],):
                raise ValueError("offset length must match layer output")
        w_last = layers[-1][0]
        d = spec.ambient_dim
        if w_last.shape != (d, d):
            raise ValueError(f"final layer must be square {d}x{d}, got {w_last.shape}")
        if np.linalg.matrix_rank(w_last) < d:
            raise ValueError("final layer is not full rank")
        self.spec = spec
        self.layers = layers
        self.dim = layers[0][0].shape[1]
        self.bounds = (np.zeros(self.dim), np.ones(self.dim))

    @property
    def n_params(self) -> int:
        return self.dim

    def sample_params(self, n, rng):
        return check_random_state(rng).uniform(size=(n, self.dim))

    def preactivations(self, z) -> list[np.ndarray]:
        h = np.asarray(z, dtype=float)
        pre = []
        for w, b in self.layers[:-1]:
            u = w @ h + b
            pre.append(u)
            h = np.maximum(u, 0.0)
        return pre

    def activation_pattern(self, z) -> tuple[tuple[bool, ...], ...]:
        return tuple(tuple(bool(v) for v in u > 0) for u in self.preactivations(z))

    def on_boundary(self, z) -> bool:
        return any(np.any(np.abs(u) < BOUNDARY_TOL) for u in self.preactivations(z))

    def point(self, z):
        h = np.asarray(z, dtype=float)
        for w, b in self.layers[:-1]:
            h = np.maximum(w @ h + b, 0.0)
        w, b = self.layers[-1]
        return w @ h + b

    def jacobian(self, z):
        jac = np.eye(self.dim)
        for (w, _), u in zip(self.layers[:-1], self.preactivations(z)):
            jac = (u > 0)[:, None] * (w @ jac)
        return self.layers[-1][0] @ jac

    def chart(self, z):
        if self.on_boundary(z):
            raise ActivationBoundaryError("latent point lies on an activation boundary")
        return AffineChart(self.spec, self.point(z), orthonormal_columns(self.jacobian(z)))

    def hull_pieces(self, budget, rng):
        """Pieces ``A_i + V_j`` over the activation regions hit by ``budget`` latent samples."""
        rng = check_random_state(rng)
        charts: dict = {}
        for z in self.sample_params(check_positive_int(budget, "budget"), rng):
            if self.on_boundary(z):
                continue
            charts.setdefault(self.activation_pattern(z), self.chart(z))
        pieces = []
        for ci in charts.values():
            for cj in charts.values():
                pieces.append(AffineChart(self.spec, ci.anchor, orthonormal_columns(np.hstack([ci.basis, cj.basis]))))
        return pieces

    def transformed(self, A):
        A = _check_transform(A, self.spec.ambient_dim)
        w, b = self.layers[-1]
        new = ReluPrior(self.spec, list(self.layers[:-1]) + [(A @ w, A @ b)])
        return self._with_transform_recipe(new, A)


class ManifoldPrior(Prior):
    """Linear image ``E f(theta)`` of a parametrized smooth family ``f``.

    ``point_fn``/``jac_fn`` describe the family in its own coordinates;
    ``embed`` maps those coordinates into ``V``.
    """

    kind = "manifold"

    def __init__(
        self,
        spec: RepSpec,
        family: str,
        intrinsic_dim: int,
        n_params: int,
        point_fn: Callable[[np.ndarray], np.ndarray],
        jac_fn: Callable[[np.ndarray], np.ndarray],
        param_sampler: Callable[[int, np.random.Generator], np.ndarray],
        embed: np.ndarray | None = None,
        bounds: tuple | None = None,
        well_situated: bool = False,
        homogeneous: bool = False,
        negate_params: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        self.spec = spec
        self.family = family
        self.dim = check_positive_int(intrinsic_dim, "intrinsic_dim", minimum=0)
        self._n_params = n_params
        self.point_fn, self.jac_fn, self.param_sampler = point_fn, jac_fn, param_sampler
        m = np.asarray(point_fn(param_sampler(1, np.random.default_rng(0))[0])).size
        self.embed = np.eye(m) if embed is None else np.asarray(embed, dtype=float)
        if self.embed.shape != (spec.ambient_dim, m):
            raise ValueError(f"embedding must have shape ({spec.ambient_dim}, {m})")
        if np.linalg.matrix_rank(self.embed) < m:
            raise ValueError("embedding must be injective")
        self.bounds = None if bounds is None else (np.asarray(bounds[0], float), np.asarray(bounds[1], float))
        self.well_situated = bool(well_situated)
        self.homogeneous = bool(homogeneous)
        self.negate_params = negate_params

    @property
    def n_params(self) -> int:
        return self._n_params

    def sample_params(self, n, rng):
        return self.param_sampler(n, check_random_state(rng))

    def point(self, theta):
        return self.embed @ self.point_fn(np.asarray(theta, dtype=float))

    def jacobian(self, theta):
        return self.embed @ self.jac_fn(np.asarray(theta, dtype=float))

    def chart(self, theta):
        return AffineChart(self.spec, self.point(theta), orthonormal_columns(self.jacobian(theta)))

    def hull_pieces(self, budget, rng):
        """Affine tangent spaces at ``budget`` sampled points."""
        return [self.chart(t) for t in self.sample_params(check_positive_int(budget, "budget"), rng)]

    def check_well_situated(self, n: int, rng, tol: float = 1e-9) -> bool:
        """Sampling check: no point near 0, and ``-M == M`` verified pointwise when the family is symmetric."""
        thetas = self.sample_params(n, rng)
        pts = np.array([self.point(t) for t in thetas])
        if np.linalg.norm(pts, axis=1).min() <= tol:
            return False
        if self.negate_params is None:
            return True
        neg = np.array([self.point(self.negate_params(t)) for t in thetas])
        return bool(np.abs(neg + pts).max() <= tol * (1.0 + np.abs(pts).max()))

    def transformed(self, A):
        A = _check_transform(A, self.spec.ambient_dim)
        new = ManifoldPrior(
            self.spec, self.family, self.dim, self._n_params, self.point_fn, self.jac_fn,
            self.param_sampler, A @ self.embed, self.bounds, self.well_situated,
            self.homogeneous, self.negate_params,
        )
        return self._with_transform_recipe(new, A)


# ---------------------------------------------------------------- constructors


def _gaussian_basis(d: int, rng, orthonormal: bool) -> np.ndarray:
    g = rng.standard_normal((d, d))
    if orthonormal:
        q, r = np.linalg.qr(g)
        return q * np.sign(np.diag(r))
    return g


def generic_linear_prior(spec: RepSpec, M: int, rng) -> LinearPrior:
    M = check_positive_int(M, "M")
    if M > spec.ambient_dim:
        raise ValueError(f"M={M} exceeds ambient dimension {spec.ambient_dim}")
    seed = rng if isinstance(rng, int) else None
    rng = check_random_state(rng)
    prior = LinearPrior(spec, np.linalg.qr(rng.standard_normal((spec.ambient_dim, M)))[0])
    if seed is not None:
        prior.recipe = {"kind": "linear", "spec": spec.to_dict(), "M": M, "seed": seed}
    return prior


def sparse_prior(spec: RepSpec, M: int, orthonormal: bool, rng, standard_basis: bool = False) -> SparsePrior:
    """Generic sparse prior; ``standard_basis=True`` gives the degenerate identity dictionary."""
    M = check_positive_int(M, "M")
    if M > spec.ambient_dim:
        raise ValueError(f"M={M} exceeds ambient dimension {spec.ambient_dim}")
    d = spec.ambient_dim
    seed = rng if isinstance(rng, int) else None
    if standard_basis:
        prior = SparsePrior(spec, np.eye(d), M, orthonormal=True)
    else:
        prior = SparsePrior(spec, _gaussian_basis(d, check_random_state(rng), orthonormal), M, orthonormal)
    if seed is not None or standard_basis:
        prior.recipe = {
            "kind": "sparse", "spec": spec.to_dict(), "M": M, "orthonormal": bool(orthonormal),
            "standard_basis": bool(standard_basis), "seed": seed,
        }
    return prior


def relu_prior(spec: RepSpec, layer_dims: Sequence[int], rng) -> ReluPrior:
    """Gaussian ReLU network; ``layer_dims = [M, h_1, ..., d, d]`` with ``d = dim V``."""
    dims = [check_positive_int(v, "layer dim") for v in layer_dims]
    d = spec.ambient_dim
    if len(dims) < 2 or dims[-1] != d or dims[-2] != d:
        raise ValueError(f"layer_dims must end with [{d}, {d}] so the final layer is square")
    seed = rng if isinstance(rng, int) else None
    rng = check_random_state(rng)
    layers = [(rng.standard_normal((o, i)), rng.standard_normal(o)) for i, o in zip(dims, dims[1:])]
    prior = ReluPrior(spec, layers)
    if seed is not None:
        prior.recipe = {"kind": "relu", "spec": spec.to_dict(), "layer_dims": dims, "seed": seed}
    return prior


def sphere_prior(spec: RepSpec, M: int, embed=None, radius: float = 1.0) -> ManifoldPrior:
    """Sphere ``S^M`` of the given radius, parametrized by normalizing ``u`` in ``R^{M+1}``."""
    m = check_positive_int(M, "M") + 1

    def point_fn(u):
        return radius * u / np.linalg.norm(u)

    def jac_fn(u):
        nrm = np.linalg.norm(u)
        p = u / nrm
        return radius * (np.eye(m) - np.outer(p, p)) / nrm

    def sampler(n, rng):
        return rng.standard_normal((n, m))

    prior = ManifoldPrior(
        spec, "sphere", M, m, point_fn, jac_fn, sampler, embed,
        well_situated=True, negate_params=lambda u: -u,
    )
    prior.recipe = {
        "kind": "sphere", "spec": spec.to_dict(), "M": M, "radius": radius,
        "embed": None if embed is None else np.asarray(embed, dtype=float).tolist(),
    }
    return prior


def torus_prior(spec: RepSpec, embed=None, major: float = 2.0, minor: float = 1.0) -> ManifoldPrior:
    """Standard torus of revolution in ``R^3`` (symmetric under ``x -> -x``)."""
    if not major > minor > 0:
        raise ValueError("need major > minor > 0 so the torus avoids the origin")

    def point_fn(t):
        a, b = t
        return np.array([(major + minor * np.cos(b)) * np.cos(a), (major + minor * np.cos(b)) * np.sin(a), minor * np.sin(b)])

    def jac_fn(t):
        a, b = t
        return np.array([
            [-(major + minor * np.cos(b)) * np.sin(a), -minor * np.sin(b) * np.cos(a)],
            [(major + minor * np.cos(b)) * np.cos(a), -minor * np.sin(b) * np.sin(a)],
            [0.0, minor * np.cos(b)],
        ])

    def sampler(n, rng):
        return rng.uniform(0.0, 2.0 * np.pi, size=(n, 2))

    prior = ManifoldPrior(
        spec, "torus", 2, 2, point_fn, jac_fn, sampler, embed,
        well_situated=True, negate_params=lambda t: np.array([t[0] + np.pi, -t[1]]),
    )
    prior.recipe = {
        "kind": "torus", "spec": spec.to_dict(), "major": major, "minor": minor,
        "embed": None if embed is None else np.asarray(embed, dtype=float).tolist(),
    }
    return prior


def custom_manifold_prior(
    spec: RepSpec, intrinsic_dim: int, point_fn, jac_fn, bounds, embed=None,
    well_situated: bool = False, homogeneous: bool = False, family: str = "custom",
) -> ManifoldPrior:
    """User parametrization over a box ``bounds = (lo, hi)``; the Jacobian must be supplied."""
    lo, hi = (np.asarray(b, dtype=float).ravel() for b in bounds)

    def sampler(n, rng):
        return rng.uniform(lo, hi, size=(n, lo.size))

    return ManifoldPrior(
        spec, family, intrinsic_dim, lo.size, point_fn, jac_fn, sampler, embed,
        bounds=(lo, hi), well_situated=well_situated, homogeneous=homogeneous,
    )


def segment_prior(y_max: float = 1.0) -> ManifoldPrior:
    """The segment ``{(1, y) : 0 <= y <= y_max}`` in a single ``(2, 1)`` block."""
    prior = custom_manifold_prior(
        RepSpec(((2, 1),)), 1,
        lambda t: np.array([1.0, t[0]]),
        lambda t: np.array([[0.0], [1.0]]),
        ([0.0], [y_max]), family="segment",
    )
    prior.recipe = {"kind": "segment", "y_max": y_max}
    return prior


def affine_plane_prior(half_width: float = 10.0) -> ManifoldPrior:
    """``v[s, t] = (s, t, s+1, t+1)`` under ``O(1)^4``, with ``(s, t)`` in a box."""
    jac = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    prior = custom_manifold_prior(
        RepSpec(((1, 1),) * 4), 2,
        lambda t: np.array([t[0], t[1], t[0] + 1.0, t[1] + 1.0]),
        lambda t: jac,
        ([-half_width] * 2, [half_width] * 2), family="affine_plane",
    )
    prior.recipe = {"kind": "affine_plane", "half_width": half_width}
    return prior


def local_affine_chart(prior: Prior, point_or_latent) -> AffineChart:
    return prior.chart(point_or_latent)


def hull_pieces(prior: Prior, budget: int, rng) -> list[AffineChart]:
    return prior.hull_pieces(budget, rng)


def sample_prior(prior: Prior, n: int, rng) -> list[Signal]:
    return prior.sample(n, rng)


def embed_generic(prior: Prior, A) -> Prior:
    return prior.transformed(A)


def prior_from_dict(data: dict) -> Prior:
    """Rebuild a prior from ``Prior.to_dict`` output."""
    kind = data["kind"]
    spec = RepSpec.from_dict(data["spec"]) if "spec" in data else None
    if kind == "linear":
        prior = generic_linear_prior(spec, data["M"], data["seed"])
    elif kind == "sparse":
        prior = sparse_prior(spec, data["M"], data["orthonormal"], data["seed"], data.get("standard_basis", False))
    elif kind == "relu":
        prior = relu_prior(spec, data["layer_dims"], data["seed"])
    elif kind == "segment":
        prior = segment_prior(data["y_max"])
    elif kind == "affine_plane":
        prior = affine_plane_prior(data["half_width"])
    elif kind == "sphere":
        embed = None if data.get("embed") is None else np.asarray(data["embed"])
        prior = sphere_prior(spec, data["M"], embed, data.get("radius", 1.0))
    elif kind == "torus":
        embed = None if data.get("embed") is None else np.asarray(data["embed"])
        prior = torus_prior(spec, embed, data.get("major", 2.0), data.get("minor", 1.0))
    else:
        raise ValueError(f"unknown prior kind {kind!r}")
    for A in data.get("transforms", []):
        prior = prior.transformed(np.asarray(A, dtype=float))
    return prior


def n_sparse_hull_pieces(d: int, M: int) -> int:
    c = math.comb(d, M)
    return c * (c + 1) // 2
