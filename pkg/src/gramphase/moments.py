"""Second moments, PSD square roots, orthogonal Procrustes and skew pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_finite_matrix, frozen
from .repspec import BlockOrthogonal, RepSpec, Signal

PSD_RTOL = 1e-9


class NotPSDError(ValueError):
    """Raised when a matrix has an eigenvalue clearly below zero."""


class NotSkewPairError(ValueError):
    """Raised when ``A^T B`` is not skew-symmetric within tolerance."""


@dataclass(frozen=True, eq=False)
class GramTuple:
    """One symmetric PSD ``R_l x R_l`` matrix per block."""

    spec: RepSpec
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.blocks) != self.spec.n_blocks:
            raise ValueError("Gram tuple has the wrong number of blocks")
        checked = []
        for i, (g, (_, r)) in enumerate(zip(self.blocks, self.spec.blocks)):
            g = check_finite_matrix(g, f"block {i}", (r, r))
            scale = max(np.abs(g).max(initial=0.0), 1.0)
            if np.abs(g - g.T).max(initial=0.0) > 1e-10 * scale:
                raise ValueError(f"block {i} is not symmetric")
            checked.append(frozen(g))
        object.__setattr__(self, "blocks", tuple(checked))

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.blocks)))

    def __sub__(self, other: "GramTuple") -> "GramTuple":
        if other.spec != self.spec:
            raise ValueError("Gram tuples have different specs")
        return GramTuple(self.spec, tuple(a - b for a, b in zip(self.blocks, other.blocks)))

    def __add__(self, other: "GramTuple") -> "GramTuple":
        if other.spec != self.spec:
            raise ValueError("Gram tuples have different specs")
        return GramTuple(self.spec, tuple(a + b for a, b in zip(self.blocks, other.blocks)))

    def __mul__(self, scalar: float) -> "GramTuple":
        return GramTuple(self.spec, tuple(float(scalar) * g for g in self.blocks))

    __rmul__ = __mul__

    def min_eigenvalues(self) -> np.ndarray:
        return np.array([np.linalg.eigvalsh(g)[0] for g in self.blocks])

    def is_psd(self) -> bool:
        for g in self.blocks:
            w = np.linalg.eigvalsh(g)
            if w[0] < -PSD_RTOL * (np.abs(w).max() + 1.0):
                return False
        return True

    def to_vector(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.blocks])

    @classmethod
    def from_vector(cls, spec: RepSpec, vec) -> "GramTuple":
        vec = np.asarray(vec, dtype=float).ravel()
        blocks, pos = [], 0
        for _, r in spec.blocks:
            blocks.append(vec[pos : pos + r * r].reshape(r, r).copy())
            pos += r * r
        if pos != vec.size:
            raise ValueError("vector length does not match the spec")
        return cls(spec, tuple(blocks))

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "blocks": [g.ravel().tolist() for g in self.blocks]}


@dataclass(frozen=True)
class SkewPairWitness:
    rotation: BlockOrthogonal
    residual: float


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def second_moment(x: Signal) -> GramTuple:
    return GramTuple(x.spec, tuple(_sym(b.T @ b) for b in x.blocks))


def sqrt_psd_matrix(g: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(_sym(np.asarray(g, dtype=float)))
    scale = np.abs(w).max(initial=0.0) + 1.0
    if w.size and w[0] < -PSD_RTOL * scale:
        raise NotPSDError(f"smallest eigenvalue {w[0]:.3e} is below -{PSD_RTOL:g} * {scale:.3e}")
    # eigenvalues at roundoff level are zeros; sqrt would blow them up to 1e-8
    w = np.where(w <= 10 * w.size * np.finfo(float).eps * np.abs(w).max(initial=0.0), 0.0, w)
    return _sym((v * np.sqrt(w)) @ v.T)


def sqrt_psd(G: GramTuple) -> GramTuple:
    return GramTuple(G.spec, tuple(sqrt_psd_matrix(g) for g in G.blocks))


def sqrt_moment(x: Signal) -> GramTuple:
    return sqrt_psd(second_moment(x))


def psd_project(G: GramTuple) -> GramTuple:
    """Clamp negative eigenvalues of each block to zero."""
    out = []
    for g in G.blocks:
        w, v = np.linalg.eigh(_sym(g))
        out.append(_sym((v * np.clip(w, 0.0, None)) @ v.T))
    return GramTuple(G.spec, tuple(out))


def skew_defect(a: Signal, b: Signal) -> float:
    """Frobenius norm of the block-diagonal aggregate of ``A_l^T B_l + B_l^T A_l``."""
    a._check_same(b)
    total = 0.0
    for p, q in zip(a.blocks, b.blocks):
        m = p.T @ q
        total += float(np.sum((m + m.T) ** 2))
    return float(np.sqrt(total))


def procrustes_block(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Orthogonal ``Q`` minimising ``||x - Q y||`` for ``N x R`` blocks."""
    u, _, vt = np.linalg.svd(x @ y.T)
    return u @ vt


def procrustes_align(x: Signal, y: Signal) -> tuple[BlockOrthogonal, float]:
    """Best ``h`` in ``H`` aligning ``y`` onto ``x``, and the residual ``||x - h y||``.

    ``H`` is a direct product, so each block is an independent orthogonal
    Procrustes problem solved from the SVD of ``X_l Y_l^T``.
    """
    x._check_same(y)
    qs = tuple(procrustes_block(p, q) for p, q in zip(x.blocks, y.blocks))
    resid = float(np.sqrt(sum(np.sum((p - qq @ q) ** 2) for p, q, qq in zip(x.blocks, y.blocks, qs))))
    return BlockOrthogonal(x.spec, qs), resid


def procrustes_residual_nuclear(x: Signal, y: Signal) -> float:
    """Closed form ``sqrt(sum ||X||^2 + ||Y||^2 - 2 ||X Y^T||_*)`` of the aligned residual."""
    x._check_same(y)
    total = 0.0
    for p, q in zip(x.blocks, y.blocks):
        nuc = np.linalg.svd(p @ q.T, compute_uv=False).sum()
        total += np.sum(p * p) + np.sum(q * q) - 2.0 * nuc
    return float(np.sqrt(max(total, 0.0)))


def skew_pair_witness(a: Signal, b: Signal, tol: float = 1e-8) -> SkewPairWitness:
    """Rotation ``R`` in ``H`` with ``A - B = R (A + B)`` when ``A^T B`` is skew.

    The defect is compared against ``tol * ||a|| * ||b||``; the relation is
    homogeneous in each argument, so the tolerance is unitless.
    """
    defect = skew_defect(a, b)
    scale = a.norm() * b.norm()
    if defect > tol * scale:
        raise NotSkewPairError(f"skew defect {defect:.3e} exceeds {tol:g} * {scale:.3e}")
    rot, resid = procrustes_align(a - b, a + b)
    return SkewPairWitness(rot, resid)
