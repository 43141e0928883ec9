"""Block structure of the ambient space and of the ambiguity group.

A representation ``V = (+)_l V_l^{R_l}`` is described by the ordered list of
block shapes ``(N_l, R_l)``: ``N_l`` is the dimension of the irreducible and
``R_l`` its multiplicity. Signals are tuples of ``N_l x R_l`` matrices and the
ambiguity group ``H`` is the product of the orthogonal groups ``O(N_l)``.

Block order is significant everywhere: signals, Gram tuples and group
elements index blocks by position.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from ._validation import check_finite_matrix, check_positive_int, check_random_state, frozen


@dataclass(frozen=True)
class RepSpec:
    """Ordered block shapes ``((N_1, R_1), ..., (N_L, R_L))``."""

    blocks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        blocks = tuple(
            (check_positive_int(n, "N"), check_positive_int(r, "R")) for n, r in self.blocks
        )
        if not blocks:
            raise ValueError("a RepSpec needs at least one block")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_blocks(cls, blocks: Iterable[Sequence[int]]) -> "RepSpec":
        return cls(tuple((int(n), int(r)) for n, r in blocks))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def ambient_dim(self) -> int:
        return ambient_dim(self)

    def offsets(self) -> list[int]:
        """Start index of each block in the flattened (row-major) vector."""
        out, pos = [], 0
        for n, r in self.blocks:
            out.append(pos)
            pos += n * r
        return out

    def to_dict(self) -> dict:
        return {"blocks": [[n, r] for n, r in self.blocks]}

    @classmethod
    def from_dict(cls, data: dict) -> "RepSpec":
        return cls.from_blocks(data["blocks"])


@dataclass(frozen=True, eq=False)
class Signal:
    """An element of ``V``: one ``N_l x R_l`` real matrix per block.

    The flattened form concatenates the blocks, each in row-major order.
    """

    spec: RepSpec
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.blocks) != self.spec.n_blocks:
            raise ValueError(
                f"signal has {len(self.blocks)} blocks, spec has {self.spec.n_blocks}"
            )
        checked = tuple(
            frozen(check_finite_matrix(b, f"block {i}", shape))
            for i, (b, shape) in enumerate(zip(self.blocks, self.spec.blocks))
        )
        object.__setattr__(self, "blocks", checked)

    @classmethod
    def from_vector(cls, spec: RepSpec, vec) -> "Signal":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != spec.ambient_dim:
            raise ValueError(f"vector has length {vec.size}, spec needs {spec.ambient_dim}")
        blocks = []
        for off, (n, r) in zip(spec.offsets(), spec.blocks):
            blocks.append(vec[off : off + n * r].reshape(n, r).copy())
        return cls(spec, tuple(blocks))

    @classmethod
    def zeros(cls, spec: RepSpec) -> "Signal":
        return cls(spec, tuple(np.zeros(shape) for shape in spec.blocks))

    @classmethod
    def random(cls, spec: RepSpec, rng) -> "Signal":
        rng = check_random_state(rng)
        return cls.from_vector(spec, rng.standard_normal(spec.ambient_dim))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.blocks])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(b * b) for b in self.blocks)))

    def _check_same(self, other: "Signal") -> None:
        if not isinstance(other, Signal):
            raise TypeError(f"expected a Signal, got {type(other).__name__}")
        if other.spec != self.spec:
            raise ValueError("signals have different block specs")

    def __add__(self, other: "Signal") -> "Signal":
        self._check_same(other)
        return Signal(self.spec, tuple(a + b for a, b in zip(self.blocks, other.blocks)))

    def __sub__(self, other: "Signal") -> "Signal":
        self._check_same(other)
        return Signal(self.spec, tuple(a - b for a, b in zip(self.blocks, other.blocks)))

    def __neg__(self) -> "Signal":
        return Signal(self.spec, tuple(-a for a in self.blocks))

    def __mul__(self, scalar: float) -> "Signal":
        return Signal(self.spec, tuple(float(scalar) * a for a in self.blocks))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "Signal":
        return self * (1.0 / float(scalar))

    def allclose(self, other: "Signal", atol: float = 1e-10) -> bool:
        self._check_same(other)
        return all(np.allclose(a, b, rtol=0.0, atol=atol) for a, b in zip(self.blocks, other.blocks))

    def __repr__(self) -> str:
        return f"Signal(spec={list(self.spec.blocks)}, norm={self.norm():.6g})"


@dataclass(frozen=True, eq=False)
class BlockOrthogonal:
    """An element of ``H = O(N_1) x ... x O(N_L)``."""

    spec: RepSpec
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.blocks) != self.spec.n_blocks:
            raise ValueError("group element has the wrong number of blocks")
        checked = []
        for i, (q, (n, _)) in enumerate(zip(self.blocks, self.spec.blocks)):
            q = check_finite_matrix(q, f"block {i}", (n, n))
            if np.linalg.norm(q.T @ q - np.eye(n)) > 1e-10 * n:
                raise ValueError(f"block {i} is not orthogonal")
            checked.append(frozen(q))
        object.__setattr__(self, "blocks", tuple(checked))

    @classmethod
    def identity(cls, spec: RepSpec) -> "BlockOrthogonal":
        return cls(spec, tuple(np.eye(n) for n, _ in spec.blocks))

    def __neg__(self) -> "BlockOrthogonal":
        return BlockOrthogonal(self.spec, tuple(-q for q in self.blocks))

    def __matmul__(self, other: "BlockOrthogonal") -> "BlockOrthogonal":
        return BlockOrthogonal(self.spec, tuple(a @ b for a, b in zip(self.blocks, other.blocks)))

    def as_matrix(self) -> np.ndarray:
        """Action on flattened signals as a dense ``dim V x dim V`` matrix."""
        from scipy.linalg import block_diag

        return block_diag(*[np.kron(q, np.eye(r)) for q, (_, r) in zip(self.blocks, self.spec.blocks)])

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "blocks": [q.ravel().tolist() for q in self.blocks]}


class GateKind(str, enum.Enum):
    INJECTIVITY_2M = "injectivity_2M"
    STABILITY_4M = "stability_4M"
    STABILITY_ORTHONORMAL_4M_PLUS_2 = "stability_orthonormal_4M_plus_2"


@dataclass(frozen=True)
class DimensionGate:
    gate_kind: GateKind
    prior_dim: int
    K: int
    passes: bool

    @property
    def threshold(self) -> int:
        return _gate_lhs(self.gate_kind, self.prior_dim)


def _gate_lhs(kind: GateKind, m: int) -> int:
    return {
        GateKind.INJECTIVITY_2M: 2 * m,
        GateKind.STABILITY_4M: 4 * m,
        GateKind.STABILITY_ORTHONORMAL_4M_PLUS_2: 4 * m + 2,
    }[kind]


def ambient_dim(spec: RepSpec) -> int:
    return sum(n * r for n, r in spec.blocks)


def _dim_orthogonal(n: int) -> Fraction:
    return Fraction(n * (n - 1), 2) if n > 0 else Fraction(0)


def block_orbit_dim(n: int, r: int) -> Fraction:
    """Generic orbit dimension of ``O(n)`` acting on ``n x r`` matrices."""
    if n >= r:
        return r * (n - Fraction(r, 2) - Fraction(1, 2))
    return Fraction(n * n - n, 2)


def max_orbit_dim(spec: RepSpec) -> int:
    """Maximal orbit dimension ``k(H)`` of ``H`` on ``V``, as an exact integer."""
    total = sum((block_orbit_dim(n, r) for n, r in spec.blocks), Fraction(0))
    if total.denominator != 1:
        raise ArithmeticError(f"orbit dimension {total} is not an integer")
    return int(total)


def effective_dim_K(spec: RepSpec) -> int:
    """``K = dim V - k(H)``, the budget the prior dimension is gated against."""
    return ambient_dim(spec) - max_orbit_dim(spec)


def cryoem_K(L: int, R: int) -> int:
    """Closed form of ``K`` for ``(+)_{l=0..L} V_l^R`` with ``dim V_l = 2l+1``, valid for ``R >= 2L+1``."""
    check_positive_int(L, "L", minimum=0)
    check_positive_int(R, "R")
    if R < 2 * L + 1:
        raise ValueError(f"closed form needs R >= 2L+1, got L={L}, R={R}")
    value = (L + 1) * (R * (L + 1) - Fraction(L * (4 * L + 5), 6))
    if value.denominator != 1:
        raise ArithmeticError(f"K = {value} is not an integer")
    return int(value)


def zn_rep_spec(N: int) -> RepSpec:
    """Real irreducible decomposition of the cyclic shift action on ``R^N`` (``N`` even).

    Two one-dimensional blocks (constant and alternating) followed by
    ``N/2 - 1`` two-dimensional blocks, one per frequency ``1..N/2-1``.
    """
    check_positive_int(N, "N", minimum=2)
    if N % 2:
        raise ValueError(f"only even N is supported, got N={N}")
    return RepSpec(((1, 1), (1, 1)) + ((2, 1),) * (N // 2 - 1))


def cryoem_rep_spec(L: int, R: int) -> RepSpec:
    check_positive_int(L, "L", minimum=0)
    check_positive_int(R, "R")
    return RepSpec(tuple((2 * ell + 1, R) for ell in range(L + 1)))


def haar_orthogonal(n: int, rng) -> np.ndarray:
    """Haar-distributed element of ``O(n)``.

    QR of a Gaussian matrix with the columns of ``Q`` rescaled by the signs
    of ``diag(R)``; without that correction the law is not Haar.
    """
    rng = check_random_state(rng)
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def haar_sample(spec: RepSpec, rng) -> BlockOrthogonal:
    rng = check_random_state(rng)
    return BlockOrthogonal(spec, tuple(haar_orthogonal(n, rng) for n, _ in spec.blocks))


def apply_group(h: BlockOrthogonal, x: Signal) -> Signal:
    if h.spec != x.spec:
        raise ValueError("group element and signal have different specs")
    return Signal(x.spec, tuple(q @ b for q, b in zip(h.blocks, x.blocks)))


def dimension_gate(M: int, spec: RepSpec, gate_kind: GateKind | str) -> DimensionGate:
    M = check_positive_int(M, "M", minimum=0)
    kind = GateKind(gate_kind)
    K = effective_dim_K(spec)
    return DimensionGate(kind, M, K, _gate_lhs(kind, M) < K)


def all_gates(M: int, spec: RepSpec) -> list[DimensionGate]:
    return [dimension_gate(M, spec, kind) for kind in GateKind]
