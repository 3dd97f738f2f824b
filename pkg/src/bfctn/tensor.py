"""Dense tensor algebra for 4th-order fully-connected tensor networks.

Tensors are plain :class:`numpy.ndarray` objects.  Whenever a tensor is
flattened (unfoldings, vectorisation, Kronecker weights) the linearisation is
column-major in the tensor indices: the first listed index varies fastest.
Mode indices are zero-based, matching numpy axes.

Factor ``n`` of a 4th-order network carries the bond shared with factor
``j`` on its axis ``j`` and its own physical dimension on axis ``n``::

    T0: (I0, R01, R02, R03)
    T1: (R01, I1, R12, R13)
    T2: (R02, R12, I2, R23)
    T3: (R03, R13, R23, I3)
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ORDER = 4
# bond (i, j), i < j, in the canonical rank-tuple order
PAIRS = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]

_PHYS = "ijkl"
_BOND = {(0, 1): "a", (0, 2): "b", (0, 3): "c", (1, 2): "d", (1, 3): "e", (2, 3): "f"}


def _factor_labels(n: int) -> str:
    return "".join(_PHYS[n] if j == n else _BOND[tuple(sorted((n, j)))] for j in range(ORDER))


def _check_mode(ndim: int, n: int) -> None:
    if not 0 <= n < ndim:
        raise ValueError(f"mode {n} out of range for a tensor of order {ndim}")


def unfold(t: np.ndarray, n: int) -> np.ndarray:
    """Mode-``n`` unfolding, rows indexed by ``i_n``.

    Columns enumerate the remaining modes in ascending order with the first
    remaining index varying fastest.
    """
    _check_mode(t.ndim, n)
    return np.reshape(np.moveaxis(t, n, 0), (t.shape[n], -1), order="F")


def fold(mat: np.ndarray, n: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(shape)
    _check_mode(len(shape), n)
    rest = shape[:n] + shape[n + 1:]
    full = np.reshape(mat, (shape[n],) + rest, order="F")
    return np.moveaxis(full, 0, n)


def permuted_unfold(t: np.ndarray, row_modes: Sequence[int], col_modes: Sequence[int]) -> np.ndarray:
    """Generalised unfolding with arbitrary row and column mode groups.

    Rows enumerate ``row_modes`` (first listed fastest), columns enumerate
    ``col_modes`` the same way.
    """
    modes = list(row_modes) + list(col_modes)
    if sorted(modes) != list(range(t.ndim)):
        raise ValueError(f"row/col modes {row_modes}/{col_modes} are not a permutation of 0..{t.ndim - 1}")
    rows = int(np.prod([t.shape[m] for m in row_modes], dtype=np.int64))
    cols = int(np.prod([t.shape[m] for m in col_modes], dtype=np.int64))
    return np.reshape(np.transpose(t, modes), (rows, cols), order="F")


def permuted_fold(mat: np.ndarray, row_modes: Sequence[int], col_modes: Sequence[int], shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`permuted_unfold`."""
    modes = list(row_modes) + list(col_modes)
    if sorted(modes) != list(range(len(shape))):
        raise ValueError("row/col modes are not a permutation of the tensor modes")
    t = np.reshape(mat, [shape[m] for m in modes], order="F")
    return np.transpose(t, np.argsort(modes))


def mode_product(t: np.ndarray, p: np.ndarray, n: int) -> np.ndarray:
    """Mode-``n`` product ``t x_n p``; ``unfold(result, n) == p @ unfold(t, n)``."""
    _check_mode(t.ndim, n)
    p = np.atleast_2d(p)
    if p.shape[1] != t.shape[n]:
        raise ValueError(f"matrix has {p.shape[1]} columns but mode {n} has size {t.shape[n]}")
    return np.moveaxis(np.tensordot(p, t, axes=(1, n)), 0, n)


def kron_diag(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Diagonal of ``diag(v_K) kron ... kron diag(v_1)`` for ``vectors = [v_1, ..., v_K]``.

    The first vector varies fastest, which is the column order of
    :func:`unfold` when the vectors follow the remaining modes in ascending
    order.
    """
    if len(vectors) == 0:
        raise ValueError("kron_diag needs at least one vector")
    out = np.ones(1)
    for v in vectors:
        v = np.asarray(v, dtype=float).ravel()
        if np.any(v <= 0):
            raise ValueError("kron_diag entries must be positive")
        out = np.kron(v, out)
    return out


@dataclass(frozen=True)
class FctnRanks:
    """Bond dimensions in the order (R01, R02, R03, R12, R13, R23)."""

    r01: int
    r02: int
    r03: int
    r12: int
    r13: int
    r23: int

    def __post_init__(self):
        for name, value in zip(("r01", "r02", "r03", "r12", "r13", "r23"), self.as_tuple()):
            if int(value) != value or value < 1:
                raise ValueError(f"rank {name} must be a positive integer, got {value}")

    @classmethod
    def from_sequence(cls, values: Sequence[int]) -> "FctnRanks":
        if len(values) != 6:
            raise ValueError(f"expected six FCTN ranks, got {len(values)}")
        return cls(*(int(v) for v in values))

    def as_tuple(self) -> tuple[int, ...]:
        return (self.r01, self.r02, self.r03, self.r12, self.r13, self.r23)

    def bond(self, a: int, b: int) -> int:
        if a == b:
            raise ValueError("a factor has no bond with itself")
        return self.as_tuple()[PAIRS.index(tuple(sorted((a, b))))]

    def factor_shape(self, n: int, dim: int) -> tuple[int, ...]:
        return tuple(dim if j == n else self.bond(n, j) for j in range(ORDER))


@dataclass
class FactorSet:
    """The four factor tensors of a 4th-order FCTN."""

    factors: list[np.ndarray]
    ranks: FctnRanks

    def __post_init__(self):
        if len(self.factors) != ORDER:
            raise ValueError(f"expected {ORDER} factors, got {len(self.factors)}")
        for n, t in enumerate(self.factors):
            if t.ndim != ORDER:
                raise ValueError(f"factor {n} must be 4th order, got shape {t.shape}")
            expected = self.ranks.factor_shape(n, t.shape[n])
            if t.shape != expected:
                raise ValueError(f"factor {n} has shape {t.shape}, ranks require {expected}")

    def __getitem__(self, n: int) -> np.ndarray:
        return self.factors[n]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(t.shape[n] for n, t in enumerate(self.factors))

    def replace(self, n: int, t: np.ndarray) -> "FactorSet":
        factors = list(self.factors)
        factors[n] = t
        return FactorSet(factors, self.ranks)

    @classmethod
    def random(cls, dims: Sequence[int], ranks: FctnRanks, rng: np.random.Generator,
               scale: float = 1.0, distribution: str = "normal") -> "FactorSet":
        factors = []
        for n in range(ORDER):
            shape = ranks.factor_shape(n, dims[n])
            if distribution == "normal":
                factors.append(scale * rng.standard_normal(shape))
            elif distribution == "uniform":
                factors.append(scale * rng.random(shape))
            else:
                raise ValueError(f"unknown distribution {distribution!r}")
        return cls(factors, ranks)


def fctn_compose(f: FactorSet) -> np.ndarray:
    """Contract the network into the full ``I0 x I1 x I2 x I3`` tensor.

    Contraction order is fixed: T0-T1 over R01, then T2, then T3.
    """
    t0, t1, t2, t3 = f.factors
    # (i, b, c) x (a) . (a, j, d, e) -> (i, b, c, j, d, e)
    x = np.tensordot(t0, t1, axes=([1], [0]))
    # contract b (axis 1) with T2 axis 0 and d (axis 4) with T2 axis 1
    # -> (i, c, j, e, k, f)
    x = np.tensordot(x, t2, axes=([1, 4], [0, 1]))
    # contract c (1), e (3), f (5) with T3 axes 0, 1, 2 -> (i, j, k, l)
    return np.tensordot(x, t3, axes=([1, 3, 5], [0, 1, 2]))


def fctn_element(f: FactorSet, index: Sequence[int]) -> float:
    """Literal sextuple-sum evaluation of one entry; a test oracle, slow by design."""
    dims = f.dims
    if len(index) != ORDER or any(not 0 <= i < d for i, d in zip(index, dims)):
        raise IndexError(f"index {tuple(index)} out of range for dims {dims}")
    i0, i1, i2, i3 = index
    t0, t1, t2, t3 = f.factors
    r = f.ranks
    total = 0.0
    for a, b, c, d, e, g in itertools.product(range(r.r01), range(r.r02), range(r.r03),
                                              range(r.r12), range(r.r13), range(r.r23)):
        total += t0[i0, a, b, c] * t1[a, i1, d, e] * t2[b, d, i2, g] * t3[c, e, g, i3]
    return total


def _contract(operands: list[tuple[np.ndarray, str]], out: str) -> np.ndarray:
    """Pairwise tensordot over shared labels, then one transpose to ``out``.

    Every label shared by two operands must be absent from ``out``; this
    keeps each step a BLAS matrix product (``einsum`` falls back to its
    unblocked loop for these networks).
    """
    acc, labels = operands[0]
    for t, lt in operands[1:]:
        shared = [c for c in labels if c in lt]
        acc = np.tensordot(acc, t, axes=([labels.index(c) for c in shared], [lt.index(c) for c in shared]))
        labels = "".join(c for c in labels if c not in shared) + "".join(c for c in lt if c not in shared)
    return np.transpose(acc, [labels.index(c) for c in out])


def compose_excluding(f: FactorSet, n: int) -> np.ndarray:
    """Matrix form of the network with factor ``n`` removed.

    Returns ``G`` with rows ordered like the columns of ``unfold(f[n], n)``
    and columns ordered like the columns of ``unfold(fctn_compose(f), n)``,
    so that ``unfold(fctn_compose(f), n) == unfold(f[n], n) @ G``.
    """
    _check_mode(ORDER, n)
    others = [m for m in range(ORDER) if m != n]
    bonds = "".join(_BOND[tuple(sorted((n, j)))] for j in others)
    phys = "".join(_PHYS[j] for j in others)
    g = _contract([(f.factors[m], _factor_labels(m)) for m in others], bonds + phys)
    rows = int(np.prod(g.shape[:ORDER - 1]))
    return np.reshape(g, (rows, -1), order="F")


def degrade_factors(f: FactorSet, ops: dict[int, np.ndarray]) -> FactorSet:
    """Apply ``T_n x_n P_n`` to the factors named in ``ops``.

    By the mode-product property, composing the result equals the composed
    tensor multiplied by the same operators.
    """
    out = f
    for n, p in ops.items():
        out = out.replace(n, mode_product(f.factors[n], p, n))
    return out
