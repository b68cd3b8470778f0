"""Transition-matrix construction from per-head query/key features.

Global affinities are cosine similarities between all token pairs, held
either dense or as a factor pair (the row-normalized queries and keys)
whose product is never formed. Local affinities connect each token to its
up-to-8 grid neighbours plus a self-loop. Row normalization turns either
kind into a row-stochastic transition matrix, and ``fuse`` mixes the two
as a weighted pair that evaluates products term by term.

Cosines can be negative, which a stochastic matrix cannot represent. Two
non-negativity policies are provided:

* ``clamp_nonnegative`` zeroes negative entries (dense/sparse only);
* ``shift_unit_interval`` maps ``x -> (x + 1) / 2``, which keeps a factor
  pair exact by appending one all-ones column (a rank-one term).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateRow, DimensionMismatch, GridMismatch, ZeroNormRow

# Row norms below this floor signal corrupt features rather than data to fix up.
NORM_FLOOR = 1e-12
# Row sums below this floor cannot be normalized meaningfully.
ROW_SUM_FLOOR = 1e-12
# Tolerance for "rows sum to 1" checks on constructed stochastic matrices.
ROW_SUM_TOL = 1e-6


def _as_float64(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


def _check_row_sums(sums: np.ndarray, what: str) -> None:
    dev = np.abs(sums - 1.0).max() if sums.size else 0.0
    if dev > ROW_SUM_TOL:
        raise ValueError(f"{what}: row sums deviate from 1 by {dev:.3e} (tol {ROW_SUM_TOL:g})")


@dataclass(frozen=True)
class HeadFeatures:
    """Query/key matrices of one attention head; rows are grid tokens."""

    queries: np.ndarray
    keys: np.ndarray
    layer_index: int = 0
    head_index: int = 0

    def __post_init__(self):
        q = _as_float64(self.queries)
        k = _as_float64(self.keys)
        if q.ndim != 2 or k.ndim != 2 or q.shape != k.shape:
            raise DimensionMismatch(
                f"queries {np.shape(self.queries)} and keys {np.shape(self.keys)} "
                "must be equal-shape 2-d matrices"
            )
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "keys", k)

    @property
    def n(self) -> int:
        return self.queries.shape[0]

    @property
    def dim(self) -> int:
        return self.queries.shape[1]


@dataclass(frozen=True)
class FeatureBundle:
    """Per-head features plus the patch-grid geometry they live on."""

    heads: tuple[HeadFeatures, ...]
    grid_h: int
    grid_w: int
    feature_dim: int
    source_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        if self.grid_h < 2 or self.grid_w < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.grid_h}x{self.grid_w}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not self.heads:
            raise ValueError("bundle must contain at least one head")
        n = self.grid_h * self.grid_w
        for h in self.heads:
            if h.queries.shape != (n, self.feature_dim):
                raise DimensionMismatch(
                    f"head (layer {h.layer_index}, head {h.head_index}) has shape "
                    f"{h.queries.shape}, bundle declares ({n}, {self.feature_dim})"
                )
            if not (np.isfinite(h.queries).all() and np.isfinite(h.keys).all()):
                raise ValueError(
                    f"non-finite entries in head (layer {h.layer_index}, head {h.head_index})"
                )

    @property
    def n(self) -> int:
        return self.grid_h * self.grid_w


@dataclass(frozen=True)
class FusionParams:
    """Mixing weight between global and local parts, and the self-loop constant."""

    beta: float = 0.5
    epsilon_self: float = 1e-2

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.epsilon_self <= 0.0:
            raise ValueError(f"epsilon_self must be > 0, got {self.epsilon_self}")


class TransitionOperator:
    """A row-stochastic linear operator applied to n x k column blocks.

    Subclasses implement ``matmul`` (the product S @ X) and ``to_dense``;
    ``to_dense`` exists for oracles and the exact dense solver, the walk
    itself never calls it.
    """

    n: int

    def matmul(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        raise NotImplementedError

    def __matmul__(self, x):
        return self.matmul(x)

    def _operand(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.n:
            raise DimensionMismatch(
                f"operand shape {x.shape} incompatible with operator of size {self.n}"
            )
        return x


class DenseStochastic(TransitionOperator):
    """Dense n x n row-stochastic matrix."""

    def __init__(self, matrix):
        m = _as_float64(matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"expected square matrix, got {m.shape}")
        if m.size and m.min() < -ROW_SUM_FLOOR:
            raise ValueError(f"negative entries (min {m.min():.3e}) in stochastic matrix")
        _check_row_sums(m.sum(axis=1), "dense stochastic")
        self.matrix = m
        self.n = m.shape[0]

    def matmul(self, x):
        return self.matrix @ self._operand(x)

    def to_dense(self):
        return self.matrix.copy()


class LowRankStochastic(TransitionOperator):
    """Row-stochastic matrix held as ``q_factor @ k_factor.T``, never formed.

    Products bracket the skinny side first: ``q @ (k.T @ x)`` costs
    O(n*d*k) instead of O(n^2*k).
    """

    def __init__(self, q_factor, k_factor):
        q = _as_float64(q_factor)
        k = _as_float64(k_factor)
        if q.ndim != 2 or k.ndim != 2 or q.shape != k.shape:
            raise DimensionMismatch(
                f"factor shapes {q.shape} and {k.shape} must match"
            )
        _check_row_sums(q @ k.sum(axis=0), "low-rank stochastic")
        self.q_factor = q
        self.k_factor = k
        self.n = q.shape[0]

    @classmethod
    def _unchecked(cls, q_factor, k_factor):
        # Internal: partial terms of a collapsed combination are not
        # individually stochastic, so they skip row-sum validation.
        self = cls.__new__(cls)
        self.q_factor = q_factor
        self.k_factor = k_factor
        self.n = q_factor.shape[0]
        return self

    @property
    def rank_bound(self) -> int:
        return self.q_factor.shape[1]

    def matmul(self, x):
        return self.q_factor @ (self.k_factor.T @ self._operand(x))

    def to_dense(self):
        return self.q_factor @ self.k_factor.T


class SparseLocalStochastic(TransitionOperator):
    """Row-stochastic CSR matrix with at most 9 entries per row (8 neighbours + self)."""

    def __init__(self, matrix):
        if not sp.issparse(matrix):
            raise DimensionMismatch("expected a scipy sparse matrix")
        m = matrix.tocsr().astype(np.float64)
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"expected square matrix, got {m.shape}")
        if m.nnz and m.data.min() < -ROW_SUM_FLOOR:
            raise ValueError("negative entries in sparse stochastic matrix")
        row_nnz = np.diff(m.indptr)
        if row_nnz.size and row_nnz.max() > 9:
            raise ValueError(f"row with {row_nnz.max()} stored entries exceeds the 9-entry bound")
        _check_row_sums(np.asarray(m.sum(axis=1)).ravel(), "sparse-local stochastic")
        self.matrix = m
        self.n = m.shape[0]

    @classmethod
    def _unchecked(cls, matrix):
        self = cls.__new__(cls)
        self.matrix = matrix.tocsr()
        self.n = matrix.shape[0]
        return self

    def matmul(self, x):
        return self.matrix @ self._operand(x)

    def to_dense(self):
        return self.matrix.toarray()


class LinearCombination(TransitionOperator):
    """Weighted sum of transition operators, evaluated term by term.

    With convex weights over row-stochastic terms the combination is again
    row-stochastic, but the composite matrix itself is never materialized:
    ``matmul`` accumulates per-term products.
    """

    def __init__(self, terms: Sequence[tuple[float, TransitionOperator]]):
        terms = [(float(w), op) for w, op in terms]
        if not terms:
            raise ValueError("combination needs at least one term")
        n = terms[0][1].n
        for _, op in terms:
            if op.n != n:
                raise DimensionMismatch(
                    f"term sizes disagree: {op.n} vs {n}"
                )
        self.terms = terms
        self.n = n

    def matmul(self, x):
        x = self._operand(x)
        out = None
        for w, op in self.terms:
            if w == 0.0:
                continue
            part = op.matmul(x)
            if w != 1.0:
                part *= w
            out = part if out is None else np.add(out, part, out=out)
        if out is None:
            out = np.zeros_like(x)
        return out

    def to_dense(self):
        out = np.zeros((self.n, self.n))
        for w, op in self.terms:
            if w == 0.0:
                continue
            out += w * op.to_dense()
        return out

    def flattened(self) -> list[tuple[float, TransitionOperator]]:
        """Leaf terms with nested combinations multiplied through."""
        flat: list[tuple[float, TransitionOperator]] = []

        def descend(w, op):
            if isinstance(op, LinearCombination):
                for w2, op2 in op.terms:
                    descend(w * w2, op2)
            else:
                flat.append((w, op))

        for w, op in self.terms:
            descend(w, op)
        return flat

    def collapsed(self) -> "TransitionOperator":
        """Equivalent operator with mergeable terms merged.

        Low-rank terms merge by stacking weighted factor columns; sparse
        terms merge by summing (the 8-neighbour patterns coincide, so the
        sum stays just as sparse). Exact: no entry values change. Dense
        terms are kept as-is so the composite is never densified here.
        """
        lowrank: list[tuple[float, LowRankStochastic]] = []
        sparse: list[tuple[float, SparseLocalStochastic]] = []
        rest: list[tuple[float, TransitionOperator]] = []
        for w, op in self.flattened():
            if w == 0.0:
                continue
            if isinstance(op, LowRankStochastic):
                lowrank.append((w, op))
            elif isinstance(op, SparseLocalStochastic):
                sparse.append((w, op))
            else:
                rest.append((w, op))
        merged: list[tuple[float, TransitionOperator]] = []
        if len(lowrank) == 1:
            merged.append(lowrank[0])
        elif lowrank:
            q = np.hstack([w * op.q_factor for w, op in lowrank])
            k = np.hstack([op.k_factor for _, op in lowrank])
            merged.append((1.0, LowRankStochastic._unchecked(q, k)))
        if len(sparse) == 1:
            merged.append(sparse[0])
        elif sparse:
            acc = sparse[0][0] * sparse[0][1].matrix
            for w, op in sparse[1:]:
                acc = acc + w * op.matrix
            merged.append((1.0, SparseLocalStochastic._unchecked(acc.tocsr())))
        merged.extend(rest)
        if len(merged) == 1 and merged[0][0] == 1.0:
            return merged[0][1]
        return LinearCombination(merged)


def _normalized_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if norms.size and norms.min() < NORM_FLOOR:
        i = int(np.argmin(norms))
        raise ZeroNormRow(f"{what} row {i} has norm {norms[i]:.3e} (< {NORM_FLOOR:g})")
    return x / norms[:, None]


def global_affinity(head: HeadFeatures, *, factored: bool = False):
    """All-pairs cosine affinity ``<q_i, k_j> / (|q_i| |k_j|)``.

    Returns the dense n x n matrix, or with ``factored=True`` the pair of
    row-L2-normalized query/key matrices whose product reproduces it.

    Raises ZeroNormRow if any query or key row has norm below 1e-12.
    """
    qn = _normalized_rows(head.queries, "queries")
    kn = _normalized_rows(head.keys, "keys")
    if factored:
        return qn, kn
    return qn @ kn.T


# Offsets of the 8-connected neighbourhood, non-periodic at grid borders.
_NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)


def local_affinity(head: HeadFeatures, grid_h: int, grid_w: int, epsilon_self: float):
    """Sparse affinity over the 8-connected grid neighbourhood.

    Entry (i, i) is ``epsilon_self``; entry (i, j) for a neighbour j is the
    query/key cosine, clamped at 0 before storage. Every structural
    neighbour entry is stored even when clamped to zero, so row patterns
    depend only on the grid, not the data.

    Returns a CSR matrix (corner rows: 3 neighbours + self, edges: 5,
    interior: 8).
    """
    if epsilon_self <= 0.0:
        raise ValueError(f"epsilon_self must be > 0, got {epsilon_self}")
    n = head.n
    if grid_h * grid_w != n:
        raise GridMismatch(f"grid {grid_h}x{grid_w} does not match {n} nodes")
    qn = _normalized_rows(head.queries, "queries")
    kn = _normalized_rows(head.keys, "keys")
    idx = np.arange(n).reshape(grid_h, grid_w)
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, float(epsilon_self))]
    for dh, dw in _NEIGHBOR_OFFSETS:
        src = idx[max(0, -dh):grid_h - max(0, dh), max(0, -dw):grid_w - max(0, dw)].ravel()
        dst = idx[max(0, dh):grid_h - max(0, -dh), max(0, dw):grid_w - max(0, -dw)].ravel()
        w = np.einsum("ij,ij->i", qn[src], kn[dst])
        np.maximum(w, 0.0, out=w)
        rows.append(src)
        cols.append(dst)
        vals.append(w)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )


def clamp_nonnegative(affinity):
    """Zero out negative affinities. Idempotent.

    Not defined for factor pairs (clamping has no exact factored form);
    use ``shift_unit_interval`` there.
    """
    if isinstance(affinity, tuple):
        raise TypeError("clamping has no factored form; use shift_unit_interval")
    if sp.issparse(affinity):
        out = affinity.copy()
        out.data = np.maximum(out.data, 0.0)
        return out
    return np.maximum(np.asarray(affinity, dtype=np.float64), 0.0)


def shift_unit_interval(affinity):
    """Affine map ``x -> (x + 1) / 2`` of cosine affinities onto [0, 1].

    For a factor pair the shift appends one all-ones column to each
    factor, adding the rank-one constant term while keeping the product
    exact.
    """
    if isinstance(affinity, tuple):
        q, k = (_as_float64(f) for f in affinity)
        ones = np.ones((q.shape[0], 1))
        return np.hstack([q, ones]) * 0.5, np.hstack([k, ones])
    if sp.issparse(affinity):
        raise TypeError("shifting a sparse affinity would densify it")
    return (np.asarray(affinity, dtype=np.float64) + 1.0) * 0.5


def _check_normalizable(sums: np.ndarray) -> None:
    if sums.size and sums.min() < ROW_SUM_FLOOR:
        i = int(np.argmin(sums))
        raise DegenerateRow(
            f"row {i} sums to {sums[i]:.3e} after clamping (< {ROW_SUM_FLOOR:g})"
        )


def row_normalize(affinity):
    """Scale each affinity row to sum to 1, preserving the representation.

    Accepts a dense matrix, a (q, k) factor pair, or a sparse matrix, and
    returns the matching :class:`TransitionOperator`. For a factor pair
    the inverse row sums fold into the q-side factor.

    Raises DegenerateRow when a row sum is below 1e-12.
    """
    if isinstance(affinity, tuple):
        q, k = (_as_float64(f) for f in affinity)
        if q.shape != k.shape:
            raise DimensionMismatch(f"factor shapes {q.shape} and {k.shape} must match")
        sums = q @ k.sum(axis=0)
        _check_normalizable(sums)
        return LowRankStochastic(q / sums[:, None], k)
    if sp.issparse(affinity):
        m = affinity.tocsr().astype(np.float64)
        sums = np.asarray(m.sum(axis=1)).ravel()
        _check_normalizable(sums)
        scaled = m.copy()
        # Scale data in place to keep the stored pattern (explicit zeros included).
        scaled.data = m.data * np.repeat(1.0 / sums, np.diff(m.indptr))
        return SparseLocalStochastic(scaled)
    m = _as_float64(affinity)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d affinity, got shape {m.shape}")
    sums = m.sum(axis=1)
    _check_normalizable(sums)
    return DenseStochastic(m / sums[:, None])


def fuse(s_global: TransitionOperator, s_local: TransitionOperator, beta: float) -> LinearCombination:
    """Weighted pair ``beta * global + (1 - beta) * local``.

    The pair is kept symbolic: products against it evaluate as
    ``beta * (global product) + (1 - beta) * (local product)``.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if s_global.n != s_local.n:
        raise DimensionMismatch(f"global has {s_global.n} nodes, local has {s_local.n}")
    return LinearCombination([(float(beta), s_global), (1.0 - float(beta), s_local)])
