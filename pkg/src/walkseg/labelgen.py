"""Node-to-label generation matrix G.

G gives the class distribution a node emits when the walk stops. It can be
built from token/prompt embeddings by scaled cross-attention, or accepted
directly as a precomputed probability field from any upstream source.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NotAProbability

ROW_SUM_TOL = 1e-6
INPUT_ROW_SUM_TOL = 1e-4
NEGATIVE_TOL = 1e-9


@dataclass(frozen=True)
class LabelGenerator:
    """Row-stochastic n x k matrix mapping nodes to class distributions."""

    g: np.ndarray
    class_names: tuple[str, ...]
    scale_dim: int = 0

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.g, dtype=np.float64))
        if m.ndim != 2 or m.shape[1] < 1:
            raise DimensionMismatch(f"label matrix must be 2-d with k >= 1, got {m.shape}")
        names = tuple(str(c) for c in self.class_names)
        if len(names) != m.shape[1]:
            raise DimensionMismatch(
                f"{len(names)} class names for {m.shape[1]} columns"
            )
        if m.min() < -1e-12 or m.max() > 1.0 + NEGATIVE_TOL:
            raise ValueError("entries must lie in [0, 1]")
        dev = np.abs(m.sum(axis=1) - 1.0).max()
        if dev > ROW_SUM_TOL:
            raise ValueError(f"rows deviate from sum 1 by {dev:.3e} (tol {ROW_SUM_TOL:g})")
        object.__setattr__(self, "g", m)
        object.__setattr__(self, "class_names", names)

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def k(self) -> int:
        return self.g.shape[1]


def _default_names(k: int) -> tuple[str, ...]:
    return tuple(f"class{i:02d}" for i in range(k))


def cross_attention_g(
    token_queries: np.ndarray,
    prompt_keys: np.ndarray,
    class_names: Sequence[str] | None = None,
) -> LabelGenerator:
    """Row softmax of ``Q P^T / sqrt(D)`` over the class axis.

    ``token_queries`` is n x d, ``prompt_keys`` is k x d. Softmax uses
    row-max subtraction for stability.
    """
    q = np.asarray(token_queries, dtype=np.float64)
    p = np.asarray(prompt_keys, dtype=np.float64)
    if q.ndim != 2 or p.ndim != 2 or q.shape[1] != p.shape[1]:
        raise DimensionMismatch(
            f"token queries {q.shape} and prompt keys {p.shape} must share the feature dim"
        )
    d = q.shape[1]
    scores = (q @ p.T) / np.sqrt(d)
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    g = e / e.sum(axis=1, keepdims=True)
    names = _default_names(p.shape[0]) if class_names is None else tuple(class_names)
    return LabelGenerator(g, names, scale_dim=d)


def g_from_probabilities(probs: np.ndarray, class_names: Sequence[str]) -> LabelGenerator:
    """Wrap precomputed per-node class probabilities, renormalizing rows exactly.

    Raises NotAProbability when an entry is below -1e-9 or a row sum is
    off by more than 1e-4.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise DimensionMismatch(f"probabilities must be 2-d, got shape {p.shape}")
    if p.size and p.min() < -NEGATIVE_TOL:
        i, j = np.unravel_index(int(np.argmin(p)), p.shape)
        raise NotAProbability(f"entry ({i}, {j}) is negative: {p[i, j]:.3e}")
    sums = p.sum(axis=1)
    dev = np.abs(sums - 1.0).max() if sums.size else 0.0
    if dev > INPUT_ROW_SUM_TOL:
        i = int(np.argmax(np.abs(sums - 1.0)))
        raise NotAProbability(f"row {i} sums to {sums[i]!r} (tol {INPUT_ROW_SUM_TOL:g})")
    p = np.clip(p, 0.0, None)
    p = p / p.sum(axis=1, keepdims=True)
    return LabelGenerator(p, tuple(class_names), scale_dim=0)
