"""Entropy-based scoring of attention heads and head fusion.

Each head is scored by the mean entropy of its one-step label prediction:
a head whose single transition step already yields confident labels is
worth more. Scores turn into softmax weights with a sharpness temperature,
and heads are combined as a weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .affinity import LinearCombination, TransitionOperator
from .errors import DimensionMismatch, MixedRepresentation

# Weights must sum to 1 within this tolerance.
WEIGHT_SUM_TOL = 1e-9


def _label_matrix(g) -> np.ndarray:
    m = getattr(g, "g", g)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"label matrix must be 2-d, got shape {m.shape}")
    return m


def one_step_probs(s_head: TransitionOperator, g) -> np.ndarray:
    """Label probabilities after a single transition step, ``S @ G``."""
    gm = _label_matrix(g)
    if s_head.n != gm.shape[0]:
        raise DimensionMismatch(
            f"transition has {s_head.n} nodes, label matrix has {gm.shape[0]} rows"
        )
    return s_head.matmul(gm)


def head_entropy(p: np.ndarray) -> float:
    """Mean per-row Shannon entropy in nats, with 0*log(0) taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return float(-terms.sum() / p.shape[0])


def head_weights(entropies: Sequence[float], c: float) -> np.ndarray:
    """Softmax of ``-c * entropy`` over heads, computed with max subtraction.

    Lower entropy means a larger weight; ``c`` controls how peaked the
    weight distribution is.
    """
    if c <= 0.0:
        raise ValueError(f"temperature c must be > 0, got {c}")
    h = np.asarray(entropies, dtype=np.float64)
    if h.ndim != 1 or h.size == 0:
        raise ValueError("entropies must be a non-empty vector")
    if not np.isfinite(h).all():
        raise ValueError("entropies must be finite")
    z = -c * h
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


@dataclass(frozen=True)
class HeadWeighting:
    """Per-head entropies and the softmax weights derived from them."""

    entropies: tuple[float, ...]
    weights: tuple[float, ...]
    temperature: float

    def __post_init__(self):
        if len(self.entropies) != len(self.weights):
            raise DimensionMismatch("entropies and weights must have equal length")
        w = np.asarray(self.weights)
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within {WEIGHT_SUM_TOL:g}")
        if w.min() <= 0.0:
            raise ValueError("weights must be strictly positive")
        order = np.argsort(self.entropies, kind="stable")
        sorted_w = w[order]
        # Lower entropy must give a weakly larger weight (ties allowed in floats).
        if np.any(np.diff(sorted_w) > WEIGHT_SUM_TOL):
            raise ValueError("weights must be non-increasing in entropy")

    @classmethod
    def from_entropies(cls, entropies: Sequence[float], c: float = 1.0) -> "HeadWeighting":
        w = head_weights(entropies, c)
        return cls(tuple(float(e) for e in entropies), tuple(float(x) for x in w), float(c))


def fuse_heads(heads: Sequence, weights: Sequence[float]):
    """Weighted combination of per-head affinities.

    Dense heads (plain arrays) combine into one entrywise weighted-sum
    array. Operator heads (low-rank, sparse, or nested combinations)
    combine symbolically: products against the result evaluate as the
    weighted sum of per-head products.
    """
    heads = list(heads)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(heads) != w.size:
        raise DimensionMismatch(f"{len(heads)} heads but {w.size} weights")
    if not heads:
        raise DimensionMismatch("no heads to fuse")
    if w.min() < 0.0 or abs(w.sum() - 1.0) > 1e-6:
        raise ValueError("weights must be non-negative and sum to 1")
    if all(isinstance(h, np.ndarray) for h in heads):
        shape = heads[0].shape
        for h in heads:
            if h.shape != shape:
                raise DimensionMismatch(f"head shapes differ: {h.shape} vs {shape}")
        out = np.zeros(shape)
        for wh, h in zip(w, heads):
            out += wh * np.asarray(h, dtype=np.float64)
        return out
    if any(isinstance(h, np.ndarray) for h in heads):
        raise MixedRepresentation("cannot fuse plain arrays with operator heads")
    kinds = {type(h) for h in heads}
    if len(kinds) > 1:
        raise MixedRepresentation(
            f"heads mix representations: {sorted(k.__name__ for k in kinds)}"
        )
    if not all(isinstance(h, TransitionOperator) for h in heads):
        raise MixedRepresentation(f"unsupported head type {type(heads[0]).__name__}")
    return LinearCombination(list(zip(w, heads)))
