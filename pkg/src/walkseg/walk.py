"""Random-walk solvers for expected label probabilities.

A walker at node i either stops and emits a label (probability 1 - alpha)
or moves to a neighbour drawn from the transition matrix S (probability
alpha). The expected label field of the infinite walk is

    P_inf = (1 - alpha) * (I - alpha * S)^-1 @ G,

computed exactly by a dense solve, or by a d x d solve when S is a rank-d
factor product (matrix inversion lemma). The truncated variant iterates

    P~_t = (1 - alpha) * G + alpha * S @ P~_{t-1},    P~_0 = (1 - alpha) * G,

for L steps and rescales by 1 / (1 - alpha^(L+1)); the discarded tail has
entrywise L1 mass exactly n * alpha^(L+1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .affinity import DenseStochastic, TransitionOperator
from .errors import DimensionMismatch, GridMismatch, NonFiniteIterate, SingularSystem

# Indirection so tests can observe which system sizes get solved.
_solve = np.linalg.solve

FINAL_ROW_SUM_TOL = 1e-5
# Entries this far below zero are treated as solver round-off and clipped.
NEGATIVE_FUZZ = 1e-9


class WalkMode(str, Enum):
    EXACT_DENSE = "dense"
    EXACT_WOODBURY = "woodbury"
    TRUNCATED_ITERATIVE = "iterative"


@dataclass(frozen=True)
class WalkConfig:
    """Scalar knobs of the full pipeline.

    ``steps`` may be 0 (a zero-step walk returns G itself); the iterative
    mode uses it as the truncation length L.
    """

    alpha: float = 0.9
    steps: int = 40
    beta: float = 0.5
    c: float = 1.0
    epsilon_self: float = 1e-2
    residual_tolerance: float = 1e-3
    mode: WalkMode = WalkMode.TRUNCATED_ITERATIVE

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.c <= 0.0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if self.epsilon_self <= 0.0:
            raise ValueError(f"epsilon_self must be > 0, got {self.epsilon_self}")
        if self.residual_tolerance <= 0.0:
            raise ValueError(f"residual_tolerance must be > 0, got {self.residual_tolerance}")
        object.__setattr__(self, "mode", WalkMode(self.mode))


@dataclass(frozen=True)
class LabelProbabilities:
    """Expected label probabilities plus how they were obtained.

    ``residual_bound_value`` is n * alpha^(L+1) for a truncated walk and 0
    for the exact solvers.
    """

    p: np.ndarray
    steps_used: int
    residual_bound_value: float

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.p, dtype=np.float64))
        if m.ndim != 2:
            raise DimensionMismatch(f"probability field must be 2-d, got {m.shape}")
        if m.size:
            if m.min() < -NEGATIVE_FUZZ or m.max() > 1.0 + 1e-9:
                raise ValueError(
                    f"entries outside [0, 1]: min {m.min():.3e}, max {m.max():.6f}"
                )
            dev = np.abs(m.sum(axis=1) - 1.0).max()
            if dev > FINAL_ROW_SUM_TOL:
                raise ValueError(f"rows deviate from sum 1 by {dev:.3e}")
            m = np.clip(m, 0.0, None)
        object.__setattr__(self, "p", m)

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def k(self) -> int:
        return self.p.shape[1]


def _label_matrix(g) -> np.ndarray:
    m = getattr(g, "g", g)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"label matrix must be 2-d, got shape {m.shape}")
    return m


def exact_walk_dense(s, g, alpha: float) -> LabelProbabilities:
    """Closed-form infinite walk via one dense n x n solve.

    ``s`` is a dense row-stochastic matrix (array or DenseStochastic).
    For alpha in (0, 1) the system I - alpha * S is provably invertible
    (the spectral radius of alpha * S is alpha).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not isinstance(s, DenseStochastic):
        s = DenseStochastic(s)
    gm = _label_matrix(g)
    if gm.shape[0] != s.n:
        raise DimensionMismatch(f"transition has {s.n} nodes, labels have {gm.shape[0]} rows")
    a = -alpha * s.matrix
    np.fill_diagonal(a, a.diagonal() + 1.0)
    try:
        x = _solve(a, (1.0 - alpha) * gm)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"dense system: {exc}") from exc
    if not np.isfinite(x).all():
        raise SingularSystem("dense solve produced non-finite values")
    return LabelProbabilities(x, steps_used=0, residual_bound_value=0.0)


def exact_walk_woodbury(q_tilde, kmat, g, alpha: float) -> LabelProbabilities:
    """Closed-form infinite walk for ``S = q_tilde @ kmat.T``.

    Uses the matrix inversion lemma,

        (I - a*Q*K^T)^-1 = I + a*Q*(I_d - a*K^T*Q)^-1*K^T,

    so only a d x d system is solved; everything else is skinny products.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    q = np.asarray(q_tilde, dtype=np.float64)
    k = np.asarray(kmat, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape != k.shape:
        raise DimensionMismatch(f"factor shapes {q.shape} and {k.shape} must match")
    if not (np.isfinite(q).all() and np.isfinite(k).all()):
        raise ValueError("factors contain non-finite values")
    gm = _label_matrix(g)
    if gm.shape[0] != q.shape[0]:
        raise DimensionMismatch(
            f"factors have {q.shape[0]} rows, labels have {gm.shape[0]}"
        )
    d = q.shape[1]
    core = -alpha * (k.T @ q)
    np.fill_diagonal(core, core.diagonal() + 1.0)
    try:
        y = _solve(core, k.T @ gm)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"{d}x{d} core system: {exc}") from exc
    p = (1.0 - alpha) * (gm + alpha * (q @ y))
    if not np.isfinite(p).all():
        raise SingularSystem("core solve produced non-finite values")
    return LabelProbabilities(p, steps_used=0, residual_bound_value=0.0)


def truncated_walk(
    transition: TransitionOperator,
    g,
    cfg: WalkConfig,
    on_iterate: Callable[[int, np.ndarray], None] | None = None,
) -> LabelProbabilities:
    """L-step walk by the iterative update, rescaled once at the end.

    ``transition`` may be any operator; composite operators evaluate each
    product as a weighted sum of per-head low-rank and sparse products, so
    no n x n matrix is ever formed. ``on_iterate(t, p_tilde)`` is called
    with each unnormalized partial sum (t = 0 .. L); the arrays are views,
    callers must copy to keep them.
    """
    gm = _label_matrix(g)
    if transition.n != gm.shape[0]:
        raise DimensionMismatch(
            f"transition has {transition.n} nodes, labels have {gm.shape[0]} rows"
        )
    alpha = float(cfg.alpha)
    steps = int(cfg.steps)
    g0 = (1.0 - alpha) * gm
    p = g0.copy()
    if on_iterate is not None:
        on_iterate(0, p)
    for t in range(1, steps + 1):
        nxt = transition.matmul(p)
        nxt *= alpha
        nxt += g0
        p = nxt
        if not np.isfinite(p).all():
            raise NonFiniteIterate(f"iterate {t} contains NaN or Inf")
        if on_iterate is not None:
            on_iterate(t, p)
    if steps == 0:
        out = gm.copy()
    else:
        out = p / (1.0 - alpha ** (steps + 1))
    return LabelProbabilities(
        out,
        steps_used=steps,
        residual_bound_value=residual_l1(alpha, steps, transition.n),
    )


def residual_l1(alpha: float, steps: int, n: int) -> float:
    """Entrywise L1 mass of the tail cut off after ``steps``: n * alpha^(steps+1)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return float(n) * alpha ** (steps + 1)


def steps_for_tolerance(alpha: float, n: int, tol: float) -> int:
    """Smallest L >= 0 with n * alpha^(L+1) <= tol."""
    if tol <= 0.0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n * alpha <= tol:
        return 0
    r = math.log(tol / n) / math.log(alpha)
    steps = max(0, math.ceil(r - 1e-12) - 1)
    while n * alpha ** (steps + 1) > tol:
        steps += 1
    return steps


def argmax_mask(p, grid_h: int, grid_w: int) -> np.ndarray:
    """Decode the probability field to a grid of class indices.

    Ties break toward the lower class index (numpy argmax keeps the first
    maximum), so masks are reproducible.
    """
    m = p.p if isinstance(p, LabelProbabilities) else np.asarray(p)
    if m.ndim != 2:
        raise DimensionMismatch(f"probability field must be 2-d, got {m.shape}")
    if grid_h * grid_w != m.shape[0]:
        raise GridMismatch(f"grid {grid_h}x{grid_w} does not match {m.shape[0]} nodes")
    return m.argmax(axis=1).reshape(grid_h, grid_w)
