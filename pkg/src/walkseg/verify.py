"""Oracle-equivalence checks on random instances.

Each check compares an engine path against an independent reference:
the closed-form solvers against an explicit power-series sum, the d x d
inversion against the dense one, the composite low-rank + sparse walk
against the same walk on a densified matrix, and the truncation residual
against an explicitly summed tail. ``walkseg verify`` runs all of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affinity import DenseStochastic
from .pipeline import PipelineOptions, build_label_generator, build_transition
from .synthetic import (
    clustered_bundle,
    random_factored_stochastic,
    random_label_probs,
    random_stochastic,
)
from .walk import (
    WalkConfig,
    exact_walk_dense,
    exact_walk_woodbury,
    residual_l1,
    truncated_walk,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_deviation: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_deviation <= self.tolerance


def power_series_walk(s: np.ndarray, g: np.ndarray, alpha: float, terms: int) -> np.ndarray:
    """Reference: (1-alpha) * sum_t alpha^t S^t G, summed term by term."""
    acc = g.copy()
    stg = g.copy()
    for t in range(1, terms + 1):
        stg = s @ stg
        acc += alpha**t * stg
    return (1.0 - alpha) * acc


def tail_l1(s: np.ndarray, g: np.ndarray, alpha: float, steps: int, upto: int = 5000) -> float:
    """Reference: entrywise L1 mass of (1-alpha) * sum_{t>steps} alpha^t S^t G."""
    stg = g.copy()
    for _ in range(steps + 1):
        stg = s @ stg
    total = 0.0
    for t in range(steps + 1, upto + 1):
        total += alpha**t * stg.sum()
        stg = s @ stg
    return (1.0 - alpha) * total


def check_exact_dense(rng: np.random.Generator, trials: int = 20) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(4, 65))
        k = int(rng.integers(1, 9))
        alpha = float(rng.choice([0.5, 0.9]))
        s = random_stochastic(rng, n)
        g = random_label_probs(rng, n, k)
        got = exact_walk_dense(s, g, alpha).p
        ref = power_series_walk(s, g, alpha, terms=500)
        worst = max(worst, float(np.abs(got - ref).max()))
    return CheckResult("closed_form_vs_power_series", worst, 1e-6)


def check_tail_equality(rng: np.random.Generator, trials: int = 8) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(3, 33))
        k = int(rng.integers(1, 5))
        alpha = float(rng.choice([0.5, 0.9]))
        steps = int(rng.choice([0, 3, 10, 50]))
        s = random_stochastic(rng, n)
        g = random_label_probs(rng, n, k)
        measured = tail_l1(s, g, alpha, steps)
        worst = max(worst, abs(measured - residual_l1(alpha, steps, n)))
    return CheckResult("truncation_tail_mass", worst, 1e-9)


def check_woodbury(rng: np.random.Generator, trials: int = 10) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(8, 257))
        d = int(rng.integers(1, 17))
        k = int(rng.integers(1, 9))
        alpha = float(rng.uniform(0.3, 0.95))
        q, km = random_factored_stochastic(rng, n, d)
        g = random_label_probs(rng, n, k)
        got = exact_walk_woodbury(q, km, g, alpha).p
        ref = exact_walk_dense(q @ km.T, g, alpha).p
        worst = max(worst, float(np.abs(got - ref).max()))
    return CheckResult("low_rank_vs_dense_inverse", worst, 1e-6)


def check_path_equivalence(rng: np.random.Generator, trials: int = 3) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        bundle, labels = clustered_bundle(
            seed=int(rng.integers(0, 2**31)),
            grid_h=12, grid_w=12, feature_dim=8, class_count=4, heads_per_layer=2,
        )
        g = build_label_generator(labels)
        cfg = WalkConfig(alpha=0.9, steps=40, beta=0.5)
        opt = PipelineOptions(walk=cfg)
        built = build_transition(bundle, g, opt)
        fast = truncated_walk(built.operator.collapsed(), g, cfg).p
        dense = truncated_walk(DenseStochastic(built.operator.to_dense()), g, cfg).p
        worst = max(worst, float(np.abs(fast - dense).max()))
    return CheckResult("composite_vs_densified_walk", worst, 1e-5)


def run_all(seed: int = 0, scale: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        check_exact_dense(rng, trials=max(1, int(20 * scale))),
        check_tail_equality(rng, trials=max(1, int(8 * scale))),
        check_woodbury(rng, trials=max(1, int(10 * scale))),
        check_path_equivalence(rng, trials=max(1, int(3 * scale))),
    ]
