"""Synthetic scaling benchmark for the per-iteration walk cost.

Times one iteration of the truncated walk on the composite low-rank +
sparse evaluation and on a dense transition matrix, across node counts.
Node counts must be perfect squares (they come from square grids). The
growth factor per doubling of n separates the two regimes: the composite
path grows roughly linearly (factor about 2 per doubling), the dense path
quadratically (factor about 4).
"""

from __future__ import annotations

import math
import time

import numpy as np

from .affinity import DenseStochastic
from .pipeline import PipelineOptions, build_label_generator, build_transition
from .synthetic import clustered_bundle, random_label_probs, random_stochastic
from .walk import WalkConfig, truncated_walk


def _side(n: int) -> int:
    side = int(math.isqrt(n))
    if side * side != n:
        raise ValueError(f"benchmark sizes must be perfect squares, got {n}")
    return side


def _time_walk(op, g, cfg: WalkConfig, iters: int, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        truncated_walk(op, g, cfg)
        best = min(best, (time.perf_counter() - t0) / iters)
    return best


def lowrank_instance(n: int, d: int, k: int, heads: int, seed: int):
    """Collapsed composite over ``heads`` attention heads, plus its labels."""
    if heads % 2:
        raise ValueError("head count must be even (two layers)")
    side = _side(n)
    bundle, labels = clustered_bundle(
        seed=seed, grid_h=side, grid_w=side, feature_dim=d,
        class_count=k, heads_per_layer=heads // 2,
    )
    g = build_label_generator(labels)
    opt = PipelineOptions(walk=WalkConfig(alpha=0.9, beta=0.5))
    built = build_transition(bundle, g, opt)
    return built.operator.collapsed(), g


def run_bench(
    lowrank_sizes=(1024, 4096, 16384),
    dense_sizes=(1024, 4096),
    d: int = 16,
    k: int = 8,
    heads: int = 4,
    iters: int = 30,
    repeats: int = 3,
    seed: int = 0,
) -> list[dict]:
    """Measure seconds per walk iteration for both paths; returns CSV-ready rows."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in lowrank_sizes:
        op, g = lowrank_instance(n, d, k, heads, seed)
        cfg = WalkConfig(alpha=0.9, steps=iters)
        rows.append({
            "path": "lowrank", "n": n, "d": d, "k": k, "heads": heads,
            "seconds_per_iter": _time_walk(op, g, cfg, iters, repeats),
        })
    for n in dense_sizes:
        s = DenseStochastic(random_stochastic(rng, n))
        g = random_label_probs(rng, n, k)
        cfg = WalkConfig(alpha=0.9, steps=iters)
        rows.append({
            "path": "dense", "n": n, "d": 0, "k": k, "heads": 1,
            "seconds_per_iter": _time_walk(s, g, cfg, iters, repeats),
        })
    return rows


def growth_per_doubling(t_small: float, t_big: float, n_small: int, n_big: int) -> float:
    """Wall-time growth factor normalized to one doubling of n."""
    doublings = math.log2(n_big / n_small)
    return (t_big / t_small) ** (1.0 / doublings)
