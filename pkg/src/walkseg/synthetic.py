"""Synthetic instances for tests, verification, and benchmarks.

Features are built from a Voronoi partition of the grid: cells of the same
region share a feature prototype, so affinities cluster spatially and the
walk has genuine structure to exploit. Label inputs are deliberately
noisier than the features, leaving the walk something to clean up.
"""

from __future__ import annotations

import numpy as np

from .affinity import FeatureBundle, HeadFeatures
from .nrvf import LABEL_CROSS_ATTN, LABEL_PROBS, LabelInputs, save_bundle


def _f32(a: np.ndarray) -> np.ndarray:
    # Quantize to what the file format stores, so in-memory and round-tripped
    # pipelines see identical numbers.
    return a.astype(np.float32).astype(np.float64)


def random_stochastic(rng: np.random.Generator, n: int) -> np.ndarray:
    """Dense row-stochastic matrix with strictly positive entries."""
    m = rng.random((n, n)) + 1e-3
    return m / m.sum(axis=1, keepdims=True)


def random_factored_stochastic(
    rng: np.random.Generator, n: int, d: int
) -> tuple[np.ndarray, np.ndarray]:
    """Factor pair (q, k) with ``q @ k.T`` exactly row-stochastic and positive."""
    q = np.abs(rng.standard_normal((n, d))) + 0.1
    k = np.abs(rng.standard_normal((n, d))) + 0.1
    sums = q @ k.sum(axis=0)
    return q / sums[:, None], k


def random_label_probs(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    g = rng.random((n, k)) + 1e-3
    return g / g.sum(axis=1, keepdims=True)


def voronoi_regions(rng: np.random.Generator, grid_h: int, grid_w: int, regions: int) -> np.ndarray:
    """Assign each grid cell to its nearest of ``regions`` random seed points."""
    seeds_y = rng.uniform(0, grid_h, size=regions)
    seeds_x = rng.uniform(0, grid_w, size=regions)
    yy, xx = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    d2 = (yy[..., None] - seeds_y) ** 2 + (xx[..., None] - seeds_x) ** 2
    return d2.argmin(axis=2).ravel()


def clustered_bundle(
    seed: int = 0,
    grid_h: int = 16,
    grid_w: int = 16,
    feature_dim: int = 16,
    class_count: int = 3,
    heads_per_layer: int = 2,
    regions: int = 6,
    feature_noise: float = 0.15,
    label_noise: float = 1.0,
    label_mode: int = LABEL_CROSS_ATTN,
) -> tuple[FeatureBundle, LabelInputs]:
    """Bundle whose heads share a region structure but differ in noise.

    The last head of each layer gets 6x the feature noise, giving the
    entropy weighting a genuinely worse head to down-weight. Region ids
    map onto ``class_count`` classes round-robin, and the label inputs
    carry enough noise that a zero-step mask is visibly wrong in places.
    """
    rng = np.random.default_rng(seed)
    n = grid_h * grid_w
    assign = voronoi_regions(rng, grid_h, grid_w, regions)
    prototypes = rng.standard_normal((regions, feature_dim)) * 1.5
    heads = []
    for layer in range(2):
        base = prototypes[assign]
        if layer == 0:
            # Penultimate layer: coarser view of the same structure.
            blur = rng.standard_normal((regions, feature_dim)) * 0.5
            base = base + blur[assign]
        for hi in range(heads_per_layer):
            sigma = feature_noise * (6.0 if hi == heads_per_layer - 1 else 1.0)
            rot = np.linalg.qr(rng.standard_normal((feature_dim, feature_dim)))[0]
            q = _f32((base + sigma * rng.standard_normal((n, feature_dim))) @ rot)
            kmat = _f32((base + sigma * rng.standard_normal((n, feature_dim))) @ rot)
            heads.append(HeadFeatures(q, kmat, layer_index=layer, head_index=hi))
    bundle = FeatureBundle(
        tuple(heads), grid_h, grid_w, feature_dim,
        source_tag=f"synthetic:voronoi(seed={seed},regions={regions})",
    )
    class_names = tuple(f"class{i:02d}" for i in range(class_count))
    class_of_region = np.arange(regions) % class_count
    class_protos = rng.standard_normal((class_count, feature_dim)) * 2.0
    token_queries = (
        class_protos[class_of_region[assign]]
        + label_noise * rng.standard_normal((n, feature_dim))
    )
    if label_mode == LABEL_CROSS_ATTN:
        labels = LabelInputs(
            LABEL_CROSS_ATTN,
            class_names,
            token_queries=_f32(token_queries),
            prompt_keys=_f32(class_protos),
        )
    elif label_mode == LABEL_PROBS:
        scores = token_queries @ class_protos.T / np.sqrt(feature_dim)
        scores -= scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        labels = LabelInputs(
            LABEL_PROBS, class_names, probs=_f32(e / e.sum(axis=1, keepdims=True))
        )
    else:
        raise ValueError(f"unknown label mode {label_mode}")
    return bundle, labels


def write_synthetic_bundle(path, **kwargs) -> tuple[FeatureBundle, LabelInputs]:
    """Generate a clustered bundle and save it as an NRVF file."""
    bundle, labels = clustered_bundle(**kwargs)
    save_bundle(path, bundle, labels)
    return bundle, labels
