"""Training-free segmentation refinement by stochastic random walks.

Coarse node-to-label probabilities diffuse through a graph whose
transition matrix fuses entropy-weighted global attention affinities with
sparse 8-connected local affinities. The expected label field is computed
exactly (dense solve, or a d x d solve for factored matrices) or by a
truncated iterative walk with residual mass exactly n * alpha^(L+1).
"""

from .affinity import (
    DenseStochastic,
    FeatureBundle,
    FusionParams,
    HeadFeatures,
    LinearCombination,
    LowRankStochastic,
    SparseLocalStochastic,
    TransitionOperator,
    clamp_nonnegative,
    fuse,
    global_affinity,
    local_affinity,
    row_normalize,
    shift_unit_interval,
)
from .entropy import HeadWeighting, fuse_heads, head_entropy, head_weights, one_step_probs
from .labelgen import LabelGenerator, cross_attention_g, g_from_probabilities
from .nrvf import LABEL_CROSS_ATTN, LABEL_PROBS, LabelInputs, load_bundle, save_bundle
from .outputs import RunManifest, save_outputs
from .pipeline import PipelineOptions, build_label_generator, build_transition, refine_bundle
from .walk import (
    LabelProbabilities,
    WalkConfig,
    WalkMode,
    argmax_mask,
    exact_walk_dense,
    exact_walk_woodbury,
    residual_l1,
    steps_for_tolerance,
    truncated_walk,
)

__version__ = "0.1.0"

__all__ = [
    "DenseStochastic",
    "FeatureBundle",
    "FusionParams",
    "HeadFeatures",
    "HeadWeighting",
    "LABEL_CROSS_ATTN",
    "LABEL_PROBS",
    "LabelGenerator",
    "LabelInputs",
    "LabelProbabilities",
    "LinearCombination",
    "LowRankStochastic",
    "PipelineOptions",
    "RunManifest",
    "SparseLocalStochastic",
    "TransitionOperator",
    "WalkConfig",
    "WalkMode",
    "argmax_mask",
    "build_label_generator",
    "build_transition",
    "clamp_nonnegative",
    "cross_attention_g",
    "exact_walk_dense",
    "exact_walk_woodbury",
    "fuse",
    "fuse_heads",
    "g_from_probabilities",
    "global_affinity",
    "head_entropy",
    "head_weights",
    "load_bundle",
    "local_affinity",
    "one_step_probs",
    "refine_bundle",
    "residual_l1",
    "row_normalize",
    "save_bundle",
    "save_outputs",
    "shift_unit_interval",
    "steps_for_tolerance",
    "truncated_walk",
]
