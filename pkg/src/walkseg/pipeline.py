"""End-to-end assembly: bundle -> transition + labels -> walk -> outputs.

Fusion happens in one of two orders. The default ("normalized") row-
normalizes each head, mixes its global and local parts with beta, and
takes the entropy-weighted sum of the per-head stochastic matrices. The
alternative ("raw") first takes the entropy-weighted sum of raw per-head
affinities, normalizes once, and then applies the beta mix. Both orders
are exposed so the ablation mode can compare them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import affinity as aff
from .entropy import HeadWeighting, fuse_heads, head_entropy, one_step_probs
from .errors import DimensionMismatch
from .labelgen import LabelGenerator, cross_attention_g, g_from_probabilities
from .nrvf import LABEL_CROSS_ATTN, LabelInputs, load_bundle
from .outputs import RunManifest, save_mask_pgm, save_outputs, upsample_nearest
from .walk import (
    LabelProbabilities,
    WalkConfig,
    WalkMode,
    argmax_mask,
    exact_walk_dense,
    exact_walk_woodbury,
    truncated_walk,
)

FUSIONS = ("single", "mean", "weighted")
AFFINITY_KINDS = ("global", "local", "fused")
FUSION_ORDERS = ("normalized", "raw")
NONNEG_POLICIES = ("shift", "clamp")


@dataclass(frozen=True)
class PipelineOptions:
    """Walk configuration plus the discrete pipeline switches."""

    walk: WalkConfig = field(default_factory=WalkConfig)
    fusion: str = "weighted"
    affinity_kind: str = "fused"
    fusion_order: str = "normalized"
    nonneg: str = "shift"
    seed: int = 0

    def __post_init__(self):
        for value, allowed, what in (
            (self.fusion, FUSIONS, "fusion"),
            (self.affinity_kind, AFFINITY_KINDS, "affinity"),
            (self.fusion_order, FUSION_ORDERS, "fusion order"),
            (self.nonneg, NONNEG_POLICIES, "non-negativity policy"),
        ):
            if value not in allowed:
                raise ValueError(f"{what} must be one of {allowed}, got {value!r}")


def build_label_generator(labels: LabelInputs) -> LabelGenerator:
    if labels.mode == LABEL_CROSS_ATTN:
        return cross_attention_g(labels.token_queries, labels.prompt_keys, labels.class_names)
    return g_from_probabilities(labels.probs, labels.class_names)


@dataclass(frozen=True)
class BuiltTransition:
    """Composite transition operator plus the per-head diagnostics."""

    operator: aff.TransitionOperator
    entropies: tuple[float, ...]
    weights: tuple[float, ...]


def _head_weights_for(entropies: list[float], opt: PipelineOptions) -> np.ndarray:
    if opt.fusion == "weighted":
        return np.asarray(HeadWeighting.from_entropies(entropies, opt.walk.c).weights)
    if opt.fusion == "mean":
        return np.full(len(entropies), 1.0 / len(entropies))
    w = np.zeros(len(entropies))
    w[int(np.argmin(entropies))] = 1.0  # "single": the most confident head
    return w


def build_transition(
    bundle: aff.FeatureBundle, g: LabelGenerator, opt: PipelineOptions
) -> BuiltTransition:
    """Construct the fused multi-head transition operator for the walk."""
    if bundle.n != g.n:
        raise DimensionMismatch(f"bundle has {bundle.n} nodes, labels have {g.n}")
    need_global = opt.affinity_kind in ("global", "fused")
    need_local = opt.affinity_kind in ("local", "fused")
    params = aff.FusionParams(
        beta={"global": 1.0, "local": 0.0}.get(opt.affinity_kind, opt.walk.beta),
        epsilon_self=opt.walk.epsilon_self,
    )
    beta = params.beta

    raw_globals, globals_s = [], []
    raw_locals, locals_s = [], []
    for head in bundle.heads:
        if need_global:
            a = aff.global_affinity(head, factored=(opt.nonneg == "shift"))
            a = aff.shift_unit_interval(a) if opt.nonneg == "shift" else aff.clamp_nonnegative(a)
            raw_globals.append(a)
            globals_s.append(aff.row_normalize(a))
        if need_local:
            a = aff.local_affinity(head, bundle.grid_h, bundle.grid_w, params.epsilon_self)
            raw_locals.append(a)
            locals_s.append(aff.row_normalize(a))

    # Heads are scored by their one-step prediction; the global map defines
    # that step except in the local-only ablation.
    scoring = globals_s if need_global else locals_s
    entropies = [head_entropy(one_step_probs(s, g)) for s in scoring]
    weights = _head_weights_for(entropies, opt)

    if opt.fusion_order == "raw":
        parts = []
        if need_global:
            if opt.nonneg == "shift":
                q = np.hstack([w * qf for w, (qf, _) in zip(weights, raw_globals)])
                k = np.hstack([kf for _, kf in raw_globals])
                fused_g = (q, k)
            else:
                fused_g = fuse_heads(raw_globals, weights)
            parts.append((beta, aff.row_normalize(fused_g)))
        if need_local:
            acc = weights[0] * raw_locals[0]
            for w, m in zip(weights[1:], raw_locals[1:]):
                acc = acc + w * m
            parts.append((1.0 - beta, aff.row_normalize(acc)))
        operator = parts[0][1] if len(parts) == 1 else aff.LinearCombination(parts)
    else:
        if opt.affinity_kind == "fused":
            per_head = [
                aff.fuse(sg, sl, beta) for sg, sl in zip(globals_s, locals_s)
            ]
        else:
            per_head = globals_s if need_global else locals_s
        operator = fuse_heads(per_head, weights)

    return BuiltTransition(operator, tuple(entropies), tuple(float(w) for w in weights))


def _single_lowrank_factors(op: aff.TransitionOperator):
    """Unwrap a composite down to one full-weight low-rank term, if that is all it is."""
    if isinstance(op, aff.LowRankStochastic):
        return op.q_factor, op.k_factor
    if isinstance(op, aff.LinearCombination):
        terms = [(w, t) for w, t in op.flattened() if w != 0.0]
        if len(terms) == 1 and abs(terms[0][0] - 1.0) < 1e-12:
            return _single_lowrank_factors(terms[0][1])
    return None


def run_walk(
    transition: aff.TransitionOperator,
    g: LabelGenerator,
    cfg: WalkConfig,
    on_iterate=None,
) -> LabelProbabilities:
    """Dispatch to the solver selected by ``cfg.mode``."""
    if cfg.mode == WalkMode.EXACT_DENSE:
        return exact_walk_dense(transition.to_dense(), g, cfg.alpha)
    if cfg.mode == WalkMode.EXACT_WOODBURY:
        factors = _single_lowrank_factors(transition)
        if factors is None:
            raise ValueError(
                "woodbury mode needs a single-head, global-only, factored transition "
                "(use --affinity global with --fusion single or a one-head bundle)"
            )
        return exact_walk_woodbury(factors[0], factors[1], g, cfg.alpha)
    op = transition.collapsed() if isinstance(transition, aff.LinearCombination) else transition
    return truncated_walk(op, g, cfg, on_iterate=on_iterate)


@dataclass(frozen=True)
class RefineResult:
    probs: LabelProbabilities
    mask: np.ndarray
    manifest: RunManifest
    g: LabelGenerator


def _config_echo(opt: PipelineOptions) -> dict:
    w = opt.walk
    return {
        "alpha": w.alpha,
        "steps": w.steps,
        "beta": w.beta,
        "c": w.c,
        "epsilon_self": w.epsilon_self,
        "residual_tolerance": w.residual_tolerance,
        "mode": w.mode.value,
        "fusion": opt.fusion,
        "affinity": opt.affinity_kind,
        "fusion_order": opt.fusion_order,
        "nonneg": opt.nonneg,
        "seed": opt.seed,
    }


def refine_bundle(
    input_path,
    opt: PipelineOptions,
    out_dir=None,
    upsample: tuple[int, int] | None = None,
) -> RefineResult:
    """Run the full pipeline on one NRVF file, optionally writing outputs."""
    times: dict[str, float] = {}
    t0 = time.perf_counter()
    bundle, labels = load_bundle(input_path)
    times["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    g = build_label_generator(labels)
    built = build_transition(bundle, g, opt)
    times["build"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    probs = run_walk(built.operator, g, opt.walk)
    times["walk"] = time.perf_counter() - t0

    mask = argmax_mask(probs, bundle.grid_h, bundle.grid_w)
    manifest = RunManifest(
        config=_config_echo(opt),
        input_path=str(input_path),
        class_names=g.class_names,
        head_entropies=built.entropies,
        head_weights=built.weights,
        steps_used=probs.steps_used,
        residual_bound=probs.residual_bound_value,
        wall_times=times,
    )
    if out_dir is not None:
        t0 = time.perf_counter()
        paths = save_outputs(probs, mask, manifest, out_dir)
        if upsample is not None:
            up = upsample_nearest(mask, upsample[0], upsample[1])
            save_mask_pgm(Path(out_dir) / "mask_upsampled.pgm", up)
        times["save"] = time.perf_counter() - t0
        manifest = replace(manifest, wall_times=dict(times))
        paths["manifest"].write_text(manifest.to_json() + "\n", encoding="utf-8")
    return RefineResult(probs, mask, manifest, g)


def convergence_report(
    transition: aff.TransitionOperator,
    g: LabelGenerator,
    cfg: WalkConfig,
    checkpoints=(0, 1, 5, 10, 20, 40, 80),
) -> list[dict]:
    """Walk once to max(checkpoints), snapshotting the normalized field.

    Each row compares a checkpoint to the previous one: the fraction of
    nodes whose argmax changed and the max-abs probability delta.
    """
    checkpoints = sorted(set(int(c) for c in checkpoints))
    if checkpoints[0] < 0:
        raise ValueError("checkpoints must be >= 0")
    alpha = cfg.alpha
    snaps: dict[int, np.ndarray] = {}

    def grab(t, p_tilde):
        if t in wanted:
            if t == 0:
                snaps[t] = np.asarray(g.g, dtype=np.float64).copy()
            else:
                snaps[t] = p_tilde / (1.0 - alpha ** (t + 1))

    wanted = set(checkpoints)
    op = transition.collapsed() if isinstance(transition, aff.LinearCombination) else transition
    run_cfg = replace(cfg, steps=checkpoints[-1], mode=WalkMode.TRUNCATED_ITERATIVE)
    truncated_walk(op, g, run_cfg, on_iterate=grab)
    rows = []
    prev = None
    for c in checkpoints:
        p = snaps[c]
        row = {
            "steps": c,
            "residual_bound": transition.n * alpha ** (c + 1),
            "argmax_change_fraction": float("nan"),
            "max_abs_delta": float("nan"),
        }
        if prev is not None:
            row["argmax_change_fraction"] = float(
                np.mean(p.argmax(axis=1) != prev.argmax(axis=1))
            )
            row["max_abs_delta"] = float(np.abs(p - prev).max())
        rows.append(row)
        prev = p
    return rows


def ablation_grid(
    input_path,
    opt: PipelineOptions,
    fusions=FUSIONS,
    affinities=AFFINITY_KINDS,
    orders=("normalized",),
) -> list[dict]:
    """Run every requested combination and compare masks to the full config.

    The baseline is weighted fusion over fused affinities in the same
    order list's first entry; agreement is the fraction of nodes whose
    argmax matches the baseline mask.
    """
    bundle, labels = load_bundle(input_path)
    g = build_label_generator(labels)

    def run_one(fusion, kind, order):
        o = replace(opt, fusion=fusion, affinity_kind=kind, fusion_order=order)
        built = build_transition(bundle, g, o)
        t0 = time.perf_counter()
        probs = run_walk(built.operator, g, o.walk)
        dt = time.perf_counter() - t0
        mask = argmax_mask(probs, bundle.grid_h, bundle.grid_w)
        return built, probs, mask, dt

    _, _, baseline_mask, _ = run_one("weighted", "fused", orders[0])
    rows = []
    for order in orders:
        for fusion in fusions:
            for kind in affinities:
                built, probs, mask, dt = run_one(fusion, kind, order)
                p = probs.p
                ent = -np.where(p > 0, p * np.log(p), 0.0).sum() / p.shape[0]
                rows.append({
                    "fusion": fusion,
                    "affinity": kind,
                    "fusion_order": order,
                    "agreement_with_baseline": float(np.mean(mask == baseline_mask)),
                    "mean_max_prob": float(p.max(axis=1).mean()),
                    "mean_entropy": float(ent),
                    "min_entropy_head": int(np.argmin(built.entropies)),
                    "top_weight_head": int(np.argmax(built.weights)),
                    "seconds": dt,
                })
    return rows
