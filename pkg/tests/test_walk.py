import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import walkseg.walk as walk_mod
from walkseg.affinity import DenseStochastic, TransitionOperator
from walkseg.errors import (
    DimensionMismatch,
    GridMismatch,
    NonFiniteIterate,
    SingularSystem,
)
from walkseg.pipeline import PipelineOptions, build_label_generator, build_transition
from walkseg.synthetic import (
    clustered_bundle,
    random_factored_stochastic,
    random_label_probs,
    random_stochastic,
)
from walkseg.walk import (
    WalkConfig,
    argmax_mask,
    exact_walk_dense,
    exact_walk_woodbury,
    residual_l1,
    steps_for_tolerance,
    truncated_walk,
)


def series_oracle(s, g, alpha, terms):
    """(1-alpha) * sum_{t=0}^{terms} alpha^t S^t G, term by term."""
    total = np.zeros_like(g)
    stg = g.copy()
    for t in range(terms + 1):
        total += alpha**t * stg
        stg = s @ stg
    return (1.0 - alpha) * total


def tail_oracle(s, g, alpha, steps, upto):
    """Entrywise L1 mass of (1-alpha) * sum_{t=steps+1}^{upto} alpha^t S^t G."""
    stg = g.copy()
    for _ in range(steps + 1):
        stg = s @ stg
    total = 0.0
    for t in range(steps + 1, upto + 1):
        total += alpha**t * float(stg.sum())
        stg = s @ stg
    return (1.0 - alpha) * total


class TestExactDense:
    def test_identity_transition_returns_g(self):
        rng = np.random.default_rng(0)
        g = random_label_probs(rng, 6, 3)
        for alpha in (0.1, 0.5, 0.99):
            p = exact_walk_dense(np.eye(6), g, alpha)
            assert np.abs(p.p - g).max() < 1e-12
            assert p.residual_bound_value == 0.0

    def test_vanishing_alpha_returns_g(self):
        rng = np.random.default_rng(1)
        s = random_stochastic(rng, 7)
        g = random_label_probs(rng, 7, 2)
        p = exact_walk_dense(s, g, 1e-9)
        assert np.abs(p.p - g).max() < 1e-8

    def test_matches_power_series_oracle(self):
        rng = np.random.default_rng(2)
        s = random_stochastic(rng, 8)
        g = random_label_probs(rng, 8, 3)
        p = exact_walk_dense(s, g, 0.9)
        ref = series_oracle(s, g, 0.9, terms=500)
        assert np.abs(p.p - ref).max() < 1e-6
        assert np.abs(p.p.sum(axis=1) - 1.0).max() < 1e-6

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(3)
        with pytest.raises(DimensionMismatch):
            exact_walk_dense(random_stochastic(rng, 4), random_label_probs(rng, 5, 2), 0.5)


class TestExactWoodbury:
    def test_rank_one_uniform_walk_closed_form(self):
        # S = ones/n: S^t G has every row equal to the column mean m, so
        # P_inf = (1-a) G + a * (row of m), by summing the geometric series.
        rng = np.random.default_rng(10)
        n, alpha = 12, 0.7
        g = random_label_probs(rng, n, 3)
        q = np.full((n, 1), 1.0 / n)
        k = np.ones((n, 1))
        p = exact_walk_woodbury(q, k, g, alpha)
        closed = (1.0 - alpha) * g + alpha * g.mean(axis=0)
        assert np.abs(p.p - closed).max() < 1e-12
        ref = exact_walk_dense(q @ k.T, g, alpha).p
        assert np.abs(p.p - ref).max() < 1e-12

    def test_matches_dense_inverse(self):
        rng = np.random.default_rng(11)
        q, k = random_factored_stochastic(rng, 32, 4)
        g = random_label_probs(rng, 32, 5)
        got = exact_walk_woodbury(q, k, g, 0.8).p
        ref = exact_walk_dense(q @ k.T, g, 0.8).p
        assert np.abs(got - ref).max() < 1e-6

    def test_vanishing_alpha_returns_g(self):
        rng = np.random.default_rng(12)
        q, k = random_factored_stochastic(rng, 16, 3)
        g = random_label_probs(rng, 16, 2)
        p = exact_walk_woodbury(q, k, g, 1e-9)
        assert np.abs(p.p - g).max() < 1e-8

    def test_solves_only_the_small_system(self, monkeypatch):
        calls = []
        original = walk_mod._solve

        def spy(a, b):
            calls.append(a.shape)
            return original(a, b)

        monkeypatch.setattr(walk_mod, "_solve", spy)
        rng = np.random.default_rng(13)
        q, k = random_factored_stochastic(rng, 64, 4)
        exact_walk_woodbury(q, k, random_label_probs(rng, 64, 3), 0.9)
        assert calls == [(4, 4)]


class TestTruncated:
    def test_zero_steps_returns_g_exactly(self):
        rng = np.random.default_rng(20)
        s = DenseStochastic(random_stochastic(rng, 6))
        g = random_label_probs(rng, 6, 3)
        p = truncated_walk(s, g, WalkConfig(alpha=0.9, steps=0))
        assert np.array_equal(p.p, g)
        assert p.steps_used == 0

    def test_identity_transition_fixed_point(self):
        rng = np.random.default_rng(21)
        g = random_label_probs(rng, 5, 2)
        for steps in (1, 3, 17):
            p = truncated_walk(DenseStochastic(np.eye(5)), g, WalkConfig(alpha=0.8, steps=steps))
            assert np.abs(p.p - g).max() < 1e-12

    def test_matches_exact_within_tail_bound(self):
        rng = np.random.default_rng(22)
        s = random_stochastic(rng, 8)
        g = random_label_probs(rng, 8, 3)
        cfg = WalkConfig(alpha=0.9, steps=200)
        got = truncated_walk(DenseStochastic(s), g, cfg)
        ref = exact_walk_dense(s, g, 0.9)
        bound = 8 * 0.9**201  # about 5.1e-9
        assert np.abs(got.p - ref.p).max() < bound
        assert got.residual_bound_value == pytest.approx(bound)

    def test_intermediate_row_sums_follow_partial_mass(self):
        rng = np.random.default_rng(23)
        s = DenseStochastic(random_stochastic(rng, 10))
        g = random_label_probs(rng, 10, 4)
        alpha = 0.9
        seen = []

        def check(t, p_tilde):
            expected = 1.0 - alpha ** (t + 1)
            seen.append(np.abs(p_tilde.sum(axis=1) - expected).max())

        p = truncated_walk(s, g, WalkConfig(alpha=alpha, steps=30), on_iterate=check)
        assert len(seen) == 31
        assert max(seen) < 1e-6
        assert np.abs(p.p.sum(axis=1) - 1.0).max() < 1e-5

    def test_nonfinite_iterate_detected(self):
        class Poison(TransitionOperator):
            n = 4

            def matmul(self, x):
                out = np.asarray(x, dtype=float).copy()
                out[0, 0] = np.nan
                return out

        rng = np.random.default_rng(24)
        g = random_label_probs(rng, 4, 2)
        with pytest.raises(NonFiniteIterate):
            truncated_walk(Poison(), g, WalkConfig(alpha=0.5, steps=2))

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(25)
        s = DenseStochastic(random_stochastic(rng, 4))
        with pytest.raises(DimensionMismatch):
            truncated_walk(s, random_label_probs(rng, 5, 2), WalkConfig(steps=1))

    def test_path_equivalence_composite_vs_densified(self):
        bundle, labels = clustered_bundle(
            seed=3, grid_h=16, grid_w=16, feature_dim=8, class_count=4, heads_per_layer=2
        )
        g = build_label_generator(labels)
        cfg = WalkConfig(alpha=0.9, steps=40, beta=0.5)
        built = build_transition(bundle, g, PipelineOptions(walk=cfg))
        fast = truncated_walk(built.operator.collapsed(), g, cfg).p
        dense = truncated_walk(DenseStochastic(built.operator.to_dense()), g, cfg).p
        assert np.abs(fast - dense).max() < 1e-5

    def test_argmax_decisions_stabilize(self):
        # The plateau is a statistical property: individual instances may
        # flip a node late, so compare change fractions averaged over a
        # fixed batch of instances.
        early, late = [], []
        for seed in range(6):
            bundle, labels = clustered_bundle(
                seed=seed, grid_h=12, grid_w=12, feature_dim=8,
                class_count=3, heads_per_layer=2,
            )
            g = build_label_generator(labels)
            cfg = WalkConfig(alpha=0.9, steps=80)
            built = build_transition(bundle, g, PipelineOptions(walk=cfg))
            snaps = {}

            def grab(t, p, snaps=snaps):
                if t in (5, 10, 40, 80):
                    snaps[t] = p.argmax(axis=1).copy()

            truncated_walk(built.operator.collapsed(), g, cfg, on_iterate=grab)
            early.append(np.mean(snaps[5] != snaps[10]))
            late.append(np.mean(snaps[40] != snaps[80]))
        assert np.mean(late) <= np.mean(early)


class TestResidual:
    def test_closed_form_value(self):
        assert residual_l1(0.5, 3, 4) == pytest.approx(0.25, abs=1e-15)

    def test_each_step_halves_at_half_alpha(self):
        for steps in range(5):
            assert residual_l1(0.5, steps + 1, 4) == pytest.approx(
                residual_l1(0.5, steps, 4) / 2.0
            )

    def test_matches_explicit_tail_summation(self):
        rng = np.random.default_rng(30)
        s = random_stochastic(rng, 8)
        g = random_label_probs(rng, 8, 3)
        measured = tail_oracle(s, g, 0.9, steps=100, upto=5000)
        assert abs(measured - residual_l1(0.9, 100, 8)) < 1e-9


class TestStepsForTolerance:
    def test_already_satisfied(self):
        for alpha in (0.1, 0.5, 0.9):
            assert steps_for_tolerance(alpha, 1, 1.0) == 0

    def test_inverse_of_residual_example(self):
        assert steps_for_tolerance(0.5, 4, 0.25) == 3

    def test_bracketing_at_paper_scale(self):
        steps = steps_for_tolerance(0.9, 576, 1e-3)
        assert residual_l1(0.9, steps, 576) <= 1e-3
        assert residual_l1(0.9, steps - 1, 576) > 1e-3

    @given(
        alpha=st.floats(0.05, 0.99),
        n=st.integers(1, 10**6),
        tol=st.floats(1e-9, 10.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_minimal_bracketing(self, alpha, n, tol):
        steps = steps_for_tolerance(alpha, n, tol)
        assert steps >= 0
        assert n * alpha ** (steps + 1) <= tol
        if steps > 0:
            assert n * alpha**steps > tol


class TestArgmaxMask:
    def test_unique_maximum(self):
        mask = argmax_mask(np.array([[0.2, 0.5, 0.3]]), 1, 1)
        assert mask[0, 0] == 1

    def test_tie_breaks_low(self):
        mask = argmax_mask(np.array([[0.5, 0.5, 0.0]]), 1, 1)
        assert mask[0, 0] == 0

    def test_uniform_rows_all_zero(self):
        mask = argmax_mask(np.full((6, 3), 1.0 / 3.0), 2, 3)
        assert mask.shape == (2, 3)
        assert (mask == 0).all()

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            argmax_mask(np.full((6, 3), 1.0 / 3.0), 2, 2)


class TestConfig:
    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            WalkConfig(alpha=1.0)
        with pytest.raises(ValueError):
            WalkConfig(alpha=0.0)

    def test_negative_steps_rejected(self):
        with pytest.raises(ValueError):
            WalkConfig(steps=-1)

    def test_singular_detection_guard(self):
        # exact solver surfaces degenerate numerics as SingularSystem
        g = np.array([[1.0, 0.0], [0.0, 1.0]])
        q = np.array([[1.0, 0.0], [1.0, 0.0]])
        k = np.array([[np.inf, 0.0], [0.0, 0.0]])
        with pytest.raises((SingularSystem, ValueError)):
            exact_walk_woodbury(q, k, g, 0.9)
