import itertools
import math

import numpy as np
import pytest

from hodgecover.moe import CalibCorpus, synth_layer
from hodgecover.wanda import (PruneMask, expert_weight_matrix, onehot_activations,
                              prune_survivors, residual_sparsity, wanda_prune)


class TestResidualSparsity:
    def test_paper_protocol_values(self):
        assert residual_sparsity(0.33, 0.20) == pytest.approx(0.1625, abs=1e-12)
        assert residual_sparsity(0.66, 0.20) == pytest.approx(0.575, abs=1e-12)

    def test_clamped_at_zero(self):
        assert residual_sparsity(0.15, 0.20) == 0.0
        assert residual_sparsity(0.20, 0.20) == 0.0

    def test_stage1_rate_domain(self):
        with pytest.raises(ValueError):
            residual_sparsity(0.5, 1.0)


class TestWandaPrune:
    def test_zero_sparsity_is_identity(self):
        rng = np.random.default_rng(40)
        w = rng.normal(size=(5, 9))
        x = rng.normal(size=(20, 9))
        pruned, mask = wanda_prune(w, x, 0.0)
        assert np.array_equal(pruned, w)
        assert mask.mask.all()
        assert mask.sparsity == 0.0

    def test_uniform_column_norms_reduce_to_magnitude_pruning(self):
        rng = np.random.default_rng(41)
        w = rng.normal(size=(4, 8))
        x = np.eye(8) * 2.0
        pruned, mask = wanda_prune(w, x, 0.5)
        keep = math.ceil(0.5 * 8)
        for row in range(4):
            kept = set(np.nonzero(mask.mask[row])[0].tolist())
            order = np.argsort(-np.abs(w[row]), kind="stable")[:keep]
            assert kept == set(order.tolist())

    def test_two_by_four_matches_exhaustive_oracle(self):
        w = np.array([[0.5, -2.0, 1.0, 0.1],
                      [3.0, 0.2, -0.2, 2.5]])
        x = np.array([[1.0, 0.0, 2.0, 1.0],
                      [0.0, 1.0, 2.0, 1.0],
                      [1.0, 1.0, 0.0, 1.0]])
        r2 = 0.5
        keep = math.ceil((1 - r2) * 4)
        score = np.abs(w) * np.linalg.norm(x, axis=0)
        _, mask = wanda_prune(w, x, r2)
        for row in range(2):
            best = max(itertools.combinations(range(4), keep),
                       key=lambda cols: (score[row, list(cols)].sum(),
                                         tuple(-c for c in cols)))
            assert set(np.nonzero(mask.mask[row])[0].tolist()) == set(best)

    def test_keep_counts_exact_on_grid(self):
        rng = np.random.default_rng(42)
        for b in range(4, 65, 6):
            w = rng.normal(size=(3, b))
            x = rng.normal(size=(10, b))
            for r2 in (0.0, 0.1625, 0.575, 0.9):
                _, mask = wanda_prune(w, x, r2)
                expected = math.ceil((1 - r2) * b)
                assert (mask.mask.sum(axis=1) == expected).all()
                assert mask.keep_per_row == expected

    def test_tie_breaks_to_lowest_column(self):
        w = np.ones((1, 4))
        x = np.ones((2, 4))
        _, mask = wanda_prune(w, x, 0.5)
        assert mask.mask[0].tolist() == [1, 1, 0, 0]

    def test_idempotent_on_survivors(self):
        rng = np.random.default_rng(43)
        w = rng.normal(size=(6, 12))
        x = rng.normal(size=(30, 12))
        once, _ = wanda_prune(w, x, 0.4)
        twice, _ = wanda_prune(once, x, 0.4)
        nonzero = once != 0.0
        assert np.array_equal(twice[nonzero], once[nonzero])

    def test_shape_and_domain_errors(self):
        with pytest.raises(ValueError, match="conform"):
            wanda_prune(np.ones((2, 3)), np.ones((5, 4)), 0.1)
        with pytest.raises(ValueError):
            wanda_prune(np.ones((2, 3)), np.ones((5, 3)), 1.0)

    def test_mask_json_round_trip(self):
        rng = np.random.default_rng(44)
        _, mask = wanda_prune(rng.normal(size=(3, 11)), rng.normal(size=(7, 11)), 0.3)
        back = PruneMask.from_json(mask.to_json())
        assert np.array_equal(back.mask, mask.mask)
        assert back.keep_per_row == mask.keep_per_row
        assert back.sparsity == mask.sparsity


class TestStageTwoIntegration:
    def test_expert_matrix_reproduces_expert(self):
        layer = synth_layer(seed=45)
        w = expert_weight_matrix(layer, 3)
        assert w.shape == (layer.vocab, layer.ctx)
        # every one-hot context maps to the expert's logit row
        assert np.array_equal(w[:, 17], layer.expert_logits[3])

    def test_onehot_activations_column_norms_count_contexts(self):
        corpus = CalibCorpus.sample(8, 64, 5)
        x = onehot_activations(corpus, 8)
        counts = np.bincount(corpus.contexts, minlength=8)
        assert np.allclose(np.linalg.norm(x, axis=0), np.sqrt(counts))

    def test_prune_survivors_no_op_at_zero(self):
        layer = synth_layer(seed=46)
        corpus = CalibCorpus.sample(256, 512, 42)
        pruned, masks = prune_survivors(layer, corpus, [1, 4], 0.0)
        assert set(pruned) == {1, 4}
        assert np.array_equal(pruned[1], expert_weight_matrix(layer, 1))
        assert masks[4].sparsity == 0.0

    def test_prune_survivors_keeps_frequent_contexts_exact(self):
        layer = synth_layer(seed=47)
        corpus = CalibCorpus.sample(256, 2048, 42)
        pruned, masks = prune_survivors(layer, corpus, [0], 0.575)
        kept_cols = np.nonzero(masks[0].mask[0])[0]
        assert len(kept_cols) == math.ceil(0.425 * 256)
        w = pruned[0]
        assert np.array_equal(w[:, kept_cols[0]], layer.expert_logits[0])
