"""Model assembly tests: parameter collection, variants, teacher forcing."""

import numpy as np
import pytest

from s2sm import tensor as T
from s2sm.corpus import BOS, UNK
from s2sm.model import (
    ModelConfig,
    build_params,
    full_lvt,
    prev_embedding,
    sequence_loss,
)

from conftest import VARIANT_FLAGS, finite_difference, toy_config, toy_example


class TestConfig:
    def test_hierarchical_and_temporal_exclusive(self):
        with pytest.raises(ValueError, match="mutually exclusive"):
            ModelConfig(n_src_vocab=10, n_tgt_vocab=10, hierarchical_on=True, temporal_on=True)

    def test_attn_dim_defaults_to_hidden(self):
        config = ModelConfig(n_src_vocab=10, n_tgt_vocab=10, hidden=33)
        assert config.d_attn == 33

    def test_roundtrip_dict(self):
        config = toy_config(switch_on=True)
        assert ModelConfig.from_dict(config.to_dict()) == config


class TestParams:
    def test_same_seed_identical(self):
        config = toy_config(switch_on=True, hierarchical_on=True, features_on=True)
        a = build_params(config, seed=5)
        b = build_params(config, seed=5)
        for (name_a, ta), (name_b, tb) in zip(a.named_tensors(), b.named_tensors()):
            assert name_a == name_b
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_names_unique(self):
        config = toy_config(switch_on=True, hierarchical_on=True, features_on=True,
                            pointer_shared=False)
        names = [n for n, _ in build_params(config, seed=0).named_tensors()]
        assert len(names) == len(set(names))

    def test_biases_zero_matrices_bounded(self):
        config = toy_config()
        params = build_params(config, seed=2)
        for name, t in params.named_tensors():
            if name.endswith((".b_update", ".b_reset", ".b_cand", ".bias", "out.b", "bridge.b")):
                assert not t.data.any()
            assert (np.abs(t.data) <= 0.1).all()

    def test_snapshot_roundtrip(self):
        config = toy_config(switch_on=True)
        params = build_params(config, seed=3)
        snap = params.clone_data()
        for _, t in params.named_tensors():
            t.data += 1.0
        params.load_data(snap)
        for name, t in params.named_tensors():
            np.testing.assert_array_equal(t.data, snap[name])


class TestPrevEmbedding:
    def test_first_step_is_bos(self, rng):
        config = toy_config(switch_on=True)
        params = build_params(config, seed=4)
        ex = toy_example(rng, config)
        e = prev_embedding(params, config, ex, 0)
        np.testing.assert_array_equal(e.data, params.tgt_embed.data[BOS])

    def test_pointed_previous_token_uses_source_embedding(self, rng):
        config = toy_config(switch_on=True)
        params = build_params(config, seed=4)
        ex = toy_example(rng, config, pointer_frac=1.0)
        assert ex.switch_targets[0] == 0
        e = prev_embedding(params, config, ex, 1)
        src_id = ex.doc_tokens[ex.pointer_targets[0]]
        np.testing.assert_array_equal(e.data, params.src_bank.word.data[src_id])

    def test_generated_previous_token_uses_target_embedding(self, rng):
        config = toy_config(switch_on=True)
        params = build_params(config, seed=4)
        ex = toy_example(rng, config, pointer_frac=0.0)
        e = prev_embedding(params, config, ex, 1)
        np.testing.assert_array_equal(e.data, params.tgt_embed.data[ex.summary_tokens[1]])


class TestSequenceLoss:
    @pytest.mark.parametrize("variant", sorted(VARIANT_FLAGS))
    def test_loss_finite_and_positive(self, rng, variant):
        config = toy_config(**VARIANT_FLAGS[variant])
        params = build_params(config, seed=8)
        ex = toy_example(rng, config, n_doc=10, n_content=4, n_sent=3)
        result = sequence_loss(params, config, ex, full_lvt(config))
        assert np.isfinite(result.loss.item())
        assert result.loss.item() > 0
        assert result.n_targets == 5

    @pytest.mark.parametrize("variant", sorted(VARIANT_FLAGS))
    def test_gradients_match_finite_differences(self, rng, variant):
        config = toy_config(**VARIANT_FLAGS[variant])
        params = build_params(config, seed=9)
        ex = toy_example(rng, config, n_doc=8, n_content=3, n_sent=2)
        lvt = full_lvt(config)
        tensors = [t for _, t in params.named_tensors()]

        def loss():
            return sequence_loss(params, config, ex, lvt).loss

        assert finite_difference(loss, tensors, n_coords=60, rng=rng) < 1e-4

    def test_out_of_lvt_target_trains_as_unk(self, rng):
        from s2sm.decoder import LvtVocab

        config = toy_config()
        params = build_params(config, seed=10)
        ex = toy_example(rng, config, pointer_frac=0.0)
        lvt = LvtVocab([0, 1, 2, 3])  # specials only: every content target is out of set
        result = sequence_loss(params, config, ex, lvt)
        assert np.isfinite(result.loss.item())

    def test_switch_probs_collected(self, rng):
        config = toy_config(switch_on=True)
        params = build_params(config, seed=10)
        ex = toy_example(rng, config)
        result = sequence_loss(params, config, ex, full_lvt(config))
        assert len(result.switch_probs) == result.n_targets
        for g, p in result.switch_probs:
            assert g in (0, 1) and 0.0 < p < 1.0
