"""Tests for the text pipeline: tokenization, vocab, features, supervision."""

import math

import numpy as np
import pytest

from s2sm import corpus as C
from s2sm.corpus import (
    BOS,
    EOS,
    PAD,
    UNK,
    CorpusError,
    Example,
    FeatureBinner,
    Pipeline,
    RuleTagger,
    Vocabulary,
    anonymize_entities,
    build_pointer_supervision,
    compute_tfidf,
    lvt_batch_vocab,
    tokenize,
)


class TestTokenize:
    def test_rule_trace(self):
        assert tokenize("The cat sat. It slept.") == [
            ["the", "cat", "sat", "."],
            ["it", "slept", "."],
        ]

    def test_empty(self):
        assert tokenize("") == []
        assert tokenize("   \n\t ") == []

    def test_single_token(self):
        assert tokenize("hello") == [["hello"]]

    def test_digits_and_internal_punct_preserved(self):
        assert tokenize("It cost 3.5 million!") == [["it", "cost", "3.5", "million", "!"]]

    def test_edge_punct_peeled(self):
        assert tokenize('He said "stop."') == [["he", "said", '"', "stop", ".", '"']]


class TestVocabulary:
    def test_frequency_sort(self):
        vocab = Vocabulary.build([["a"] * 3 + ["b"] * 2 + ["c"]], max_size=6)
        assert vocab.id_to_token == ["<pad>", "<unk>", "<s>", "</s>", "a", "b"]

    def test_empty_corpus(self):
        vocab = Vocabulary.build([], max_size=10)
        assert len(vocab) == 4

    def test_tie_broken_lexicographically(self):
        vocab = Vocabulary.build([["a", "a", "b", "b"]], max_size=5)
        assert vocab.id_to_token[4] == "a"

    def test_roundtrip_identity(self):
        vocab = Vocabulary.build([["x", "y", "z", "y"]], max_size=8)
        for i in range(len(vocab)):
            assert vocab.id(vocab.token(i)) == i

    def test_unknown_maps_to_unk(self):
        vocab = Vocabulary.build([["x"]], max_size=5)
        assert vocab.id("never-seen") == UNK

    def test_save_load(self, tmp_path):
        vocab = Vocabulary.build([["x", "y", "x"]], max_size=6)
        vocab.save(tmp_path / "v.txt")
        loaded = Vocabulary.load(tmp_path / "v.txt")
        assert loaded.id_to_token == vocab.id_to_token

    def test_max_size_too_small(self):
        with pytest.raises(ValueError, match="at least 5"):
            Vocabulary.build([["a"]], max_size=4)


class TestTfidf:
    def test_tf_definition(self):
        tfs, _ = compute_tfidf(["a", "a", "b"], {}, 1)
        assert tfs == pytest.approx([2 / 3, 2 / 3, 1 / 3])

    def test_idf_everywhere_word_negative(self):
        _, idfs = compute_tfidf(["w"], {"w": 9}, 9)
        assert idfs[0] == pytest.approx(math.log(9 / 10))
        assert idfs[0] < 0

    def test_idf_unseen_word_zero(self):
        _, idfs = compute_tfidf(["new"], {}, 1)
        assert idfs[0] == 0.0


class TestFeatureBinner:
    def test_boundary_scan(self):
        binner = FeatureBinner([0.1, 0.3, 0.6], [], 4)
        assert binner.bin_tf(0.5) == 2
        assert binner.bin_tf(0.05) == 0
        assert binner.bin_tf(0.9) == 3

    def test_fit_quantiles_cover_all_values(self, rng):
        values = list(rng.uniform(0, 1, size=200))
        binner = FeatureBinner.fit(values, values, n_bins=10)
        bins = {binner.bin_tf(v) for v in values}
        assert bins <= set(range(10))
        assert len(bins) >= 8  # equal-frequency: most bins populated

    def test_non_increasing_bounds_rejected(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            FeatureBinner([0.3, 0.3], [], 3)


class TestRuleTagger:
    def test_capitalized_is_entity(self):
        tagger = RuleTagger()
        _, ner = tagger.tag(["Obama", "spoke"])
        assert ner == ["ENT", "O"]

    def test_ly_is_adverb(self):
        tagger = RuleTagger()
        pos, _ = tagger.tag(["quickly"])
        assert pos == ["ADV"]

    def test_annotate_length_mismatch(self):
        class Broken:
            pos_tags = ("X",)
            ner_tags = ("O",)

            def tag(self, toks):
                return ["X"], ["O"]  # always one tag

        with pytest.raises(ValueError, match="tags for"):
            C.annotate_features(
                [["a", "b"]], [["a", "b"]], Broken(), FeatureBinner([], [], 1), {}, 1
            )


def _vocab_from(tokens):
    return Vocabulary.build([tokens], max_size=4 + len(set(tokens)))


class TestPointerSupervision:
    def test_first_occurrence_wins(self):
        vocab = _vocab_from(["said", "that"])
        doc = ["w0", "w1", "w2", "obama", "w4", "w5", "w6", "obama"]
        summary_surface = ["obama", "said", "</s>"]
        summary_tokens = [BOS, UNK, vocab.id("said"), EOS]
        switch, pointers, unpointable = build_pointer_supervision(
            doc, summary_surface, summary_tokens, vocab
        )
        assert switch == [0, 1, 1]
        assert pointers == [3, -1, -1]
        assert unpointable == 0

    def test_in_vocab_word_generates(self):
        vocab = _vocab_from(["said"])
        switch, pointers, _ = build_pointer_supervision(
            ["said"], ["said", "</s>"], [BOS, vocab.id("said"), EOS], vocab
        )
        assert switch == [1, 1]
        assert pointers == [-1, -1]

    def test_oov_absent_from_source_flags_unk(self):
        vocab = _vocab_from(["said"])
        switch, pointers, unpointable = build_pointer_supervision(
            ["said"], ["martian", "</s>"], [BOS, UNK, EOS], vocab
        )
        assert switch == [1, 1]
        assert unpointable == 1


class TestAnonymize:
    LEX = {"Obama": "obama", "Putin": "putin", "Merkel": "merkel"}

    def test_first_occurrence_order(self):
        doc = [["Obama", "met", "Putin"], ["Obama", "left"]]
        new_doc, _, mapping = anonymize_entities(doc, [], self.LEX)
        assert new_doc == [["@entity0", "met", "@entity1"], ["@entity0", "left"]]
        assert mapping == {"obama": "@entity0", "putin": "@entity1"}

    def test_no_entities_unchanged(self):
        doc = [["plain", "words"]]
        new_doc, new_sum, _ = anonymize_entities(doc, [["more"]], self.LEX)
        assert new_doc == doc and new_sum == [["more"]]

    def test_summary_only_entity_gets_next_id(self):
        doc = [["Obama", "spoke"]]
        summ = [["Merkel", "listened"]]
        new_doc, new_sum, _ = anonymize_entities(doc, summ, self.LEX)
        assert new_doc == [["@entity0", "spoke"]]
        assert new_sum == [["@entity1", "listened"]]

    def test_idempotent(self):
        doc = [["Obama", "met", "Putin"]]
        once_doc, once_sum, _ = anonymize_entities(doc, [], self.LEX)
        twice_doc, twice_sum, _ = anonymize_entities(once_doc, once_sum, self.LEX)
        assert twice_doc == once_doc and twice_sum == once_sum


def _toy_example(doc_surface, vocab, summary=("</s>",)):
    n = len(doc_surface)
    summary_tokens = [BOS] + [vocab.id(t) for t in summary if t != "</s>"] + [EOS]
    m = len(summary_tokens) - 1
    return Example(
        doc_tokens=[1] * n,
        doc_surface=list(doc_surface),
        pos_ids=[0] * n,
        ner_ids=[0] * n,
        tf_bin=[0] * n,
        idf_bin=[0] * n,
        sent_ids=[0] * n,
        summary_tokens=summary_tokens,
        summary_surface=[t for t in summary if t != "</s>"] + ["</s>"],
        switch_targets=[1] * m,
        pointer_targets=[-1] * m,
    )


class TestLvtBatchVocab:
    def _vocab(self):
        # frequency order c, d, a, b, e -> ids 4..8
        corpus = [["c"] * 5 + ["d"] * 4 + ["a"] * 3 + ["b"] * 2 + ["e"]]
        return Vocabulary.build(corpus, max_size=9)

    def test_rule_trace(self):
        vocab = self._vocab()
        batch = [_toy_example(["a", "b"], vocab)]
        ids = lvt_batch_vocab(batch, vocab, lvt_size=7)
        assert ids == sorted([PAD, UNK, BOS, EOS, vocab.id("a"), vocab.id("b"), vocab.id("c")])

    def test_full_vocab_when_lvt_large(self):
        vocab = self._vocab()
        batch = [_toy_example(["a"], vocab)]
        assert lvt_batch_vocab(batch, vocab, lvt_size=100) == list(range(len(vocab)))

    def test_empty_sources_top_frequency_fill(self):
        vocab = self._vocab()
        batch = [_toy_example(["zzz"], vocab)]  # not in decoder vocab
        ids = lvt_batch_vocab(batch, vocab, lvt_size=6)
        assert ids == sorted([PAD, UNK, BOS, EOS, vocab.id("c"), vocab.id("d")])

    def test_overflowing_sources_all_kept(self):
        vocab = self._vocab()
        batch = [_toy_example(["a", "b", "c", "d", "e"], vocab)]
        ids = lvt_batch_vocab(batch, vocab, lvt_size=5)
        assert set(ids) >= {vocab.id(t) for t in "abcde"}
        assert len(ids) == 9

    def test_always_contains_specials_and_sources(self, rng):
        vocab = self._vocab()
        for _ in range(20):
            tokens = list(rng.choice(["a", "b", "c", "d", "e", "zzz"], size=4))
            batch = [_toy_example(tokens, vocab)]
            ids = set(lvt_batch_vocab(batch, vocab, lvt_size=6))
            assert {PAD, UNK, BOS, EOS} <= ids
            for t in tokens:
                if vocab.id(t) != UNK:
                    assert vocab.id(t) in ids


class TestShardIO:
    def test_roundtrip(self, tmp_path):
        vocab = _vocab_from(["w"])
        examples = [_toy_example(["w", "x"], vocab), _toy_example(["y"], vocab)]
        path = tmp_path / "data.shard"
        C.write_examples(path, examples)
        loaded = C.read_examples(path)
        assert [e.to_dict() for e in loaded] == [e.to_dict() for e in examples]
        assert path.read_bytes()[:8] == b"S2SMEXv1"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "garbage"
        path.write_bytes(b"NOTASHRD" + b"\x00" * 8)
        with pytest.raises(CorpusError, match="magic"):
            C.read_examples(path)

    def test_jsonl_errors(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"document": "a"}\nnot json\n')
        with pytest.raises(CorpusError, match="invalid JSON"):
            C.read_jsonl_corpus(path)


class TestPipeline:
    RECORDS = [
        {"id": "0", "document": "Obama met aides. The aides met Obama.", "summary": "Obama met aides"},
        {"id": "1", "document": "Stocks fell sharply. Traders sold quickly.", "summary": "stocks fell"},
        {"id": "2", "document": "Rain fell on the plain.", "summary": "rain fell"},
    ]

    def _pipeline(self):
        return Pipeline.fit(self.RECORDS, src_vocab_size=40, tgt_vocab_size=10)

    def test_example_invariants(self):
        pipe = self._pipeline()
        for rec in self.RECORDS:
            ex = pipe.build_example(rec)
            n = len(ex.doc_tokens)
            assert len(ex.pos_ids) == len(ex.ner_ids) == len(ex.tf_bin) == len(ex.idf_bin) == n
            assert ex.sent_ids[0] == 0
            assert all(b >= a for a, b in zip(ex.sent_ids, ex.sent_ids[1:]))
            for g, p, surf in zip(ex.switch_targets, ex.pointer_targets, ex.summary_surface):
                if g == 0:
                    assert ex.doc_surface[p] == surf

    def test_pointer_for_oov_in_source(self):
        pipe = self._pipeline()
        ex = pipe.build_example(self.RECORDS[0])
        # tiny decoder vocab: "obama" is OOV but present in the source
        oov_positions = [i for i, g in enumerate(ex.switch_targets) if g == 0]
        for i in oov_positions:
            assert ex.doc_surface[ex.pointer_targets[i]] == ex.summary_surface[i]
            assert ex.summary_tokens[i + 1] == UNK

    def test_sentence_ids_follow_segmentation(self):
        pipe = self._pipeline()
        ex = pipe.build_example(self.RECORDS[0])
        assert max(ex.sent_ids) == 1  # two sentences

    def test_save_load_roundtrip(self, tmp_path):
        pipe = self._pipeline()
        pipe.save(tmp_path)
        loaded = Pipeline.load(tmp_path)
        ex_a = pipe.build_example(self.RECORDS[1])
        ex_b = loaded.build_example(self.RECORDS[1])
        assert ex_a.to_dict() == ex_b.to_dict()

    def test_anonymized_pipeline_entities_pointed(self):
        pipe = Pipeline.fit(
            self.RECORDS,
            src_vocab_size=40,
            tgt_vocab_size=40,
            anonymize=True,
            exclude_entities_from_tgt=True,
        )
        ex = pipe.build_example(self.RECORDS[0])
        assert "@entity0" in ex.doc_surface
        ent_positions = [i for i, s in enumerate(ex.summary_surface) if s.startswith("@entity")]
        assert ent_positions
        for i in ent_positions:
            assert ex.switch_targets[i] == 0

    def test_empty_document_rejected(self):
        pipe = self._pipeline()
        with pytest.raises(CorpusError, match="empty document"):
            pipe.build_example({"id": "x", "document": "", "summary": "s"})
