"""Text pipeline: tokenization, vocabularies, features, pointer supervision.

Turns raw document/summary pairs (JSONL: one object with "document" and
"summary" string fields per line) into training-ready :class:`Example`
records, and defines the on-disk formats: vocabulary files (one token per
line, line number = id) and binary example shards (magic ``S2SMEXv1``).
"""

from __future__ import annotations

import json
import logging
import math
import re
import string
import struct
from collections import Counter
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<s>", "</s>")

SHARD_MAGIC = b"S2SMEXv1"
SHARD_VERSION = 1

_ENTITY_RE = re.compile(r"@entity\d+$")


class CorpusError(ValueError):
    """Malformed corpus input (bad JSONL, bad shard, inconsistent fields)."""


# ---------------------------------------------------------------------------
# tokenization

_SENT_SPLIT = re.compile(r"(?<=[.!?])\s+")
_PUNCT = set(string.punctuation)


def _peel(token):
    """Split leading/trailing punctuation characters into their own tokens."""
    lead = []
    while token and token[0] in _PUNCT:
        lead.append(token[0])
        token = token[1:]
    trail = []
    while token and token[-1] in _PUNCT:
        trail.append(token[-1])
        token = token[:-1]
    parts = lead
    if token:
        parts.append(token)
    parts.extend(reversed(trail))
    return parts


def segment(text):
    """Sentence/token segmentation preserving the original character case.

    Sentences split after terminal punctuation (. ! ?) followed by
    whitespace; tokens split on whitespace with edge punctuation peeled
    off. Internal punctuation (decimals, hyphens, apostrophes) stays put.
    """
    if not text or text.isspace():
        return []
    sentences = []
    for chunk in _SENT_SPLIT.split(text.strip()):
        tokens = []
        for raw in chunk.split():
            tokens.extend(_peel(raw))
        if tokens:
            sentences.append(tokens)
    return sentences


def tokenize(text):
    """Lowercased sentence/token segmentation (see :func:`segment`)."""
    return [[tok.lower() for tok in sent] for sent in segment(text)]


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Bidirectional token/id maps with reserved specials and frequency ranks.

    Ids 0..3 are <pad>, <unk>, <s>, </s>; the rest are corpus tokens in
    descending frequency order, ties broken lexicographically.
    """

    def __init__(self, tokens, freqs=None):
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the four specials")
        self.id_to_token = list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")
        self.freqs = list(freqs) if freqs is not None else [0] * len(self.id_to_token)

    @classmethod
    def build(cls, corpus, max_size):
        """Most frequent tokens from an iterable of token sequences.

        ``max_size`` counts the four specials, so ``max_size - 4`` corpus
        tokens are kept.
        """
        if max_size < 5:
            raise ValueError(f"max_size must be at least 5, got {max_size}")
        counts = Counter()
        for seq in corpus:
            counts.update(seq)
        for special in SPECIALS:
            counts.pop(special, None)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        kept = ranked[: max_size - 4]
        tokens = list(SPECIALS) + [tok for tok, _ in kept]
        freqs = [0, 0, 0, 0] + [n for _, n in kept]
        return cls(tokens, freqs)

    def id(self, token):
        return self.token_to_id.get(token, UNK)

    def token(self, i):
        return self.id_to_token[i]

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def save(self, path):
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


# ---------------------------------------------------------------------------
# taggers

PUNCT_ONLY = re.compile(r"[%s]+$" % re.escape(string.punctuation))
NUMERIC = re.compile(r"[0-9][0-9.,]*$")


class RuleTagger:
    """Deterministic rule-based POS/NER stub.

    Plug-in point for real taggers: any object with ``pos_tags``,
    ``ner_tags`` and ``tag(raw_tokens) -> (pos, ner)`` works. Rules operate
    on the original (case-preserving) token forms.
    """

    pos_tags = ("ADJ", "ADV", "FUNC", "NOUN", "NUM", "PUNCT", "VERB")
    ner_tags = ("ENT", "O")

    _FUNC_WORDS = frozenset(
        "a an the and or but of in on at to for with from by as is are was were be been".split()
    )

    def tag(self, raw_tokens):
        pos, ner = [], []
        for raw in raw_tokens:
            low = raw.lower()
            if PUNCT_ONLY.match(raw):
                pos.append("PUNCT")
            elif NUMERIC.match(raw):
                pos.append("NUM")
            elif low in self._FUNC_WORDS:
                pos.append("FUNC")
            elif low.endswith("ly"):
                pos.append("ADV")
            elif low.endswith(("ing", "ed")):
                pos.append("VERB")
            elif low.endswith(("ous", "ful", "ive", "able")):
                pos.append("ADJ")
            else:
                pos.append("NOUN")
            ner.append("ENT" if raw[:1].isupper() else "O")
        return pos, ner


# ---------------------------------------------------------------------------
# TF/IDF and binning


def compute_tfidf(doc_tokens, doc_freq, corpus_size):
    """Per-token (tf, idf) for a flat token list.

    tf(w) = count(w in doc) / len(doc); idf(w) = ln(corpus_size / (1 + df(w))).
    idf may be negative for words present in (nearly) every document.
    """
    if corpus_size < 1:
        raise ValueError("corpus_size must be at least 1")
    counts = Counter(doc_tokens)
    total = len(doc_tokens)
    tfs = [counts[w] / total for w in doc_tokens]
    idfs = [math.log(corpus_size / (1.0 + doc_freq.get(w, 0))) for w in doc_tokens]
    return tfs, idfs


@dataclass
class FeatureBinner:
    """Maps continuous TF/IDF values to categorical bin ids.

    Boundaries are strictly increasing; a value falls in bin
    ``searchsorted(boundaries, value, side="right")``, so ``k`` boundaries
    produce ``k + 1`` bins.
    """

    tf_bounds: list
    idf_bounds: list
    n_bins: int

    def __post_init__(self):
        for bounds in (self.tf_bounds, self.idf_bounds):
            arr = np.asarray(bounds)
            if arr.size and not (np.diff(arr) > 0).all():
                raise ValueError("bin boundaries must be strictly increasing")

    @classmethod
    def fit(cls, tf_values, idf_values, n_bins=10):
        """Equal-frequency boundaries from training-corpus statistics."""

        def quantile_bounds(values):
            if not values:
                return []
            qs = np.quantile(np.asarray(values), [k / n_bins for k in range(1, n_bins)])
            bounds, prev = [], None
            for q in qs:
                if prev is None or q > prev:
                    bounds.append(float(q))
                    prev = q
            return bounds

        return cls(quantile_bounds(list(tf_values)), quantile_bounds(list(idf_values)), n_bins)

    def bin_tf(self, value):
        return int(np.searchsorted(self.tf_bounds, value, side="right"))

    def bin_idf(self, value):
        return int(np.searchsorted(self.idf_bounds, value, side="right"))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["tf_bounds"], d["idf_bounds"], d["n_bins"])


def annotate_features(sentences, raw_sentences, tagger, binner, doc_freq, corpus_size):
    """Per-token POS/NER/TF-bin/IDF-bin ids for a segmented document.

    ``sentences`` are lowercased token lists, ``raw_sentences`` the
    case-preserving forms the tagger sees. All four outputs are flat and
    aligned with the flattened document.
    """
    pos_index = {t: i for i, t in enumerate(tagger.pos_tags)}
    ner_index = {t: i for i, t in enumerate(tagger.ner_tags)}
    pos_ids, ner_ids = [], []
    for sent, raw in zip(sentences, raw_sentences):
        pos, ner = tagger.tag(raw)
        if len(pos) != len(sent) or len(ner) != len(sent):
            raise ValueError(
                f"tagger returned {len(pos)}/{len(ner)} tags for {len(sent)} tokens"
            )
        pos_ids.extend(pos_index[t] for t in pos)
        ner_ids.extend(ner_index[t] for t in ner)
    flat = [tok for sent in sentences for tok in sent]
    tfs, idfs = compute_tfidf(flat, doc_freq, corpus_size)
    tf_bins = [binner.bin_tf(v) for v in tfs]
    idf_bins = [binner.bin_idf(v) for v in idfs]
    return pos_ids, ner_ids, tf_bins, idf_bins


# ---------------------------------------------------------------------------
# examples


@dataclass
class Example:
    """One training-ready document/summary pair.

    Document-side sequences (surface, feature ids, sentence ids) are all
    aligned with ``doc_tokens``. ``summary_tokens`` is BOS ... EOS in
    decoder-vocabulary ids. ``switch_targets``/``pointer_targets``/
    ``summary_surface`` are aligned with the prediction targets
    ``summary_tokens[1:]`` (content tokens then EOS): ``switch_targets[i]``
    is 0 exactly when target i must be produced by pointing, in which case
    ``pointer_targets[i]`` is the first matching source position (-1
    elsewhere).
    """

    doc_tokens: list
    doc_surface: list
    pos_ids: list
    ner_ids: list
    tf_bin: list
    idf_bin: list
    sent_ids: list
    summary_tokens: list
    summary_surface: list
    switch_targets: list
    pointer_targets: list
    id: str = ""

    def __post_init__(self):
        n = len(self.doc_tokens)
        for name in ("doc_surface", "pos_ids", "ner_ids", "tf_bin", "idf_bin", "sent_ids"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length {len(getattr(self, name))} != doc length {n}")
        if self.sent_ids:
            if self.sent_ids[0] != 0 or any(b < a for a, b in zip(self.sent_ids, self.sent_ids[1:])):
                raise ValueError("sent_ids must be nondecreasing starting at 0")
        m = len(self.summary_tokens) - 1
        for name in ("summary_surface", "switch_targets", "pointer_targets"):
            if len(getattr(self, name)) != m:
                raise ValueError(f"{name} must align with summary_tokens[1:]")

    def doc_len(self):
        """True source length (padding stripped)."""
        try:
            return self.doc_tokens.index(PAD)
        except ValueError:
            return len(self.doc_tokens)

    def target_len(self):
        """Number of prediction targets: content tokens plus EOS."""
        return self.summary_tokens.index(EOS)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def build_pointer_supervision(doc_surface, summary_surface, summary_tokens, decoder_vocab):
    """Switch/pointer targets for one example.

    A target gets g=0 (pointer) exactly when its token id is UNK under the
    decoder vocabulary and its surface form occurs in the document; ties
    between multiple source occurrences resolve to the first. OOV targets
    absent from the source stay g=1 and train as generator UNK (the count
    of those is returned for reporting).
    """
    switch, pointers = [], []
    unpointable = 0
    for i, tok_id in enumerate(summary_tokens[1:]):
        if tok_id == EOS:
            switch.append(1)
            pointers.append(-1)
            continue
        surface = summary_surface[i]
        if tok_id == UNK:
            try:
                pos = doc_surface.index(surface)
            except ValueError:
                unpointable += 1
                switch.append(1)
                pointers.append(-1)
            else:
                switch.append(0)
                pointers.append(pos)
        else:
            switch.append(1)
            pointers.append(-1)
    return switch, pointers, unpointable


def anonymize_entities(doc_sentences, summary_sentences, entity_lexicon):
    """Replace lexicon entities with @entityK tokens, K by first occurrence.

    Document occurrences are numbered first (from 0, in order of first
    appearance); entities seen only in the summary take the next unused
    ids. The same mapping is applied to both sides. Already-anonymized
    tokens are not in any lexicon, so the rewrite is idempotent.
    """
    assigned = {}

    def rewrite(sentences):
        out = []
        for sent in sentences:
            new_sent = []
            for tok in sent:
                canonical = entity_lexicon.get(tok)
                if canonical is None:
                    new_sent.append(tok)
                    continue
                if canonical not in assigned:
                    assigned[canonical] = f"@entity{len(assigned)}"
                new_sent.append(assigned[canonical])
            out.append(new_sent)
        return out

    return rewrite(doc_sentences), rewrite(summary_sentences), dict(assigned)


def lvt_batch_vocab(batch, decoder_vocab, lvt_size):
    """Restricted decoder vocabulary for one mini-batch.

    Specials plus every in-decoder-vocab source token of the batch, topped
    up with the most frequent decoder tokens until the set reaches
    min(lvt_size, |decoder_vocab|). If the source tokens alone exceed
    lvt_size they are all kept and no fillers are added.
    """
    if lvt_size < 4:
        raise ValueError(f"lvt_size must be at least 4, got {lvt_size}")
    ids = {PAD, UNK, BOS, EOS}
    for ex in batch:
        for surface in ex.doc_surface:
            tok_id = decoder_vocab.id(surface)
            if tok_id != UNK:
                ids.add(tok_id)
    cap = min(lvt_size, len(decoder_vocab))
    for tok_id in range(4, len(decoder_vocab)):
        if len(ids) >= cap:
            break
        ids.add(tok_id)
    return sorted(ids)


# ---------------------------------------------------------------------------
# file formats


def read_jsonl_corpus(path):
    """List of {"document": ..., "summary": ...} dicts from a JSONL file."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({e})") from None
            if "document" not in obj:
                raise CorpusError(f"{path}:{lineno}: missing 'document' field")
            obj.setdefault("summary", "")
            obj.setdefault("id", str(lineno - 1))
            records.append(obj)
    return records


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def write_examples(path, examples):
    """Binary shard: 16-byte header then length-prefixed serialized examples."""
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<II", SHARD_VERSION, len(examples)))
        for ex in examples:
            payload = json.dumps(ex.to_dict(), ensure_ascii=False, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


def read_examples(path):
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:8] != SHARD_MAGIC:
            raise CorpusError(f"{path}: not an example shard (bad magic)")
        version, count = struct.unpack("<II", header[8:])
        if version != SHARD_VERSION:
            raise CorpusError(f"{path}: unsupported shard version {version}")
        examples = []
        for _ in range(count):
            raw = fh.read(4)
            if len(raw) != 4:
                raise CorpusError(f"{path}: truncated shard")
            (length,) = struct.unpack("<I", raw)
            payload = fh.read(length)
            if len(payload) != length:
                raise CorpusError(f"{path}: truncated shard")
            examples.append(Example.from_dict(json.loads(payload.decode("utf-8"))))
    return examples


# ---------------------------------------------------------------------------
# end-to-end pipeline


@dataclass
class Pipeline:
    """Fitted preprocessing state: vocabularies, tagger, binner, idf stats."""

    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    binner: FeatureBinner
    doc_freq: dict
    corpus_size: int
    anonymize: bool = False
    tagger: object = field(default_factory=RuleTagger)

    @classmethod
    def fit(
        cls,
        records,
        src_vocab_size,
        tgt_vocab_size,
        n_bins=10,
        anonymize=False,
        exclude_entities_from_tgt=False,
        tagger=None,
    ):
        """Fit vocabularies, document frequencies and bin boundaries.

        ``exclude_entities_from_tgt`` keeps @entityK tokens out of the
        decoder vocabulary so that anonymized entities are always routed
        through the pointer.
        """
        tagger = tagger or RuleTagger()
        doc_freq = Counter()
        doc_token_seqs, sum_token_seqs = [], []
        tf_values, idf_values = [], []
        prepared = [cls._segment_record(rec, tagger, anonymize) for rec in records]
        for doc_sents, _, sum_sents, _ in prepared:
            flat = [tok for sent in doc_sents for tok in sent]
            doc_freq.update(set(flat))
            doc_token_seqs.append(flat)
            sum_token_seqs.append([tok for sent in sum_sents for tok in sent])
        corpus_size = max(1, len(records))
        for flat in doc_token_seqs:
            tfs, idfs = compute_tfidf(flat, doc_freq, corpus_size)
            tf_values.extend(tfs)
            idf_values.extend(idfs)
        src_vocab = Vocabulary.build(doc_token_seqs, src_vocab_size)
        tgt_seqs = sum_token_seqs
        if exclude_entities_from_tgt:
            tgt_seqs = [[t for t in seq if not _ENTITY_RE.match(t)] for seq in tgt_seqs]
        tgt_vocab = Vocabulary.build(tgt_seqs, tgt_vocab_size)
        binner = FeatureBinner.fit(tf_values, idf_values, n_bins)
        return cls(src_vocab, tgt_vocab, binner, dict(doc_freq), corpus_size, anonymize, tagger)

    @staticmethod
    def _segment_record(rec, tagger, anonymize):
        doc_raw = segment(rec["document"])
        sum_raw = segment(rec.get("summary", ""))
        if anonymize:
            lexicon = {}
            for sents in (doc_raw, sum_raw):
                for sent in sents:
                    _, ner = tagger.tag(sent)
                    for tok, tag in zip(sent, ner):
                        if tag == "ENT":
                            lexicon[tok] = tok.lower()
            doc_raw, sum_raw, _ = anonymize_entities(doc_raw, sum_raw, lexicon)
        doc = [[t.lower() for t in sent] for sent in doc_raw]
        summ = [[t.lower() for t in sent] for sent in sum_raw]
        return doc, doc_raw, summ, sum_raw

    def build_example(self, record):
        """Fully annotated :class:`Example` from one raw corpus record."""
        doc_sents, doc_raw, sum_sents, _ = self._segment_record(record, self.tagger, self.anonymize)
        if not doc_sents:
            raise CorpusError(f"example {record.get('id', '?')}: empty document")
        pos_ids, ner_ids, tf_bins, idf_bins = annotate_features(
            doc_sents, doc_raw, self.tagger, self.binner, self.doc_freq, self.corpus_size
        )
        doc_surface = [tok for sent in doc_sents for tok in sent]
        doc_tokens = [self.src_vocab.id(t) for t in doc_surface]
        sent_ids = [i for i, sent in enumerate(doc_sents) for _ in sent]
        summary_surface = [tok for sent in sum_sents for tok in sent]
        summary_tokens = [BOS] + [self.tgt_vocab.id(t) for t in summary_surface] + [EOS]
        target_surface = summary_surface + [SPECIALS[EOS]]
        switch, pointers, unpointable = build_pointer_supervision(
            doc_surface, target_surface, summary_tokens, self.tgt_vocab
        )
        if unpointable:
            log.debug(
                "example %s: %d OOV summary tokens absent from source train as UNK",
                record.get("id", "?"),
                unpointable,
            )
        return Example(
            doc_tokens=doc_tokens,
            doc_surface=doc_surface,
            pos_ids=pos_ids,
            ner_ids=ner_ids,
            tf_bin=tf_bins,
            idf_bin=idf_bins,
            sent_ids=sent_ids,
            summary_tokens=summary_tokens,
            summary_surface=target_surface,
            switch_targets=switch,
            pointer_targets=pointers,
            id=str(record.get("id", "")),
        )

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.src_vocab.save(out / "src_vocab.txt")
        self.tgt_vocab.save(out / "tgt_vocab.txt")
        meta = {
            "binner": self.binner.to_dict(),
            "doc_freq": self.doc_freq,
            "corpus_size": self.corpus_size,
            "anonymize": self.anonymize,
            "pos_tags": list(self.tagger.pos_tags),
            "ner_tags": list(self.tagger.ner_tags),
        }
        (out / "pipeline.json").write_text(
            json.dumps(meta, sort_keys=True, ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def load(cls, out_dir, tagger=None):
        out = Path(out_dir)
        meta = json.loads((out / "pipeline.json").read_text(encoding="utf-8"))
        return cls(
            src_vocab=Vocabulary.load(out / "src_vocab.txt"),
            tgt_vocab=Vocabulary.load(out / "tgt_vocab.txt"),
            binner=FeatureBinner.from_dict(meta["binner"]),
            doc_freq=meta["doc_freq"],
            corpus_size=meta["corpus_size"],
            anonymize=meta.get("anonymize", False),
            tagger=tagger or RuleTagger(),
        )
