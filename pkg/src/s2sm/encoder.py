"""Source-side encoding: embeddings, GRU cells, flat and hierarchical encoders."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class GruCell:
    """Gated recurrent unit parameters (update z, reset r, candidate).

    Weight matrices are stored (input_dim x hidden) / (hidden x hidden) so a
    step computes ``x @ w + h @ u + b``.
    """

    w_update: Tensor
    u_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    u_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    u_cand: Tensor
    b_cand: Tensor

    @property
    def input_size(self):
        return self.w_update.shape[0]

    @property
    def hidden_size(self):
        return self.b_update.shape[0]


def gru_step(cell, x, h):
    """One GRU step: h' = (1-z) * h + z * tanh(x w + (r*h) u + b)."""
    if x.shape != (cell.input_size,) or h.shape != (cell.hidden_size,):
        raise ValueError(
            f"gru_step dims: x {x.shape} / h {h.shape} vs cell "
            f"({cell.input_size}, {cell.hidden_size})"
        )
    z = T.sigmoid(T.matmul(x, cell.w_update) + T.matmul(h, cell.u_update) + cell.b_update)
    r = T.sigmoid(T.matmul(x, cell.w_reset) + T.matmul(h, cell.u_reset) + cell.b_reset)
    cand = T.tanh(T.matmul(x, cell.w_cand) + T.matmul(T.mul(r, h), cell.u_cand) + cell.b_cand)
    return (1.0 - z) * h + z * cand


@dataclass
class EmbeddingBank:
    """Lookup tables for words and (optionally) POS/NER/TF-bin/IDF-bin tags."""

    word: Tensor
    pos: Tensor = None
    ner: Tensor = None
    tf: Tensor = None
    idf: Tensor = None

    def input_width(self, features_on):
        width = self.word.shape[1]
        if features_on:
            width += sum(t.shape[1] for t in (self.pos, self.ner, self.tf, self.idf))
        return width


def embed(example, bank, features_on, length=None):
    """Per-position input vectors: [word | pos | ner | tf | idf] when
    features are on, word embeddings alone otherwise."""
    n = example.doc_len() if length is None else length
    if n < 1:
        raise ValueError("cannot embed an empty document")
    parts = [T.gather_rows(bank.word, example.doc_tokens[:n])]
    if features_on:
        parts.append(T.gather_rows(bank.pos, example.pos_ids[:n]))
        parts.append(T.gather_rows(bank.ner, example.ner_ids[:n]))
        parts.append(T.gather_rows(bank.tf, example.tf_bin[:n]))
        parts.append(T.gather_rows(bank.idf, example.idf_bin[:n]))
    return parts[0] if len(parts) == 1 else T.hstack(parts)


@dataclass
class EncoderStates:
    """Contextual encoder outputs.

    ``word_states`` is (N_d x 2H): forward and backward halves concatenated
    per position. Hierarchical encoding adds per-sentence states (sentence
    GRU output with a positional embedding appended) and the word-position
    to sentence-index map.
    """

    word_states: Tensor
    final_backward: Tensor
    sent_states: Tensor = None
    sent_of_word: list = None


def _run_bidirectional(cell_fwd, cell_bwd, inputs):
    n = inputs.shape[0]
    zero = Tensor(np.zeros(cell_fwd.hidden_size))
    fwd, h = [], zero
    for j in range(n):
        h = gru_step(cell_fwd, T.row(inputs, j), h)
        fwd.append(h)
    bwd, h = [None] * n, Tensor(np.zeros(cell_bwd.hidden_size))
    for j in reversed(range(n)):
        h = gru_step(cell_bwd, T.row(inputs, j), h)
        bwd[j] = h
    return fwd, bwd


def encode_flat(cell_fwd, cell_bwd, inputs):
    """Bidirectional GRU over all positions, both passes zero-initialized."""
    if inputs.ndim != 2 or inputs.shape[0] < 1:
        raise ValueError("encode_flat requires a nonempty (N x d) input matrix")
    fwd, bwd = _run_bidirectional(cell_fwd, cell_bwd, inputs)
    word_states = T.stack_rows([T.concat([f, b]) for f, b in zip(fwd, bwd)])
    return EncoderStates(word_states=word_states, final_backward=bwd[0])


def encode_hierarchical(cell_fwd, cell_bwd, sent_fwd, sent_bwd, pos_table, inputs, sent_ids):
    """Two-level encoding: word bi-GRU plus a sentence-level bi-GRU.

    Each sentence is summarized as [last forward word state | last backward
    word state] within its span; the sentence GRU runs over those vectors
    and every output gets its sentence positional embedding appended.
    Sentences beyond the positional table reuse its last row.
    """
    if inputs.ndim != 2 or inputs.shape[0] < 1:
        raise ValueError("encode_hierarchical requires a nonempty input matrix")
    n = inputs.shape[0]
    if len(sent_ids) < n:
        raise ValueError("sent_ids shorter than the document")
    fwd, bwd = _run_bidirectional(cell_fwd, cell_bwd, inputs)
    word_states = T.stack_rows([T.concat([f, b]) for f, b in zip(fwd, bwd)])

    spans = []  # (first, last) position of each sentence, in order
    for j in range(n):
        s = sent_ids[j]
        if s == len(spans):
            spans.append([j, j])
        elif s == len(spans) - 1:
            spans[-1][1] = j
        else:
            raise ValueError(f"sent_ids not contiguous at position {j}")

    sent_inputs = [T.concat([fwd[last], bwd[first]]) for first, last in spans]
    n_table = pos_table.shape[0]
    if len(spans) > n_table:
        log.warning(
            "document has %d sentences, positional table has %d; extra sentences reuse the last embedding",
            len(spans),
            n_table,
        )

    zero = Tensor(np.zeros(sent_fwd.hidden_size))
    s_fwd, h = [], zero
    for vec in sent_inputs:
        h = gru_step(sent_fwd, vec, h)
        s_fwd.append(h)
    s_bwd, h = [None] * len(spans), Tensor(np.zeros(sent_bwd.hidden_size))
    for k in reversed(range(len(spans))):
        h = gru_step(sent_bwd, sent_inputs[k], h)
        s_bwd[k] = h

    rows = []
    for k in range(len(spans)):
        pos_row = T.row(pos_table, min(k, n_table - 1))
        rows.append(T.concat([s_fwd[k], s_bwd[k], pos_row]))
    return EncoderStates(
        word_states=word_states,
        final_backward=bwd[0],
        sent_states=T.stack_rows(rows),
        sent_of_word=list(sent_ids[:n]),
    )
