"""Attention over source positions: flat, hierarchical rescaling, temporal.

The scorer is additive without a squashing nonlinearity: position j gets
score(j) = v . (W_h h_prev + W_e e_prev + W_c state_j + b), and attention
weights are the softmax of the scores. Hierarchical mode re-weights word
attention by sentence attention and renormalizes; temporal mode divides
raw (exponentiated, unnormalized) scores by their running sum over past
decoder steps before normalizing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class AttentionParams:
    """Additive-attention parameters; all projections end in the scoring dim."""

    state_proj: Tensor  # decoder state -> score space
    emb_proj: Tensor  # previous-emission embedding -> score space
    memory_proj: Tensor  # encoder state -> score space
    bias: Tensor
    score: Tensor  # scoring vector


def project_memory(params, states):
    """Precompute W_c @ state_j for every position (step-invariant)."""
    return T.matmul(states, params.memory_proj)


def attention_scores(params, h_prev, e_prev, states=None, memory=None):
    """Unnormalized scores over positions; ``memory`` may carry the
    precomputed encoder projection."""
    if memory is None:
        memory = project_memory(params, states)
    base = T.matmul(h_prev, params.state_proj) + T.matmul(e_prev, params.emb_proj) + params.bias
    return T.matmul(T.add(memory, base), params.score)


def attend_flat(params, h_prev, e_prev, word_states, memory=None):
    """Softmax attention weights and the attention-weighted context vector."""
    weights = T.softmax(attention_scores(params, h_prev, e_prev, word_states, memory))
    context = T.matmul(weights, word_states)
    return weights, context


def attend_sentence(params, h_prev, e_prev, sent_states, memory=None):
    """Sentence-level attention weights (own parameter set over sentence states)."""
    return T.softmax(attention_scores(params, h_prev, e_prev, sent_states, memory))


def rescale_hierarchical(word_weights, sent_weights, sent_of_word):
    """P(j) = P_w(j) P_s(s(j)) / sum_k P_w(k) P_s(s(k))."""
    products = T.mul(word_weights, T.gather(sent_weights, sent_of_word))
    if products.data.sum() <= 0.0:
        raise ValueError("degenerate hierarchical attention: all word/sentence products are zero")
    return T.normalize(products)


class AttentionTrace:
    """Per-decode-sequence record of raw attention for temporal rescaling.

    Holds the unnormalized (exponentiated) weights of each past step and
    their running sum; the running sum is treated as all-ones before the
    first step. Also pins the per-sequence score shift that keeps the
    exponentials in range (a common shift cancels exactly in the
    rescale-then-normalize arithmetic).
    """

    def __init__(self):
        self.raw = []
        self._beta = None
        self.score_shift = None

    def shift(self, scores):
        if self.score_shift is None:
            self.score_shift = float(scores.data.max())
        return T.sub(scores, self.score_shift)

    def beta(self, n):
        """Running sum of past raw weights; all-ones at the first step."""
        if self._beta is None:
            return Tensor(np.ones(n))
        return self._beta

    def append(self, alpha_raw):
        self.raw.append(alpha_raw)
        self._beta = alpha_raw if self._beta is None else T.add(self._beta, alpha_raw)

    def copy(self):
        dup = AttentionTrace()
        dup.raw = list(self.raw)
        dup._beta = self._beta
        dup.score_shift = self.score_shift
        return dup

    def __len__(self):
        return len(self.raw)


def temporal_rescale(alpha_raw, trace):
    """Down-weight positions already attended: normalize(alpha / beta).

    ``alpha_raw`` must be elementwise positive (exponentiated scores). The
    trace is updated with ``alpha_raw`` after the rescale, so the division
    at each step sees only strictly earlier steps.
    """
    if (alpha_raw.data <= 0).any():
        raise ValueError("temporal_rescale requires elementwise positive raw weights")
    beta = trace.beta(alpha_raw.shape[0])
    rescaled = T.normalize(T.div(alpha_raw, beta))
    trace.append(alpha_raw)
    return rescaled
