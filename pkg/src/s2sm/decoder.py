"""Decoder step: LVT-restricted generator softmax and the switching
generator-pointer head.

Per step, attention over the encoder states (flat, hierarchical or
temporal) produces a context vector; the GRU consumes [prev-emission
embedding | context]; the generator softmax normalizes over the restricted
LVT vocabulary rows only; the switch is a sigmoid over the full step
context and the pointer distribution is the word-position attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import (
    attend_flat,
    attend_sentence,
    attention_scores,
    rescale_hierarchical,
    temporal_rescale,
)
from .corpus import UNK
from .encoder import gru_step
from .tensor import Tensor


@dataclass
class SwitchParams:
    """Generate-vs-point gate: sigmoid(v . (W_h h + W_e e + W_c c + b))."""

    state_proj: Tensor
    emb_proj: Tensor
    context_proj: Tensor
    bias: Tensor
    score: Tensor


def switch_probability(h, e_prev, context, params):
    """Probability of generating (switch on) at this step, strictly in (0, 1)."""
    inner = (
        T.matmul(h, params.state_proj)
        + T.matmul(e_prev, params.emb_proj)
        + T.matmul(context, params.context_proj)
        + params.bias
    )
    return T.sigmoid(T.dot(params.score, inner))


def pointer_distribution(h_prev, e_prev, word_states, attn_params, memory=None):
    """Attention weights over source positions, used as the pointer."""
    weights, _ = attend_flat(attn_params, h_prev, e_prev, word_states, memory)
    return weights


class LvtVocab:
    """Sorted restricted-vocabulary ids plus the id -> local-row map."""

    def __init__(self, ids):
        self.ids = np.asarray(sorted(ids), dtype=np.intp)
        if self.ids.size == 0:
            raise ValueError("LVT vocabulary must not be empty")
        self.index = {int(tok): i for i, tok in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def mask_excluding(self, excluded_ids):
        """Boolean keep-mask over local rows, or None when nothing is excluded."""
        if not excluded_ids:
            return None
        mask = np.ones(len(self.ids), dtype=bool)
        hit = False
        for tok in excluded_ids:
            i = self.index.get(int(tok))
            if i is not None:
                mask[i] = False
                hit = True
        return mask if hit else None


class OutputLayerCounter:
    """Instrumentation: multiplications spent in the generator output layer."""

    def __init__(self):
        self.rows = 0
        self.mults = 0

    def add(self, rows, width):
        self.rows += rows
        self.mults += rows * width

    def reset(self):
        self.rows = 0
        self.mults = 0


output_layer_ops = OutputLayerCounter()


@dataclass
class DecoderStep:
    """Immutable snapshot of one decoder time step."""

    h: Tensor
    context: Tensor
    gen_dist: Tensor  # over lvt.ids rows
    lvt: LvtVocab
    attn_weights: Tensor  # word-position attention used for the context
    switch_prob: Tensor = None
    ptr_dist: Tensor = None


def decode_step(
    params,
    config,
    h_prev,
    e_prev,
    enc,
    lvt,
    *,
    trace=None,
    word_memory=None,
    sent_memory=None,
    ptr_memory=None,
    excluded_ids=(),
):
    """Run one decoder step.

    ``word_memory``/``sent_memory``/``ptr_memory`` carry precomputed encoder
    projections (step-invariant). ``excluded_ids`` are vocabulary ids masked
    out of the generator softmax (decode-time structural masking).
    """
    scores = attention_scores(params.attn_word, h_prev, e_prev, enc.word_states, word_memory)
    if config.temporal_on:
        alpha_raw = T.exp(trace.shift(scores))
        weights = temporal_rescale(alpha_raw, trace)
    elif config.hierarchical_on:
        word_w = T.softmax(scores)
        sent_w = attend_sentence(params.attn_sent, h_prev, e_prev, enc.sent_states, sent_memory)
        weights = rescale_hierarchical(word_w, sent_w, enc.sent_of_word)
    else:
        weights = T.softmax(scores)
    context = T.matmul(weights, enc.word_states)

    h = gru_step(params.dec_cell, T.concat([e_prev, context]), h_prev)

    readout = T.concat([h, context])
    rows = T.gather_rows(params.out_w, lvt.ids)
    logits = T.add(T.matmul(rows, readout), T.gather(params.out_b, lvt.ids))
    output_layer_ops.add(len(lvt), readout.shape[0])
    gen_dist = T.softmax(logits, mask=lvt.mask_excluding(excluded_ids))

    switch_p = ptr = None
    if config.switch_on:
        switch_p = switch_probability(h, e_prev, context, params.switch)
        if params.attn_ptr is not None:
            ptr = pointer_distribution(h_prev, e_prev, enc.word_states, params.attn_ptr, ptr_memory)
        else:
            ptr = weights
    return DecoderStep(
        h=h,
        context=context,
        gen_dist=gen_dist,
        lvt=lvt,
        attn_weights=weights,
        switch_prob=switch_p,
        ptr_dist=ptr,
    )


LOG_FLOOR = 1e-12


def step_loss(step, target_id, g, pointer_target=-1):
    """Negative log-likelihood of one step under the mixed objective.

    g=1: -(log gen[target] + log switch); g=0: -(log ptr[p] + log(1-switch)).
    Without a switch head the loss is the plain generator NLL. Logs are
    floored at ln(1e-12), keeping every loss finite.
    """
    if g not in (0, 1):
        raise ValueError(f"switch target must be 0 or 1, got {g}")
    if g == 1:
        local = step.lvt.index.get(int(target_id))
        if local is None:
            raise ValueError(
                f"generator target id {target_id} outside the LVT vocabulary; "
                "map out-of-set targets to UNK upstream"
            )
        gen_term = T.log(T.pick(step.gen_dist, local), floor=LOG_FLOOR)
        if step.switch_prob is None:
            return T.neg(gen_term)
        return T.neg(gen_term + T.log(step.switch_prob, floor=LOG_FLOOR))
    if step.ptr_dist is None:
        raise ValueError("pointer-supervised step in a model without a switch head")
    n = step.ptr_dist.shape[0]
    if not 0 <= pointer_target < n:
        raise ValueError(f"pointer target {pointer_target} out of range for {n} positions")
    ptr_term = T.log(T.pick(step.ptr_dist, pointer_target), floor=LOG_FLOOR)
    return T.neg(ptr_term + T.log(1.0 - step.switch_prob, floor=LOG_FLOOR))


@dataclass
class EmitResult:
    surface: str
    token_id: int  # decoder-vocab id of the emitted token (UNK for OOV copies)
    pointer: int = None  # source position when the pointer fired
    src_token_id: int = None  # source-vocab id backing the feedback embedding


def emit(step, example, tgt_vocab):
    """Greedy emission: argmax over the generate/point branch posteriors.

    The generator branch scores switch * max gen, the pointer branch
    (1 - switch) * max ptr; the winner emits. Pointed tokens copy the
    source surface verbatim (even if out of every vocabulary) and feed the
    source-side embedding into the next step.
    """
    gen_local = int(np.argmax(step.gen_dist.data))
    gen_id = int(step.lvt.ids[gen_local])
    if step.switch_prob is None:
        return EmitResult(surface=tgt_vocab.token(gen_id), token_id=gen_id)
    s = step.switch_prob.item()
    ptr_j = int(np.argmax(step.ptr_dist.data))
    if s * float(step.gen_dist.data[gen_local]) >= (1.0 - s) * float(step.ptr_dist.data[ptr_j]):
        return EmitResult(surface=tgt_vocab.token(gen_id), token_id=gen_id)
    surface = example.doc_surface[ptr_j]
    return EmitResult(
        surface=surface,
        token_id=tgt_vocab.id(surface),
        pointer=ptr_j,
        src_token_id=example.doc_tokens[ptr_j],
    )
