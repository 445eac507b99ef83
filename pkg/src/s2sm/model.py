"""Model assembly: configuration, parameter collection, sequence loss.

Ties the encoder, attention and decoder modules into one trainable model.
The decoder's initial state is a learned tanh bridge from the final
backward encoder state. Teacher forcing follows the supervision: after a
pointed target the next input embedding is the source-side embedding of
the pointed word, otherwise the target-side embedding of the previous
summary token.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .attention import AttentionParams, AttentionTrace, project_memory
from .corpus import BOS, UNK
from .decoder import LvtVocab, SwitchParams, decode_step, step_loss
from .encoder import EmbeddingBank, GruCell, embed, encode_flat, encode_hierarchical
from .tensor import Tensor


@dataclass
class ModelConfig:
    """Dimensions and mode flags for one model configuration."""

    n_src_vocab: int
    n_tgt_vocab: int
    d_word: int = 100
    d_pos: int = 20
    d_ner: int = 15
    d_tf: int = 10
    d_idf: int = 10
    hidden: int = 200
    d_attn: int = 0  # 0 -> same as hidden
    d_sent_pos: int = 16
    max_sentences: int = 64
    n_pos_tags: int = 7
    n_ner_tags: int = 2
    n_bins: int = 10
    features_on: bool = False
    switch_on: bool = False
    hierarchical_on: bool = False
    temporal_on: bool = False
    pointer_shared: bool = True
    switch_l2: float = 0.0

    def __post_init__(self):
        if self.d_attn == 0:
            self.d_attn = self.hidden
        if self.hierarchical_on and self.temporal_on:
            raise ValueError("hierarchical and temporal attention are mutually exclusive modes")

    @property
    def input_width(self):
        if self.features_on:
            return self.d_word + self.d_pos + self.d_ner + self.d_tf + self.d_idf
        return self.d_word

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelParams:
    """Every learnable tensor of one configured model, with stable names."""

    src_bank: EmbeddingBank
    tgt_embed: Tensor
    enc_fwd: GruCell
    enc_bwd: GruCell
    bridge_w: Tensor
    bridge_b: Tensor
    attn_word: AttentionParams
    dec_cell: GruCell
    out_w: Tensor
    out_b: Tensor
    sent_fwd: GruCell = None
    sent_bwd: GruCell = None
    sent_pos: Tensor = None
    attn_sent: AttentionParams = None
    attn_ptr: AttentionParams = None
    switch: SwitchParams = None

    def named_tensors(self):
        """Deterministic (name, tensor) walk over all learnable tensors."""
        out = [("src_embed.word", self.src_bank.word)]
        for tag in ("pos", "ner", "tf", "idf"):
            tens = getattr(self.src_bank, tag)
            if tens is not None:
                out.append((f"src_embed.{tag}", tens))
        out.append(("tgt_embed", self.tgt_embed))
        for label, cell in (
            ("enc_fwd", self.enc_fwd),
            ("enc_bwd", self.enc_bwd),
            ("sent_fwd", self.sent_fwd),
            ("sent_bwd", self.sent_bwd),
            ("dec_cell", self.dec_cell),
        ):
            if cell is None:
                continue
            for attr in (
                "w_update",
                "u_update",
                "b_update",
                "w_reset",
                "u_reset",
                "b_reset",
                "w_cand",
                "u_cand",
                "b_cand",
            ):
                out.append((f"{label}.{attr}", getattr(cell, attr)))
        if self.sent_pos is not None:
            out.append(("sent_pos", self.sent_pos))
        out.extend([("bridge.w", self.bridge_w), ("bridge.b", self.bridge_b)])
        for label, attn in (
            ("attn_word", self.attn_word),
            ("attn_sent", self.attn_sent),
            ("attn_ptr", self.attn_ptr),
        ):
            if attn is None:
                continue
            for attr in ("state_proj", "emb_proj", "memory_proj", "bias", "score"):
                out.append((f"{label}.{attr}", getattr(attn, attr)))
        if self.switch is not None:
            for attr in ("state_proj", "emb_proj", "context_proj", "bias", "score"):
                out.append((f"switch.{attr}", getattr(self.switch, attr)))
        out.extend([("out.w", self.out_w), ("out.b", self.out_b)])
        return out

    def switch_tensors(self):
        return [t for name, t in self.named_tensors() if name.startswith("switch.")]

    def zero_grads(self):
        for _, t in self.named_tensors():
            t.zero_grad()

    def all_finite(self):
        return all(np.isfinite(t.data).all() for _, t in self.named_tensors())

    def clone_data(self):
        """Snapshot of parameter values, keyed by name."""
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_data(self, snapshot):
        for name, t in self.named_tensors():
            t.data[...] = snapshot[name]


def build_params(config, seed):
    """Initialize all parameters: uniform(-0.1, 0.1) matrices, zero biases."""
    rng = np.random.default_rng(seed)

    def mat(*shape):
        return Tensor(rng.uniform(-0.1, 0.1, size=shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def cell(d_in, d_hidden):
        return GruCell(
            w_update=mat(d_in, d_hidden),
            u_update=mat(d_hidden, d_hidden),
            b_update=zeros(d_hidden),
            w_reset=mat(d_in, d_hidden),
            u_reset=mat(d_hidden, d_hidden),
            b_reset=zeros(d_hidden),
            w_cand=mat(d_in, d_hidden),
            u_cand=mat(d_hidden, d_hidden),
            b_cand=zeros(d_hidden),
        )

    def attn(d_state, d_emb, d_mem):
        return AttentionParams(
            state_proj=mat(d_state, config.d_attn),
            emb_proj=mat(d_emb, config.d_attn),
            memory_proj=mat(d_mem, config.d_attn),
            bias=zeros(config.d_attn),
            score=mat(config.d_attn),
        )

    h = config.hidden
    bank = EmbeddingBank(
        word=mat(config.n_src_vocab, config.d_word),
        pos=mat(config.n_pos_tags, config.d_pos) if config.features_on else None,
        ner=mat(config.n_ner_tags, config.d_ner) if config.features_on else None,
        tf=mat(config.n_bins, config.d_tf) if config.features_on else None,
        idf=mat(config.n_bins, config.d_idf) if config.features_on else None,
    )
    params = ModelParams(
        src_bank=bank,
        tgt_embed=mat(config.n_tgt_vocab, config.d_word),
        enc_fwd=cell(config.input_width, h),
        enc_bwd=cell(config.input_width, h),
        bridge_w=mat(h, h),
        bridge_b=zeros(h),
        attn_word=attn(h, config.d_word, 2 * h),
        dec_cell=cell(config.d_word + 2 * h, h),
        out_w=mat(config.n_tgt_vocab, 3 * h),
        out_b=zeros(config.n_tgt_vocab),
    )
    if config.hierarchical_on:
        params.sent_fwd = cell(2 * h, h)
        params.sent_bwd = cell(2 * h, h)
        params.sent_pos = mat(config.max_sentences, config.d_sent_pos)
        params.attn_sent = attn(h, config.d_word, 2 * h + config.d_sent_pos)
    if config.switch_on:
        params.switch = SwitchParams(
            state_proj=mat(h, config.d_attn),
            emb_proj=mat(config.d_word, config.d_attn),
            context_proj=mat(2 * h, config.d_attn),
            bias=zeros(config.d_attn),
            score=mat(config.d_attn),
        )
        if not config.pointer_shared:
            params.attn_ptr = attn(h, config.d_word, 2 * h)
    return params


def full_lvt(config):
    return LvtVocab(range(config.n_tgt_vocab))


def encode_example(params, config, example):
    """Embed and encode one (possibly padded) example at its true length."""
    length = example.doc_len()
    inputs = embed(example, params.src_bank, config.features_on, length)
    if config.hierarchical_on:
        return encode_hierarchical(
            params.enc_fwd,
            params.enc_bwd,
            params.sent_fwd,
            params.sent_bwd,
            params.sent_pos,
            inputs,
            example.sent_ids[:length],
        )
    return encode_flat(params.enc_fwd, params.enc_bwd, inputs)


def initial_decoder_state(params, enc):
    return T.tanh(T.matmul(enc.final_backward, params.bridge_w) + params.bridge_b)


def prev_embedding(params, config, example, i):
    """Teacher-forced previous-emission embedding for step i (0-based)."""
    if i == 0:
        return T.row(params.tgt_embed, BOS)
    if config.switch_on and example.switch_targets[i - 1] == 0:
        src_id = example.doc_tokens[example.pointer_targets[i - 1]]
        return T.row(params.src_bank.word, src_id)
    return T.row(params.tgt_embed, example.summary_tokens[i])


@dataclass
class SequenceResult:
    loss: Tensor  # summed step losses
    n_targets: int
    switch_probs: list = field(default_factory=list)  # (g, value) per step


class StepContext:
    """Per-sequence cached encoder projections plus temporal trace."""

    def __init__(self, params, config, enc):
        self.enc = enc
        self.word_memory = project_memory(params.attn_word, enc.word_states)
        self.sent_memory = (
            project_memory(params.attn_sent, enc.sent_states) if config.hierarchical_on else None
        )
        self.ptr_memory = (
            project_memory(params.attn_ptr, enc.word_states)
            if params.attn_ptr is not None
            else None
        )
        self.trace = AttentionTrace() if config.temporal_on else None


def run_step(params, config, ctx, h_prev, e_prev, lvt, excluded_ids=()):
    return decode_step(
        params,
        config,
        h_prev,
        e_prev,
        ctx.enc,
        lvt,
        trace=ctx.trace,
        word_memory=ctx.word_memory,
        sent_memory=ctx.sent_memory,
        ptr_memory=ctx.ptr_memory,
        excluded_ids=excluded_ids,
    )


def sequence_loss(params, config, example, lvt):
    """Teacher-forced summed loss over all targets of one example.

    Targets outside the LVT set train as UNK. Without a switch head every
    step is generator-supervised regardless of the pointer annotations.
    """
    enc = encode_example(params, config, example)
    ctx = StepContext(params, config, enc)
    h = initial_decoder_state(params, enc)
    n = example.target_len()
    result = SequenceResult(loss=None, n_targets=n)
    for i in range(n):
        e_prev = prev_embedding(params, config, example, i)
        step = run_step(params, config, ctx, h, e_prev, lvt)
        target = example.summary_tokens[i + 1]
        if config.switch_on:
            g = example.switch_targets[i]
            p = example.pointer_targets[i]
        else:
            g, p = 1, -1
        if g == 1 and target not in lvt.index:
            target = UNK
        loss_i = step_loss(step, target, g, p)
        result.loss = loss_i if result.loss is None else T.add(result.loss, loss_i)
        if step.switch_prob is not None:
            result.switch_probs.append((g, step.switch_prob.item()))
        h = step.h
    return result


def forced_steps(params, config, example, lvt):
    """Teacher-forced decoder steps for inspection (no loss)."""
    enc = encode_example(params, config, example)
    ctx = StepContext(params, config, enc)
    h = initial_decoder_state(params, enc)
    steps = []
    for i in range(example.target_len()):
        e_prev = prev_embedding(params, config, example, i)
        step = run_step(params, config, ctx, h, e_prev, lvt)
        steps.append(step)
        h = step.h
    return steps
