"""Shared test helpers: finite-difference oracle and toy data builders."""

import numpy as np
import pytest

from s2sm import tensor as T


def finite_difference(loss_fn, tensors, *, step=1e-5, n_coords=None, rng=None):
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild the graph from the current contents of
    ``tensors`` on every call and return a scalar Tensor. Returns the worst
    relative error over the checked coordinates. When ``n_coords`` is given,
    a pseudo-random subset of coordinates across all tensors is checked
    (full sweeps otherwise).
    """
    for t in tensors:
        t.zero_grad()
    with T.Tape() as tape:
        loss = loss_fn()
    T.backward(loss, tape)
    analytic = [t.grad.copy() for t in tensors]

    coords = []
    for ti, t in enumerate(tensors):
        for flat in range(t.data.size):
            coords.append((ti, flat))
    if n_coords is not None and n_coords < len(coords):
        if rng is None:
            rng = np.random.default_rng(0)
        chosen = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[int(i)] for i in chosen]

    worst = 0.0
    for ti, flat in coords:
        data = tensors[ti].data.reshape(-1)
        orig = data[flat]
        data[flat] = orig + step
        plus = loss_fn().item()
        data[flat] = orig - step
        minus = loss_fn().item()
        data[flat] = orig
        fd = (plus - minus) / (2.0 * step)
        a = analytic[ti].reshape(-1)[flat]
        denom = max(abs(a), abs(fd))
        if denom < 1e-6:
            # both effectively zero: require agreement in absolute terms
            err = 0.0 if abs(a - fd) < 1e-8 else 1.0
        else:
            err = abs(a - fd) / denom
        worst = max(worst, err)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_config(n_src=20, n_tgt=20, **overrides):
    """Desk-scale model dims for gradient checks and fast training tests."""
    from s2sm.model import ModelConfig

    base = dict(
        n_src_vocab=n_src,
        n_tgt_vocab=n_tgt,
        d_word=8,
        d_pos=2,
        d_ner=2,
        d_tf=2,
        d_idf=2,
        hidden=8,
        d_attn=8,
        d_sent_pos=4,
        max_sentences=8,
        n_pos_tags=7,
        n_ner_tags=2,
        n_bins=4,
    )
    base.update(overrides)
    return ModelConfig(**base)


def toy_example(rng, config, n_doc=9, n_content=3, n_sent=2, pointer_frac=0.5):
    """Random Example consistent with all type invariants."""
    from s2sm.corpus import BOS, EOS, UNK, Example

    doc_tokens = [int(t) for t in rng.integers(4, config.n_src_vocab, size=n_doc)]
    doc_surface = [f"src{i}w{t}" for i, t in enumerate(doc_tokens)]
    cuts = sorted(rng.choice(range(1, n_doc), size=min(n_sent, n_doc) - 1, replace=False))
    sent_ids = []
    sent = 0
    for i in range(n_doc):
        if cuts and i == cuts[0]:
            sent += 1
            cuts = cuts[1:]
        sent_ids.append(sent)
    tokens, surfaces, switch, pointers = [], [], [], []
    for _ in range(n_content):
        if rng.random() < pointer_frac:
            p = int(rng.integers(0, n_doc))
            tokens.append(UNK)
            surfaces.append(doc_surface[p])
            switch.append(0)
            pointers.append(doc_surface.index(doc_surface[p]))  # first occurrence
        else:
            tok = int(rng.integers(4, config.n_tgt_vocab))
            tokens.append(tok)
            surfaces.append(f"gen{tok}")
            switch.append(1)
            pointers.append(-1)
    return Example(
        doc_tokens=doc_tokens,
        doc_surface=doc_surface,
        pos_ids=[int(v) for v in rng.integers(0, config.n_pos_tags, size=n_doc)],
        ner_ids=[int(v) for v in rng.integers(0, config.n_ner_tags, size=n_doc)],
        tf_bin=[int(v) for v in rng.integers(0, config.n_bins, size=n_doc)],
        idf_bin=[int(v) for v in rng.integers(0, config.n_bins, size=n_doc)],
        sent_ids=sent_ids,
        summary_tokens=[BOS] + tokens + [EOS],
        summary_surface=surfaces + ["</s>"],
        switch_targets=switch + [1],
        pointer_targets=pointers + [-1],
    )


VARIANT_FLAGS = {
    "flat": {},
    "features": {"features_on": True},
    "switch": {"switch_on": True},
    "hierarchical": {"hierarchical_on": True},
    "temporal": {"temporal_on": True},
}
