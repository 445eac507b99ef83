"""Attentional encoder-decoder summarization engine.

Numpy-backed implementation of a GRU encoder-decoder summarizer with a
large-vocabulary-trick softmax, a feature-rich encoder, a switching
generator-pointer head, hierarchical word/sentence attention and temporal
attention, plus training, beam-search decoding and ROUGE evaluation.
"""

__version__ = "0.1.0"

from .tensor import Tape, Tensor, backward

__all__ = ["Tape", "Tensor", "backward", "__version__"]
