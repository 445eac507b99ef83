"""Float64 tensors with tape-based reverse-mode automatic differentiation.

The operation set is deliberately small: dense matrix/vector products,
elementwise nonlinearities, gather/concat plumbing, and a masked softmax.
That is enough to express bidirectional GRU encoders, additive attention,
switching generator-pointer decoders and their losses, while keeping every
backward rule simple enough to verify against central finite differences.

Shapes are never broadcast, with one exception: adding a vector to each row
of a matrix (bias addition). Everything is float64 throughout; gradient
checks at 1e-4 relative tolerance are not reliably attainable in float32.

The graph is define-by-run: ops executed while a ``Tape`` is active are
recorded in execution order, and ``backward`` replays the record in exact
reverse. Ops executed with no active tape (decoding) are plain numpy.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "dot",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "softmax",
    "normalize",
    "tsum",
    "concat",
    "hstack",
    "stack_rows",
    "row",
    "pick",
    "gather",
    "gather_rows",
]

_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array participating in tape-recorded differentiation.

    ``grad`` is allocated (zeros) for any tensor created with
    ``requires_grad=True`` and for recorded op outputs whose inputs require
    gradients. ``backward`` accumulates into ``grad`` without resetting, so
    two backward passes over the same tape yield exactly twice the single
    pass gradient.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars (int/float) are treated as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Execution-ordered record of differentiable operations.

    Usable as a context manager; ops run inside the ``with`` block are
    recorded. Tapes nest (the innermost active tape records).
    """

    def __init__(self):
        self._entries = []  # (inputs tuple, output, backward fn)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._entries)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(inputs, out_data, backward_fn):
    """Create the output tensor and record the op on the active tape."""
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out.grad = np.zeros_like(out.data)
        tape._entries.append((inputs, out, backward_fn))
    return out


def backward(loss, tape):
    """Populate gradients of ``loss`` w.r.t. every tensor recorded on ``tape``.

    ``loss`` must be a scalar produced by ops recorded on ``tape``. After the
    call, every requires_grad tensor reachable from the loss holds its
    accumulated gradient; requires_grad tensors never touched by the tape
    keep their zero buffer.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    # Per-call flow accumulators keep repeated backward() calls additive:
    # intermediates are recomputed from scratch, leaves receive += at the end.
    flow = {id(loss): np.ones((), dtype=np.float64)}
    holders = {id(loss): loss}
    for inputs, out, backward_fn in reversed(tape._entries):
        out_grad = flow.get(id(out))
        if out_grad is None:
            continue
        local_grads = backward_fn(out_grad)
        for tens, local in zip(inputs, local_grads):
            if local is None:
                continue
            acc = flow.get(id(tens))
            if acc is None:
                flow[id(tens)] = np.array(local, dtype=np.float64)
                holders[id(tens)] = tens
            else:
                acc += local
    for key, tens in holders.items():
        if tens.requires_grad:
            tens.grad += flow[key]


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        const = float(b)
        return _emit((a,), a.data + const, lambda g: (g,))
    b = _as_tensor(b)
    if a.data.shape == b.data.shape:
        return _emit((a, b), a.data + b.data, lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        # bias vector added to every row
        return _emit((a, b), a.data + b.data, lambda g: (g, g.sum(axis=0)))
    raise ValueError(f"add shape mismatch: {a.data.shape} + {b.data.shape}")


def sub(a, b):
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        const = float(b)
        return _emit((a,), a.data - const, lambda g: (g,))
    b = _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.data.shape} - {b.data.shape}")
    return _emit((a, b), a.data - b.data, lambda g: (g, -g))


def mul(a, b):
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        const = float(b)
        return _emit((a,), a.data * const, lambda g: (g * const,))
    b = _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} * {b.data.shape}")
    ad, bd = a.data, b.data
    return _emit((a, b), ad * bd, lambda g: (g * bd, g * ad))


def div(a, b):
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        const = float(b)
        return _emit((a,), a.data / const, lambda g: (g / const,))
    b = _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"div shape mismatch: {a.data.shape} / {b.data.shape}")
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit((a, b), out, lambda g: (g / bd, -g * ad / (bd * bd)))


def neg(a):
    a = _as_tensor(a)
    return _emit((a,), -a.data, lambda g: (-g,))


def matmul(a, b):
    """Matrix/vector product for 1-D and 2-D operands (no batching)."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1-D/2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

    def backward_fn(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g * bd, g * ad  # 1-D @ 1-D -> scalar

    return _emit((a, b), ad @ bd, backward_fn)


def dot(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError(f"dot requires 1-D operands, got {a.data.shape} · {b.data.shape}")
    return matmul(a, b)


def tsum(a):
    """Sum of all elements, as a scalar tensor."""
    a = _as_tensor(a)
    shape = a.data.shape
    return _emit((a,), a.data.sum(), lambda g: (np.full(shape, g, dtype=np.float64),))


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _emit((a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    """Elementwise logistic function, overflow-safe on both tails."""
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit((a,), out, lambda g: (g * out * (1.0 - out),))


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _emit((a,), out, lambda g: (g * out,))


def log(a, floor=0.0):
    """Natural log; with ``floor > 0`` the input is clamped from below.

    In the clamped region the output is constant log(floor), so the
    gradient there is zero.
    """
    a = _as_tensor(a)
    x = a.data
    clamped = np.maximum(x, floor) if floor > 0.0 else x
    out = np.log(clamped)
    active = x > floor if floor > 0.0 else np.ones_like(x, dtype=bool)
    return _emit((a,), out, lambda g: (np.where(active, g / np.maximum(x, floor), 0.0),))


def softmax(x, mask=None):
    """Stable softmax over a 1-D tensor; masked positions get exactly 0.

    ``mask`` is a boolean array where True marks positions that participate.
    Raises if every position is masked.
    """
    x = _as_tensor(x)
    if x.data.ndim != 1 or x.data.shape[0] < 1:
        raise ValueError(f"softmax expects a nonempty vector, got shape {x.data.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.data.shape:
            raise ValueError(f"softmax mask shape {mask.shape} != input shape {x.data.shape}")
        if not mask.any():
            raise ValueError("softmax: all positions masked")
        shifted = x.data - x.data[mask].max()
        e = np.exp(shifted)
        e[~mask] = 0.0
    else:
        e = np.exp(x.data - x.data.max())
    out = e / e.sum()

    def backward_fn(g):
        return (out * (g - float(g @ out)),)

    return _emit((x,), out, backward_fn)


def normalize(x):
    """x / sum(x) for a 1-D tensor with positive sum."""
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise ValueError(f"normalize expects a vector, got shape {x.data.shape}")
    total = x.data.sum()
    if not total > 0.0:
        raise ValueError("normalize: nonpositive mass")
    out = x.data / total

    def backward_fn(g):
        return ((g - float(g @ out)) / total,)

    return _emit((x,), out, backward_fn)


# ---------------------------------------------------------------------------
# shape plumbing


def concat(tensors):
    """Concatenate 1-D tensors into one vector."""
    tensors = tuple(_as_tensor(t) for t in tensors)
    for t in tensors:
        if t.data.ndim != 1:
            raise ValueError(f"concat expects vectors, got shape {t.data.shape}")
    sizes = [t.data.shape[0] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors])
    return _emit(tensors, out, lambda g: tuple(np.split(g, splits)))


def hstack(tensors):
    """Concatenate 2-D tensors along columns (same row count)."""
    tensors = tuple(_as_tensor(t) for t in tensors)
    rows = tensors[0].data.shape[0]
    for t in tensors:
        if t.data.ndim != 2 or t.data.shape[0] != rows:
            raise ValueError("hstack expects 2-D tensors with equal row counts")
    widths = [t.data.shape[1] for t in tensors]
    splits = np.cumsum(widths)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=1)
    return _emit(tensors, out, lambda g: tuple(np.split(g, splits, axis=1)))


def stack_rows(tensors):
    """Stack equal-length 1-D tensors into a matrix, one per row."""
    tensors = tuple(_as_tensor(t) for t in tensors)
    width = tensors[0].data.shape[0]
    for t in tensors:
        if t.data.ndim != 1 or t.data.shape[0] != width:
            raise ValueError("stack_rows expects equal-length vectors")
    out = np.stack([t.data for t in tensors])
    return _emit(tensors, out, lambda g: tuple(g[i] for i in range(len(tensors))))


def row(a, i):
    """Row ``i`` of a matrix as a vector."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"row expects a matrix, got shape {a.data.shape}")
    n = a.data.shape[0]
    if not 0 <= i < n:
        raise ValueError(f"row index {i} out of bounds for {n} rows")
    shape = a.data.shape

    def backward_fn(g):
        full = np.zeros(shape)
        full[i] = g
        return (full,)

    return _emit((a,), a.data[i].copy(), backward_fn)


def pick(a, i):
    """Element ``i`` of a vector as a scalar tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise ValueError(f"pick expects a vector, got shape {a.data.shape}")
    n = a.data.shape[0]
    if not 0 <= i < n:
        raise ValueError(f"pick index {i} out of bounds for length {n}")

    def backward_fn(g):
        full = np.zeros(n)
        full[i] = g
        return (full,)

    return _emit((a,), np.float64(a.data[i]), backward_fn)


def gather(a, indices):
    """Vector elements at ``indices``; duplicates accumulate in backward."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise ValueError(f"gather expects a vector, got shape {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    n = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"gather index out of bounds for length {n}")

    def backward_fn(g):
        full = np.zeros(n)
        np.add.at(full, idx, g)
        return (full,)

    return _emit((a,), a.data[idx], backward_fn)


def gather_rows(a, indices):
    """Matrix rows at ``indices`` (embedding lookup); scatter-add backward."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"gather_rows expects a matrix, got shape {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    n = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = int(np.argmax((idx < 0) | (idx >= n)))
        raise ValueError(
            f"gather_rows id {int(idx[bad])} at position {bad} out of bounds for {n} rows"
        )
    shape = a.data.shape

    def backward_fn(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _emit((a,), a.data[idx], backward_fn)
