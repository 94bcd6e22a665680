"""Primitive operations and their reverse-mode rules.

Every function accepts ``Tensor`` or array-like constants. The result is
recorded on the tape of the first taped input; with no taped input the
result is a plain constant.
"""

from __future__ import annotations

import numpy as np

from cgmcl.diffcore.tensor import Tape, Tensor
from cgmcl.errors import DimensionError, DomainError, NumericalError

LEAKY_SLOPE = 0.01


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*ts: Tensor) -> Tape | None:
    for t in ts:
        if t.tape is not None:
            return t.tape
    return None


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, rule, kink=None) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite value produced by {op}")
        return Tensor(out)
    for t in inputs:
        if t.tape is not None and t.tape is not tape:
            raise DimensionError(f"{op}: inputs recorded on different tapes")
    return tape.record(op, inputs, out, rule, kink)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _emit("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def transpose(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    return _emit("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def concat(tensors) -> Tensor:
    """Concatenate matrices along the last axis."""
    ts = tuple(_wrap(t) for t in tensors)
    if not ts:
        raise DimensionError("concat of nothing")
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1 or any(t.data.ndim != 2 for t in ts):
        raise DimensionError(f"concat: row mismatch {[t.shape for t in ts]}")
    widths = [t.shape[1] for t in ts]
    cuts = np.cumsum(widths)[:-1]
    out = np.concatenate([t.data for t in ts], axis=1)
    return _emit("concat", ts, out, lambda g: tuple(np.split(g, cuts, axis=1)))


# -- elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("mul", a, b)
    A, B = a.data, b.data
    return _emit("mul", (a, b), A * B,
                 lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _emit("scale", (a,), c * a.data, lambda g: (c * g,))


def square(a) -> Tensor:
    a = _wrap(a)
    A = a.data
    return _emit("square", (a,), A * A, lambda g: (2.0 * A * g,))


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = _wrap(a)
    A = a.data
    if np.any(A <= 0):
        raise DomainError(f"log of non-positive value (min {A.min():.3g})")
    return _emit("log", (a,), np.log(A), lambda g: (g / A,))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = stable_sigmoid(a.data)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = _wrap(a)
    A = a.data
    pos = A > 0
    slope_arr = np.where(pos, 1.0, slope)
    return _emit("leaky_relu", (a,), A * slope_arr, lambda g: (g * slope_arr,),
                 kink=np.sign(A).astype(np.int8))


def maximum(a, c: float) -> Tensor:
    """Elementwise max(a, c) against a constant."""
    a = _wrap(a)
    A = a.data
    active = A > c
    return _emit("maximum", (a,), np.where(active, A, c), lambda g: (g * active,),
                 kink=np.sign(A - c).astype(np.int8))


# -- reductions and normalizations ---------------------------------------------

def row_sum(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DimensionError(f"row_sum expects a matrix, got {a.shape}")
    shape = a.shape
    return _emit("row_sum", (a,), a.data.sum(axis=1, keepdims=True),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def total(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    return _emit("sum", (a,), np.asarray(a.data.sum()),
                 lambda g: (np.full(shape, float(g)),))


def mean(a) -> Tensor:
    a = _wrap(a)
    shape, n = a.shape, a.data.size
    return _emit("mean", (a,), np.asarray(a.data.mean()),
                 lambda g: (np.full(shape, float(g) / n),))


def masked_softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax restricted to ``mask`` (entries outside are exactly 0)."""
    a = _wrap(a)
    A = a.data
    if A.ndim != 2:
        raise DimensionError(f"masked_softmax expects a matrix, got {a.shape}")
    if mask is None:
        mask = np.ones(A.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != A.shape:
        raise DimensionError(f"mask shape {mask.shape} != logits shape {A.shape}")
    if not mask.any(axis=1).all():
        raise DomainError("softmax over an empty row (node without neighbours or self-loop)")
    shifted = np.where(mask, A, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner),)

    return _emit("masked_softmax", (a,), out, rule)


def log_softmax(a) -> Tensor:
    a = _wrap(a)
    A = a.data
    if A.ndim != 2:
        raise DimensionError(f"log_softmax expects a matrix, got {a.shape}")
    shifted = A - A.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return _emit("log_softmax", (a,), out,
                 lambda g: (g - soft * g.sum(axis=1, keepdims=True),))
