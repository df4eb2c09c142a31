"""Differentiable primitives.

Each op computes its value with numpy and, when a tape is active and an
input requires a gradient, records a vector-Jacobian product closure.
Broadcasting is supported where the model needs it (bias adds, scalar
constants, positional tables); gradients are summed back to input shapes
by the tape.
"""
from typing import Optional, Sequence, Union

import numpy as np

from claip_emo.errors import AxisError, LabelError, ShapeError
from claip_emo.numerics.tensor import Tensor, current_tape, get_default_dtype

ArrayLike = Union[Tensor, np.ndarray, float, int]

GELU_COEF = np.sqrt(2.0 / np.pi)
LAYER_NORM_EPS = 1e-5


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else get_default_dtype()
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False)


def _result(data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(output=out, inputs=inputs, vjp=vjp)
    return out


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise AxisError(f"axis {axis} is out of range for a tensor of rank {ndim}")
    return axis % ndim


def _check_broadcast(a: Tensor, b: Tensor, op_name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op_name}: shapes {a.shape} and {b.shape} cannot be broadcast together")


# ARITHMETIC

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a, like=b if isinstance(b, Tensor) else None), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a, like=b if isinstance(b, Tensor) else None), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a, like=b if isinstance(b, Tensor) else None), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "mul")
    a_data, b_data = a.data, b.data
    return _result(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _result(a.data * a.dtype.type(factor), (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes.

    Raises:
        ShapeError: naming both shapes when inner dimensions disagree.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def vjp(g):
        return (np.matmul(g, np.swapaxes(b_data, -1, -2)),
                np.matmul(np.swapaxes(a_data, -1, -2), g))

    return _result(data, (a, b), vjp)


# ACTIVATIONS

def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    inner = GELU_COEF * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        d_inner = GELU_COEF * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)

    return _result(out.astype(a.dtype, copy=False), (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    exp_x = np.exp(x[~pos])
    out[~pos] = exp_x / (1.0 + exp_x)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def dropout(a: Tensor, p: float, train_flag: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: identity in eval, survivors scaled by 1/(1-p) in train."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train_flag or p == 0.0:
        return a
    if rng is None:
        rng = np.random.default_rng()
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / a.dtype.type(1.0 - p)
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


# NORMALISATION / REDUCTIONS

def layer_norm(x: Tensor, weight: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalises over the last axis, then applies the optional affine."""
    d = x.shape[-1]
    if weight is not None and weight.shape != (d,):
        raise ShapeError(f"layer_norm weight shape {weight.shape} does not match feature size {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centred * inv_std
    out = x_hat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    inputs = [x]
    if weight is not None:
        inputs.append(weight)
    if bias is not None:
        inputs.append(bias)
    w_data = weight.data if weight is not None else None

    def vjp(g):
        d_xhat = g * w_data if w_data is not None else g
        dx = (inv_std / d) * (d * d_xhat
                              - d_xhat.sum(axis=-1, keepdims=True)
                              - x_hat * (d_xhat * x_hat).sum(axis=-1, keepdims=True))
        grads = [dx]
        if weight is not None:
            grads.append(g * x_hat)
        if bias is not None:
            grads.append(g)
        return grads

    return _result(out.astype(x.dtype, copy=False), inputs, vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)
    return _result(out, (a,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def sum_(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    if axis is not None:
        axis = _check_axis(axis, a.ndim)
    data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(data, (a,), vjp)


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    if axis is not None:
        axis = _check_axis(axis, a.ndim)
        count = a.shape[axis]
    else:
        count = a.size
    data = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return _result(data, (a,), vjp)


# SHAPE MANIPULATION

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    axis = _check_axis(axis, tensors[0].ndim)
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != axis):
            raise ShapeError(f"concat along axis {axis}: shapes {[t.shape for t in tensors]} disagree")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(data, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def transpose(a: Tensor, axis1: int = -2, axis2: int = -1) -> Tensor:
    """Swaps two axes (the last two by default)."""
    axis1 = _check_axis(axis1, a.ndim)
    axis2 = _check_axis(axis2, a.ndim)
    data = np.swapaxes(a.data, axis1, axis2)
    return _result(np.ascontiguousarray(data), (a,), lambda g: (np.swapaxes(g, axis1, axis2),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}")
    original = a.shape
    return _result(data, (a,), lambda g: (g.reshape(original),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = np.broadcast_to(a.data, tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {tuple(shape)}")
    return _result(np.ascontiguousarray(data), (a,), lambda g: (g,))


def _is_advanced_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray, Tensor)) for p in parts)


def slice_(a: Tensor, index) -> Tensor:
    data = np.asarray(a.data[index])
    shape, dtype = a.shape, a.dtype

    advanced = _is_advanced_index(index)

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _result(np.ascontiguousarray(data), (a,), vjp)


def embedding_add(x: Tensor, table: Tensor) -> Tensor:
    """Adds the first N rows of a positional table to a [..., N, d] tensor."""
    n, d = x.shape[-2], x.shape[-1]
    if table.ndim != 2 or table.shape[1] != d:
        raise ShapeError(f"embedding table {table.shape} does not match token width {d}")
    if table.shape[0] < n:
        raise ShapeError(f"embedding table holds {table.shape[0]} positions, input has {n} tokens")
    rows = table.shape[0]

    def vjp(g):
        summed = g.reshape(-1, n, d).sum(axis=0)
        full = np.zeros((rows, d), dtype=g.dtype)
        full[:n] = summed
        return g, full

    return _result(x.data + table.data[:n], (x, table), vjp)


# LOSS

def cross_entropy(logits: Tensor, labels: Union[np.ndarray, Sequence[int]]) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Computed through a fused log-sum-exp. ``logits`` is [B, K] (or [K] for a
    single sample).

    Raises:
        LabelError: if any label falls outside [0, K).
    """
    squeeze = logits.ndim == 1
    data = logits.data[None, :] if squeeze else logits.data
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    batch, num_classes = data.shape
    if labels.shape != (batch,):
        raise ShapeError(f"cross_entropy got {labels.shape[0]} labels for {batch} rows of logits")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes}), got {labels.tolist()}")
    shifted = data - data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(batch), labels].mean()
    probs = np.exp(log_probs)

    def vjp(g):
        grad = probs.copy()
        grad[np.arange(batch), labels] -= 1.0
        grad = grad * (g / batch)
        return (grad[0] if squeeze else grad,)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), vjp)
