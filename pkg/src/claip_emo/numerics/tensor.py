"""Dense tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` while one is open
(``with Tape() as tape:``) and at least one input requires a gradient.
``tape.backward(loss)`` then replays the recorded adjoints in reverse order.
Outside a tape every operation computes values only.
"""
import threading
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from claip_emo.errors import TapeError

_tape_state = threading.local()
# copied into worker threads by claip_emo.parallel.run_jobs
_default_dtype: ContextVar = ContextVar("claip_default_dtype", default=np.float32)


def get_default_dtype():
    return _default_dtype.get()


def set_default_dtype(dtype) -> None:
    """Sets the dtype for the current context and the jobs it starts."""
    _default_dtype.set(np.dtype(dtype).type)


@contextmanager
def default_dtype(dtype):
    """Temporarily switches the dtype new tensors and parameters are built in.

    float64 is used for gradient checks, float32 everywhere else.
    """
    token = _default_dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _default_dtype.reset(token)


def current_tape() -> Optional["Tape"]:
    stack = getattr(_tape_state, "stack", None)
    if not stack:
        return None
    return stack[-1]


class Tensor:
    """A numpy buffer plus an optional gradient buffer of the same shape."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = get_default_dtype()
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    # operators delegate to ops, imported lazily to avoid a cycle
    def __add__(self, other):
        from claip_emo.numerics import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from claip_emo.numerics import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from claip_emo.numerics import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from claip_emo.numerics import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from claip_emo.numerics import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from claip_emo.numerics import ops
        return ops.mul(other, self)

    def __neg__(self):
        from claip_emo.numerics import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from claip_emo.numerics import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from claip_emo.numerics import ops
        return ops.slice_(self, index)

    @property
    def T(self):
        from claip_emo.numerics import ops
        return ops.transpose(self)

    def reshape(self, *shape):
        from claip_emo.numerics import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from claip_emo.numerics import ops
        return ops.sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from claip_emo.numerics import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def unbroadcast(grad: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Sums a broadcast gradient back down to ``shape``."""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class _Record:
    __slots__ = ("output", "inputs", "vjp")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor],
                 vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.output = output
        self.inputs = tuple(inputs)
        self.vjp = vjp


class Tape:
    """Ordered record of differentiable primitives for one forward pass.

    A tape is single-use: ``backward`` consumes it. Tapes are thread-local,
    so independent forwards may run on independent threads.
    """

    def __init__(self):
        self._records: List[_Record] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_tape_state, "stack", None)
        if stack is None:
            stack = []
            _tape_state.stack = stack
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _tape_state.stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, output: Tensor, inputs: Sequence[Tensor], vjp) -> None:
        if self._consumed:
            raise TapeError("cannot record on a tape that has already been differentiated; "
                            "open a new Tape for the next forward pass")
        output._tape = self
        self._records.append(_Record(output=output, inputs=inputs, vjp=vjp))

    def backward(self, loss: Tensor) -> None:
        """Populates ``.grad`` on every requires_grad tensor reachable from loss.

        Raises:
            TapeError: if loss is not a scalar, was not produced on this tape,
                or the tape was already differentiated.
        """
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise TapeError("backward called twice on the same tape; re-run the forward pass first")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape, or does not depend on any "
                            "tensor with requires_grad=True")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for record in reversed(self._records):
            out_grad = record.output.grad
            if out_grad is None:
                continue
            input_grads = record.vjp(out_grad)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                grad = unbroadcast(np.asarray(grad), tensor.shape).astype(tensor.dtype, copy=False)
                if tensor.grad is None:
                    tensor.grad = np.array(grad, copy=True)
                else:
                    tensor.grad = tensor.grad + grad


def backward(loss: Tensor) -> None:
    """Differentiates ``loss`` on the tape that produced it."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise TapeError("loss was not recorded on a tape; run the forward pass inside "
                        "`with Tape():` with at least one trainable input")
    loss._tape.backward(loss)
