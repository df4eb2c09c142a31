"""Adam over the trainable tensors of a model."""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from claip_emo.errors import NonFiniteGradientError
from claip_emo.numerics.module import Parameter

NamedParams = Sequence[Tuple[str, Parameter]]


@dataclass
class OptimizerState:
    """First and second moments per trainable tensor, plus the step count."""
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: NamedParams) -> "OptimizerState":
        state = cls()
        for name, p in params:
            if p.requires_grad:
                state.exp_avg[name] = np.zeros_like(p.data)
                state.exp_avg_sq[name] = np.zeros_like(p.data)
        return state


def check_finite_grads(params: NamedParams) -> None:
    for name, p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(np.size(p.grad) - np.count_nonzero(np.isfinite(p.grad)))
            raise NonFiniteGradientError(
                f"gradient of `{name}` has {bad} non-finite entries (shape {p.shape})")


def adam_step(params: NamedParams, state: OptimizerState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every trainable tensor, in place.

    Tensors without a gradient this step are left untouched.

    Raises:
        NonFiniteGradientError: naming the first tensor with a NaN or Inf
            gradient. No tensor is updated in that case.
    """
    check_finite_grads(params)
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step
    for name, p in params:
        if not p.requires_grad or p.grad is None:
            continue
        if name not in state.exp_avg:
            state.exp_avg[name] = np.zeros_like(p.data)
            state.exp_avg_sq[name] = np.zeros_like(p.data)
        g = p.grad
        m = state.exp_avg[name]
        v = state.exp_avg_sq[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        denom = np.sqrt(v / bias2) + eps
        p.data = (p.data - (lr / bias1) * m / denom).astype(p.dtype, copy=False)


def clip_grad_norm(params: NamedParams, max_norm: float) -> float:
    """Rescales gradients so their global L2 norm is at most ``max_norm``.

    Returns:
        the norm before clipping.
    """
    grads = [p.grad for _, p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if total > max_norm > 0:
        factor = max_norm / (total + 1e-6)
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * p.dtype.type(factor)
    return total


class Adam:
    """Holds the trainable tensors and their OptimizerState."""

    def __init__(self, params: NamedParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: Optional[float] = None):
        self.params: List[Tuple[str, Parameter]] = [(n, p) for n, p in params if p.requires_grad]
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.state = OptimizerState.for_params(self.params)

    @classmethod
    def from_settings(cls, params: NamedParams, train) -> "Adam":
        return cls(params, beta1=train.beta1, beta2=train.beta2, eps=train.eps, grad_clip=train.grad_clip)

    def __len__(self):
        return len(self.params)

    def step(self, lr: float) -> None:
        if self.grad_clip is not None:
            check_finite_grads(self.params)
            clip_grad_norm(self.params, max_norm=self.grad_clip)
        adam_step(self.params, state=self.state, lr=lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None
