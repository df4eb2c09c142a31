"""Parameter containers.

``Module`` registers ``Parameter`` and child ``Module`` attributes in
assignment order, so ``named_parameters`` yields dotted names such as
``block0.attn.q.weight`` deterministically.
"""
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from claip_emo.errors import CheckpointKeyError, CheckpointShapeError, ShapeError
from claip_emo.numerics import ops
from claip_emo.numerics.tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """A tensor owned by a module. Built in the current default dtype."""

    def __init__(self, data, requires_grad: bool = True):
        super().__init__(np.asarray(data), requires_grad=requires_grad, dtype=get_default_dtype())

    def __repr__(self):
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples truncated to [-bound*std, bound*std] by redraw."""
    values = rng.normal(0.0, std, size=shape)
    limit = bound * std
    outside = np.abs(values) > limit
    while outside.any():
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > limit
    return values


class Module:

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", False)

    def __setattr__(self, name, value):
        params = self.__dict__.get("_parameters")
        modules = self.__dict__.get("_modules")
        if params is None:
            raise AttributeError("Module.__init__() must run before assigning attributes")
        params.pop(name, None)
        modules.pop(name, None)
        if isinstance(value, Parameter):
            params[name] = value
        elif isinstance(value, Module):
            modules[name] = value
        object.__setattr__(self, name, value)

    def __delattr__(self, name):
        self._parameters.pop(name, None)
        self._modules.pop(name, None)
        object.__delattr__(self, name)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        """Yields (dotted name, parameter), each parameter object once."""
        seen = set()
        for name, param in self._named_parameters_all(prefix=prefix):
            if id(param) in seen:
                continue
            seen.add(id(param))
            yield name, param

    def _named_parameters_all(self, prefix: str):
        for name, param in self._parameters.items():
            yield f"{prefix}{name}", param
        for name, module in self._modules.items():
            yield from module._named_parameters_all(prefix=f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> List[Tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, module in self._modules.items():
            yield from module.named_modules(prefix=f"{prefix}{name}.")

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        return iter(self._modules.items())

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = True
        return self

    @property
    def is_frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """Copies arrays into parameters in place.

        Raises:
            CheckpointKeyError: on missing (or, when strict, unexpected) names.
            CheckpointShapeError: naming the first tensor whose shape differs.
        """
        own = OrderedDict(self.named_parameters())
        missing = [n for n in own if n not in state]
        unexpected = [n for n in state if n not in own]
        if missing or (strict and unexpected):
            raise CheckpointKeyError(
                f"state does not match module: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, param in own.items():
            array = np.asarray(state[name])
            if array.shape != param.shape:
                raise CheckpointShapeError(
                    f"tensor `{name}` has shape {array.shape} in the checkpoint, "
                    f"the model expects {param.shape}")
        for name, param in own.items():
            param.data = np.ascontiguousarray(np.asarray(state[name], dtype=param.dtype))

    def num_parameters(self, trainable_only: bool = False) -> int:
        return int(sum(p.size for p in self.parameters() if p.requires_grad or not trainable_only))


class Linear(Module):
    """y = x W^T + b with weight [d_out, d_in]."""

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None,
                 bias: bool = True, std: float = 0.02):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            weight = np.zeros((out_features, in_features))
        else:
            weight = trunc_normal(rng, (out_features, in_features), std=std)
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    @classmethod
    def from_tensors(cls, weight: Parameter, bias: Optional[Parameter]) -> "Linear":
        layer = cls.__new__(cls)
        Module.__init__(layer)
        layer.in_features = weight.shape[1]
        layer.out_features = weight.shape[0]
        layer.weight = weight
        layer.bias = bias
        return layer

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects inputs of width {self.in_features}, got {x.shape}")
        if x.ndim == 1:
            return ops.reshape(self.forward(ops.reshape(x, (1, -1))), (self.out_features,))
        y = ops.matmul(x, ops.transpose(self.weight))
        if self.bias is not None:
            y = ops.add(y, self.bias)
        return y


class LayerNorm(Module):

    def __init__(self, dim: int, eps: float = ops.LAYER_NORM_EPS):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, eps=self.eps)
