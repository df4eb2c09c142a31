"""Low-rank adapters for frozen linear layers.

A wrapped layer computes ``x W0^T + b + (alpha / r) * dropout(x) A^T B^T``
with ``W0`` and ``b`` frozen and only ``A`` [r, d_in] and ``B`` [d_out, r]
trainable. ``B`` starts at zero, so an injected encoder reproduces the
frozen encoder exactly until the first optimizer step.
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from claip_emo import enums
from claip_emo.backbones import checkpoint
from claip_emo.errors import (
    AlreadyMergedError, CheckpointKeyError, CheckpointShapeError, DoubleInjectionError, LoraConfigError)
from claip_emo.logger import get_logger
from claip_emo.numerics import ops
from claip_emo.numerics.module import Linear, Module, Parameter, trunc_normal
from claip_emo.numerics.tensor import Tensor

logger = get_logger(__name__)

ADAPTER_PREFIX = "lora."
ADAPTER_TENSORS = ("lora_A", "lora_B")
# (parent path inside a block, attribute)
TARGET_LINEARS = (
    ("attn", "q"), ("attn", "k"), ("attn", "v"), ("attn", "out"),
    ("mlp", "fc1"), ("mlp", "fc2"),
)


class LoraLinear(Module):
    """A frozen ``Linear`` plus a trainable rank-``r`` update.

    The base ``weight`` and ``bias`` are the very Parameter objects of the
    wrapped layer, so parameter names (``...attn.q.weight``) do not change
    when a layer is wrapped.
    """

    def __init__(self, base: Linear, rank: int, alpha: float, dropout_p: float = 0.0,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        d_out, d_in = base.weight.shape
        if rank < 0:
            raise LoraConfigError(f"LoRA rank must be >= 0, got {rank}")
        if rank > min(d_in, d_out):
            raise LoraConfigError(
                f"LoRA rank {rank} exceeds min(d_in, d_out) = {min(d_in, d_out)} for a {d_out}x{d_in} layer")
        if not 0.0 <= dropout_p < 1.0:
            raise LoraConfigError(f"LoRA dropout must be in [0, 1), got {dropout_p}")
        if rng is None:
            rng = np.random.default_rng(0)

        self.in_features = d_in
        self.out_features = d_out
        self.rank = rank
        self.alpha = alpha
        self.dropout_p = dropout_p
        self.scaling = alpha / rank if rank > 0 else 0.0

        self.weight = base.weight
        self.bias = base.bias
        self.weight.requires_grad = False
        if self.bias is not None:
            self.bias.requires_grad = False

        if rank > 0:
            self.lora_A = Parameter(trunc_normal(rng, (rank, d_in), std=1.0 / np.sqrt(rank)))
            self.lora_B = Parameter(np.zeros((d_out, rank)))
        else:
            self.lora_A = None
            self.lora_B = None
        self.dropout_rng = np.random.default_rng(rng.integers(2 ** 31))

    def effective_weight(self) -> np.ndarray:
        """W0 + (alpha / r) B A, as an array in the weight dtype."""
        if self.rank == 0:
            return self.weight.data.copy()
        delta = self.lora_B.data @ self.lora_A.data
        return self.weight.data + self.weight.dtype.type(self.scaling) * delta

    def forward(self, x: Tensor) -> Tensor:
        return lora_forward(x, layer=self, train_flag=self.training)

    def __repr__(self):
        return f"LoraLinear(in={self.in_features}, out={self.out_features}, r={self.rank}, alpha={self.alpha})"


def lora_forward(x: Tensor, layer: LoraLinear, train_flag: bool) -> Tensor:
    if x.ndim == 1:
        out = lora_forward(ops.reshape(x, (1, -1)), layer=layer, train_flag=train_flag)
        return ops.reshape(out, (layer.out_features,))
    y = ops.matmul(x, ops.transpose(layer.weight))
    if layer.bias is not None:
        y = ops.add(y, layer.bias)
    if layer.rank == 0:
        return y
    h = ops.dropout(x, p=layer.dropout_p, train_flag=train_flag, rng=layer.dropout_rng)
    h = ops.matmul(h, ops.transpose(layer.lora_A))
    h = ops.matmul(h, ops.transpose(layer.lora_B))
    return ops.add(y, ops.scale(h, layer.scaling))


@dataclass
class AdapterSet:
    """Wrapped layers by path, split into the visual and audio partitions."""
    visual: "OrderedDict[str, LoraLinear]" = field(default_factory=OrderedDict)
    audio: "OrderedDict[str, LoraLinear]" = field(default_factory=OrderedDict)

    def partition(self, kind: str) -> "OrderedDict[str, LoraLinear]":
        if kind == enums.EncoderKind.visual.value:
            return self.visual
        return self.audio

    def layers(self) -> List[Tuple[str, LoraLinear]]:
        return list(self.visual.items()) + list(self.audio.items())

    def __len__(self):
        return len(self.visual) + len(self.audio)

    def trainable_parameters(self) -> List[Tuple[str, Parameter]]:
        return [(f"{path}.{name}", p) for path, layer in self.layers()
                for name, p in layer.named_parameters() if p.requires_grad]

    def num_trainable(self) -> int:
        return int(sum(p.size for _, p in self.trainable_parameters()))

    def union(self, other: "AdapterSet") -> "AdapterSet":
        return AdapterSet(visual=OrderedDict([*self.visual.items(), *other.visual.items()]),
                          audio=OrderedDict([*self.audio.items(), *other.audio.items()]))


def _resolve(root: Module, path: str) -> Tuple[Module, str]:
    *parents, leaf = path.split(".")
    node = root
    for name in parents:
        node = getattr(node, name)
    return node, leaf


def has_adapters(module: Module) -> bool:
    return any(isinstance(m, LoraLinear) for _, m in module.named_modules())


def inject(encoder, rank: int, alpha: float, dropout_p: float, seed: int = 0, prefix: str = "") -> AdapterSet:
    """Wraps q, k, v, out, fc1 and fc2 of every block in a LoraLinear.

    Args:
        encoder: a frozen VisionTransformer or AudioTransformer.
        prefix: prepended to layer paths in the returned set, e.g. "visual.".

    Raises:
        DoubleInjectionError: if the encoder already carries adapters.
        LoraConfigError: if the encoder is trainable or the rank is invalid.
    """
    if has_adapters(encoder):
        raise DoubleInjectionError(f"{encoder.config.kind} encoder already has LoRA adapters")
    if not encoder.is_frozen:
        raise LoraConfigError(f"{encoder.config.kind} encoder must be frozen before LoRA injection")
    rng = np.random.default_rng(seed)
    adapters = AdapterSet()
    target = adapters.partition(encoder.config.kind)
    for i, block in enumerate(encoder.block_list()):
        for parent_name, leaf in TARGET_LINEARS:
            parent = getattr(block, parent_name)
            wrapped = LoraLinear(getattr(parent, leaf), rank=rank, alpha=alpha, dropout_p=dropout_p, rng=rng)
            setattr(parent, leaf, wrapped)
            target[f"{prefix}block{i}.{parent_name}.{leaf}"] = wrapped
    logger.debug(f"injected {len(target)} rank-{rank} adapters into the {encoder.config.kind} encoder")
    return adapters


def merge(layer: Module) -> Linear:
    """Folds the adapter into a plain frozen Linear with W0 + (alpha/r) B A.

    Raises:
        AlreadyMergedError: if ``layer`` is already a plain linear.
    """
    if not isinstance(layer, LoraLinear):
        raise AlreadyMergedError(f"{type(layer).__name__} has no adapter to merge")
    if layer.rank == 0:
        logger.warning("merging a rank-0 LoRA layer is a no-op; returning the frozen linear")
        return Linear.from_tensors(weight=layer.weight, bias=layer.bias)
    weight = Parameter(layer.effective_weight(), requires_grad=False)
    return Linear.from_tensors(weight=weight, bias=layer.bias)


def merge_all(model: Module) -> int:
    """Replaces every LoraLinear in ``model`` by its merged Linear.

    Returns:
        the number of layers replaced.
    """
    wrapped = [(path, m) for path, m in model.named_modules() if isinstance(m, LoraLinear)]
    rank_zero = 0
    for path, layer in wrapped:
        parent, leaf = _resolve(model, path)
        if layer.rank == 0:
            rank_zero += 1
            setattr(parent, leaf, Linear.from_tensors(weight=layer.weight, bias=layer.bias))
        else:
            setattr(parent, leaf, merge(layer))
    if rank_zero:
        logger.warning(f"{rank_zero} rank-0 LoRA layers had nothing to merge")
    if getattr(model, "adapters", None) is not None:
        model.adapters = AdapterSet()
    return len(wrapped)


def enable_full_finetune(encoder: Module) -> Module:
    """Makes every base weight trainable. Used instead of adapters."""
    if has_adapters(encoder):
        raise LoraConfigError("full fine-tuning replaces adapters; build the encoder without injection")
    return encoder.unfreeze()


def is_adapter_name(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in ADAPTER_TENSORS


def adapter_parameters(model: Module) -> "OrderedDict[str, Parameter]":
    return OrderedDict((n, p) for n, p in model.named_parameters() if is_adapter_name(n))


def save_adapters(model: Module, path: str) -> int:
    """Writes only the adapter tensors, named ``lora.<parameter name>``."""
    records = [checkpoint.TensorRecord(name=f"{ADAPTER_PREFIX}{name}", array=p.data, trainable=p.requires_grad)
               for name, p in adapter_parameters(model).items()]
    checkpoint.write_tensors(path, records)
    logger.info(f"wrote {len(records)} adapter tensors to {path}")
    return len(records)


def load_adapters(model: Module, path: str) -> int:
    """Loads an adapter-only checkpoint into an injected model.

    Raises:
        CheckpointKeyError: if names are missing, unexpected or unprefixed.
        CheckpointShapeError: naming the first adapter whose shape differs.
    """
    records = checkpoint.read_tensors(path)
    own = adapter_parameters(model)
    stored: Dict[str, checkpoint.TensorRecord] = {}
    for name, record in records.items():
        if not name.startswith(ADAPTER_PREFIX):
            raise CheckpointKeyError(f"`{name}` in `{path}` is not an adapter tensor (no `{ADAPTER_PREFIX}` prefix)")
        stored[name[len(ADAPTER_PREFIX):]] = record
    missing = [n for n in own if n not in stored]
    unexpected = [n for n in stored if n not in own]
    if missing or unexpected:
        raise CheckpointKeyError(
            f"adapters in `{path}` do not match the model: missing={missing[:5]} unexpected={unexpected[:5]}")
    for name, record in stored.items():
        if record.array.shape != own[name].shape:
            raise CheckpointShapeError(
                f"adapter `{name}` has shape {record.array.shape} in `{path}`, the model expects {own[name].shape}")
    for name, record in stored.items():
        own[name].data = np.ascontiguousarray(record.array.astype(own[name].dtype))
    return len(stored)
