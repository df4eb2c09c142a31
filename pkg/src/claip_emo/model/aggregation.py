"""Clip-level pooling of frame and audio token sequences.

The visual branch runs one transformer layer over ``[CLS; f_1 .. f_T]``
plus learned positions and reads the CLS output. The audio branch takes
the arithmetic mean of its tokens; a transformer variant exists for the
ablation grid.
"""
from typing import Optional

import numpy as np

from claip_emo import enums
from claip_emo.backbones.vision_transformer import Block
from claip_emo.errors import AggregationError
from claip_emo.numerics import ops
from claip_emo.numerics.module import Module, Parameter, trunc_normal
from claip_emo.numerics.tensor import Tensor


def _prepend_cls(x: Tensor, cls_token: Parameter) -> Tensor:
    *lead, _, d = x.shape
    cls_tokens = ops.broadcast_to(cls_token, (*lead, 1, d))
    return ops.concat([cls_tokens, x], axis=-2)


class VisualAggregator(Module):

    def __init__(self, mode: str, frames: int, dim: int, num_heads: int, mlp_ratio: float,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.mode = mode
        self.frames = frames
        self.dim = dim
        if mode == enums.AggregationMode.transformer.value:
            self.cls_token = Parameter(trunc_normal(rng, (dim,), std=.02))
            self.pos_embed = Parameter(trunc_normal(rng, (frames + 1, dim), std=.02))
            self.block = Block(dim, num_heads=num_heads, mlp_ratio=mlp_ratio, rng=rng)

    def forward(self, frame_features: Tensor) -> Tensor:
        return aggregate_visual(frame_features, agg=self, train_flag=self.training)


class AudioAggregator(Module):
    """Mean pooling (no parameters) or, for ablations, a CLS transformer layer.

    ``max_tokens`` sizes the positional table of the transformer variant.
    """

    def __init__(self, mode: str, max_tokens: int, dim: int, num_heads: int, mlp_ratio: float,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.mode = mode
        self.max_tokens = max_tokens
        self.dim = dim
        if mode == enums.AggregationMode.transformer.value:
            self.cls_token = Parameter(trunc_normal(rng, (dim,), std=.02))
            self.pos_embed = Parameter(trunc_normal(rng, (max_tokens + 1, dim), std=.02))
            self.block = Block(dim, num_heads=num_heads, mlp_ratio=mlp_ratio, rng=rng)

    def forward(self, audio_features: Tensor) -> Tensor:
        return aggregate_audio(audio_features, agg=self)


def aggregate_visual(frame_features: Tensor, agg: VisualAggregator, train_flag: bool = False) -> Tensor:
    """[..., T, d_V] -> [..., d_V].

    ``train_flag`` is accepted for symmetry with the adapter layers; the
    temporal layer has no dropout.

    Raises:
        AggregationError: if T differs from the configured clip length.
    """
    t = frame_features.shape[-2]
    if t != agg.frames:
        raise AggregationError(f"visual aggregator is configured for {agg.frames} frames, got {t}")
    if agg.mode == enums.AggregationMode.mean.value:
        return ops.mean(frame_features, axis=-2)
    x = _prepend_cls(frame_features, agg.cls_token)
    x = ops.add(x, agg.pos_embed)
    x = agg.block(x)
    return x[..., 0, :]


def aggregate_audio(audio_features: Tensor, agg: AudioAggregator) -> Tensor:
    """[..., T'_a, d_A] -> [..., d_A].

    Raises:
        AggregationError: on an empty token sequence, or more tokens than the
            transformer variant has positions for.
    """
    n = audio_features.shape[-2]
    if n == 0:
        raise AggregationError("cannot pool an empty audio token sequence")
    if agg.mode == enums.AggregationMode.mean.value:
        return ops.mean(audio_features, axis=-2)
    if n > agg.max_tokens:
        raise AggregationError(f"{n} audio tokens exceed the aggregator's {agg.max_tokens} positions")
    x = _prepend_cls(audio_features, agg.cls_token)
    x = ops.embedding_add(x, agg.pos_embed)
    x = agg.block(x)
    return x[..., 0, :]
