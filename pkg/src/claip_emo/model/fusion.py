"""Classification heads over the pooled clip vectors."""
from typing import Optional

import numpy as np

from claip_emo import enums
from claip_emo.errors import ShapeError
from claip_emo.numerics import ops
from claip_emo.numerics.module import Linear, Module
from claip_emo.numerics.tensor import Tensor


def _check_width(z: Tensor, expected: int, what: str) -> None:
    if z.shape[-1] != expected:
        raise ShapeError(f"{what} has width {z.shape[-1]}, the head expects {expected}")


class FusionHead(Module):
    """Fuses z_V and z_A and maps the fused vector z_o to K logits.

    concat_linear: z_o = [z_V; z_A], logits = W_c z_o + b_c.
    additive:      z_o = P_V z_V + P_A z_A at width min(d_V, d_A).
    gated:         g = sigmoid(W_g [z_V; z_A] + b_g),
                   z_o = g * P_V z_V + (1 - g) * P_A z_A.
    """

    def __init__(self, mode: str, visual_dim: int, audio_dim: int, num_classes: int,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.mode = mode
        self.visual_dim = visual_dim
        self.audio_dim = audio_dim
        self.num_classes = num_classes
        self.shared_dim = min(visual_dim, audio_dim)

        if mode == enums.FusionMode.concat_linear.value:
            self.classifier = Linear(visual_dim + audio_dim, num_classes, rng=rng)
        else:
            self.proj_visual = Linear(visual_dim, self.shared_dim, rng=rng)
            self.proj_audio = Linear(audio_dim, self.shared_dim, rng=rng)
            if mode == enums.FusionMode.gated.value:
                self.gate = Linear(visual_dim + audio_dim, self.shared_dim, rng=rng)
            self.classifier = Linear(self.shared_dim, num_classes, rng=rng)

    @property
    def feature_dim(self) -> int:
        if self.mode == enums.FusionMode.concat_linear.value:
            return self.visual_dim + self.audio_dim
        return self.shared_dim

    def fused(self, z_visual: Tensor, z_audio: Tensor) -> Tensor:
        _check_width(z_visual, self.visual_dim, "z_V")
        _check_width(z_audio, self.audio_dim, "z_A")
        if self.mode == enums.FusionMode.concat_linear.value:
            return ops.concat([z_visual, z_audio], axis=-1)
        visual = self.proj_visual(z_visual)
        audio = self.proj_audio(z_audio)
        if self.mode == enums.FusionMode.additive.value:
            return ops.add(visual, audio)
        gate = ops.sigmoid(self.gate(ops.concat([z_visual, z_audio], axis=-1)))
        # g * v + (1 - g) * a, written as a + g * (v - a)
        return ops.add(audio, ops.mul(gate, ops.sub(visual, audio)))

    def forward(self, z_visual: Tensor, z_audio: Tensor) -> Tensor:
        return self.classifier(self.fused(z_visual, z_audio))


class LinearHead(Module):
    """K x d classifier for a single-modality model."""

    def __init__(self, dim: int, num_classes: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.dim = dim
        self.num_classes = num_classes
        self.classifier = Linear(dim, num_classes, rng=rng)

    @property
    def feature_dim(self) -> int:
        return self.dim

    def fused(self, z: Tensor) -> Tensor:
        _check_width(z, self.dim, "clip vector")
        return z

    def forward(self, z: Tensor) -> Tensor:
        return self.classifier(self.fused(z))


def fuse_predict(z_visual: Tensor, z_audio: Tensor, head: FusionHead) -> Tensor:
    """Class probabilities softmax(head(z_V, z_A)) over the last axis."""
    return ops.softmax(head(z_visual, z_audio), axis=-1)
