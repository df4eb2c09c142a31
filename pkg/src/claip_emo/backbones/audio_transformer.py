"""Flat spectrogram transformer: non-overlapping time x mel tiles, no CLS.

The whole token sequence is returned and pooled later by the aggregator.
"""
import numpy as np

from claip_emo import enums
from claip_emo.backbones.model_registry import EncoderConfig
from claip_emo.backbones.vision_transformer import Block, PatchEmbed
from claip_emo.errors import ShapeError
from claip_emo.numerics import ops
from claip_emo.numerics.module import LayerNorm, Module, Parameter, trunc_normal
from claip_emo.numerics.tensor import Tensor


def patchify_spectrogram(mel: np.ndarray, patch_time: int, patch_mel: int) -> np.ndarray:
    """[..., T_a, F_a] -> [..., n_t * n_f, patch_time * patch_mel], time-major.

    Trailing frames that do not fill a whole patch are dropped.

    Raises:
        ShapeError: if the spectrogram is shorter than one patch, or F_a is
            not a multiple of the mel patch size.
    """
    *lead, t_a, f_a = mel.shape
    if t_a < patch_time:
        raise ShapeError(
            f"spectrogram has {t_a} frames, fewer than one audio patch ({patch_time}); pad the waveform")
    if f_a % patch_mel:
        raise ShapeError(f"{f_a} mel bins are not a multiple of the mel patch size {patch_mel}")
    n_t, n_f = t_a // patch_time, f_a // patch_mel
    x = mel[..., :n_t * patch_time, :].reshape(*lead, n_t, patch_time, n_f, patch_mel)
    x = np.moveaxis(x, -3, -2)
    return x.reshape(*lead, n_t * n_f, patch_time * patch_mel)


class AudioTransformer(Module):

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        if config.kind != enums.EncoderKind.audio.value:
            raise ShapeError(f"AudioTransformer needs an audio config, got `{config.kind}`")
        self.config = config
        self.embed_dim = config.d_model

        self.patch_embed = PatchEmbed(patch_dim=config.patch_dim, embed_dim=config.d_model, rng=rng)
        if config.use_pos_embed:
            self.pos_embed = Parameter(trunc_normal(rng, (config.max_patches, config.d_model), std=.02))
        else:
            self.pos_embed = None
        for i in range(config.depth):
            setattr(self, f"block{i}",
                    Block(config.d_model, num_heads=config.n_heads, mlp_ratio=config.mlp_ratio, rng=rng))
        self.norm = LayerNorm(config.d_model)

    def block_list(self):
        return [getattr(self, f"block{i}") for i in range(self.config.depth)]

    def forward(self, mel: np.ndarray) -> Tensor:
        """[..., T_a, F_a] log-mel -> [..., T'_a, d_A] tokens."""
        mel = np.asarray(mel)
        if mel.shape[-1] != self.config.n_mels:
            raise ShapeError(f"spectrogram has {mel.shape[-1]} mel bins, the encoder expects {self.config.n_mels}")
        patches = patchify_spectrogram(mel, self.config.patch_time, self.config.patch_mel)
        if patches.shape[-2] > self.config.max_patches:
            raise ShapeError(
                f"{patches.shape[-2]} audio patches exceed max_patches ({self.config.max_patches})")
        x = self.patch_embed(patches)
        if self.pos_embed is not None:
            x = ops.embedding_add(x, self.pos_embed)
        for blk in self.block_list():
            x = blk(x)
        return self.norm(x)
