"""Pre-norm transformer blocks and the per-frame visual encoder.

Layer layout follows timm/DINO (Mlp, Attention, Block, PatchEmbed), with
q, k, v and out kept as separate linears so each can carry its own adapter.
"""
import numpy as np

from claip_emo import enums
from claip_emo.backbones.model_registry import EncoderConfig
from claip_emo.errors import ShapeError
from claip_emo.numerics import ops
from claip_emo.numerics.module import LayerNorm, Linear, Module, Parameter, trunc_normal
from claip_emo.numerics.tensor import Tensor


class Mlp(Module):
    def __init__(self, in_features: int, hidden_features: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(in_features, hidden_features, rng=rng)
        self.fc2 = Linear(hidden_features, in_features, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        x = self.fc1(x)
        x = ops.gelu(x)
        x = self.fc2(x)
        return x


class Attention(Module):
    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % num_heads != 0:
            raise ShapeError(f"attention width {dim} is not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5

        self.q = Linear(dim, dim, rng=rng)
        self.k = Linear(dim, dim, rng=rng)
        self.v = Linear(dim, dim, rng=rng)
        self.out = Linear(dim, dim, rng=rng)

    def _split_heads(self, x: Tensor) -> Tensor:
        *lead, n, c = x.shape
        x = ops.reshape(x, (*lead, n, self.num_heads, self.head_dim))
        return ops.transpose(x, -3, -2)

    def forward(self, x: Tensor) -> Tensor:
        *lead, n, c = x.shape
        q = self._split_heads(self.q(x))
        k = self._split_heads(self.k(x))
        v = self._split_heads(self.v(x))

        attn = ops.scale(ops.matmul(q, ops.transpose(k, -2, -1)), self.scale)
        attn = ops.softmax(attn, axis=-1)

        x = ops.transpose(ops.matmul(attn, v), -3, -2)
        x = ops.reshape(x, (*lead, n, c))
        return self.out(x)


class Block(Module):
    """LN -> MHSA -> residual, LN -> MLP(GELU) -> residual."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float, rng: np.random.Generator):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, num_heads=num_heads, rng=rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(in_features=dim, hidden_features=int(dim * mlp_ratio), rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.add(x, self.attn(self.norm1(x)))
        x = ops.add(x, self.mlp(self.norm2(x)))
        return x


class PatchEmbed(Module):
    """Linear projection of flattened, non-overlapping patches."""

    def __init__(self, patch_dim: int, embed_dim: int, rng: np.random.Generator):
        super().__init__()
        self.patch_dim = patch_dim
        self.proj = Linear(patch_dim, embed_dim, rng=rng)

    def forward(self, patches: np.ndarray) -> Tensor:
        return self.proj(Tensor(patches, dtype=self.proj.weight.dtype))


def patchify_image(frames: np.ndarray, patch: int) -> np.ndarray:
    """[..., H, W, C] -> [..., (H/p)*(W/p), p*p*C] in row-major patch order."""
    *lead, h, w, c = frames.shape
    if h % patch or w % patch:
        raise ShapeError(f"frame size {h}x{w} is not a multiple of the patch size {patch}")
    x = frames.reshape(*lead, h // patch, patch, w // patch, patch, c)
    x = np.moveaxis(x, -4, -3)
    return x.reshape(*lead, (h // patch) * (w // patch), patch * patch * c)


class VisionTransformer(Module):
    """Frame encoder returning the final-layer CLS token of each frame.

    Frames are encoded independently; any leading batch axes are kept.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        if config.kind != enums.EncoderKind.visual.value:
            raise ShapeError(f"VisionTransformer needs a visual config, got `{config.kind}`")
        self.config = config
        self.embed_dim = config.d_model
        num_patches = config.num_patches

        self.patch_embed = PatchEmbed(patch_dim=config.patch_dim, embed_dim=config.d_model, rng=rng)
        self.cls_token = Parameter(trunc_normal(rng, (config.d_model,), std=.02))
        self.pos_embed = Parameter(trunc_normal(rng, (num_patches + 1, config.d_model), std=.02))
        for i in range(config.depth):
            setattr(self, f"block{i}",
                    Block(config.d_model, num_heads=config.n_heads, mlp_ratio=config.mlp_ratio, rng=rng))
        self.norm = LayerNorm(config.d_model)

    def block_list(self):
        return [getattr(self, f"block{i}") for i in range(self.config.depth)]

    def check_frames(self, frames: np.ndarray) -> None:
        expected = (self.config.image_size, self.config.image_size, self.config.channels)
        if tuple(frames.shape[-3:]) != expected:
            raise ShapeError(f"frames must end in {expected} (H, W, C), got {tuple(frames.shape)}")

    def prepare_tokens(self, frames: np.ndarray) -> Tensor:
        self.check_frames(frames)
        x = self.patch_embed(patchify_image(np.asarray(frames), self.config.patch))

        # add the [CLS] token to the embed patch tokens
        *lead, _, d = x.shape
        cls_tokens = ops.broadcast_to(self.cls_token, (*lead, 1, d))
        x = ops.concat([cls_tokens, x], axis=-2)

        return ops.embedding_add(x, self.pos_embed)

    def forward(self, frames: np.ndarray) -> Tensor:
        x = self.prepare_tokens(frames)
        for blk in self.block_list():
            x = blk(x)
        x = self.norm(x)
        return x[..., 0, :]

    def tokens(self, frames: np.ndarray) -> Tensor:
        """All final-layer tokens, CLS first."""
        x = self.prepare_tokens(frames)
        for blk in self.block_list():
            x = blk(x)
        return self.norm(x)
