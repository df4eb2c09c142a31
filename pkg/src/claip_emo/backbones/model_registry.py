from typing import Dict

import pydantic
from pydantic import BaseModel

from claip_emo import enums, validation
from claip_emo.errors import InvalidConfigValueError


class EncoderConfig(BaseModel):
    """Resolved architecture of one frozen encoder."""
    kind: str
    depth: int
    d_model: int
    n_heads: int
    mlp_ratio: float = 4.0
    # visual
    image_size: int = 32
    channels: int = 1
    patch: int = 8
    # audio
    n_mels: int = 64
    patch_time: int = 8
    patch_mel: int = 64
    max_patches: int = 64
    use_pos_embed: bool = True

    @pydantic.validator("kind")
    def validate_kind(cls, value):
        return validation.validate_str_against_enum(value=value, enum_class=enums.EncoderKind)

    @property
    def hidden_dim(self) -> int:
        return int(self.d_model * self.mlp_ratio)

    @property
    def num_patches(self) -> int:
        if self.kind == enums.EncoderKind.visual.value:
            return (self.image_size // self.patch) ** 2
        return self.max_patches

    @property
    def patch_dim(self) -> int:
        if self.kind == enums.EncoderKind.visual.value:
            return self.patch * self.patch * self.channels
        return self.patch_time * self.patch_mel


def check_encoder_config(config: EncoderConfig) -> EncoderConfig:
    """Raises InvalidConfigValueError on an unbuildable architecture."""
    if config.depth < 1:
        raise InvalidConfigValueError(f"{config.kind} encoder depth must be >= 1, got {config.depth}")
    if config.d_model % config.n_heads != 0:
        raise InvalidConfigValueError(
            f"{config.kind} encoder d_model ({config.d_model}) must be divisible by n_heads ({config.n_heads})")
    if config.kind == enums.EncoderKind.visual.value and config.image_size % config.patch != 0:
        raise InvalidConfigValueError(
            f"image_size ({config.image_size}) must be a multiple of the patch size ({config.patch})")
    if config.kind == enums.EncoderKind.audio.value and config.n_mels % config.patch_mel != 0:
        raise InvalidConfigValueError(
            f"n_mels ({config.n_mels}) must be a multiple of the mel patch size ({config.patch_mel})")
    return config


# the B/L pair keeps the relative scale of the two backbone sizes; toy is for gradient checks
def _get_visual_presets() -> Dict:
    VISUAL_PRESETS = {
        'B':
            {"depth": 4,
             "d_model": 128,
             "n_heads": 4,
             "mlp_ratio": 4.0,
             "notes": "base stand-in for a ViT-B style frame encoder"},
        'L':
            {"depth": 6,
             "d_model": 192,
             "n_heads": 4,
             "mlp_ratio": 4.0,
             "notes": "large stand-in for a ViT-L style frame encoder"},
        'toy':
            {"depth": 1,
             "d_model": 32,
             "n_heads": 2,
             "mlp_ratio": 2.0,
             "notes": "smallest end-to-end graph"},
    }
    return VISUAL_PRESETS


def _get_audio_presets() -> Dict:
    AUDIO_PRESETS = {
        'B':
            {"depth": 4,
             "d_model": 128,
             "n_heads": 4,
             "mlp_ratio": 4.0,
             "notes": "flat transformer over spectrogram patches"},
        'L':
            {"depth": 4,
             "d_model": 128,
             "n_heads": 4,
             "mlp_ratio": 4.0,
             "notes": "audio branch is shared between B and L"},
        'toy':
            {"depth": 1,
             "d_model": 32,
             "n_heads": 2,
             "mlp_ratio": 2.0,
             "notes": "smallest end-to-end graph"},
    }
    return AUDIO_PRESETS


def load_backbone_presets() -> Dict:
    return {
        enums.EncoderKind.visual.value: _get_visual_presets(),
        enums.EncoderKind.audio.value: _get_audio_presets(),
    }


def resolve_encoder_config(cfg, kind: str) -> EncoderConfig:
    """Merges the preset named by ``cfg.preset`` with explicit section keys.

    Args:
        cfg: a RunConfig
        kind: "visual" or "audio"
    """
    presets = load_backbone_presets()[kind]
    if cfg.preset not in presets:
        raise InvalidConfigValueError(f"unknown backbone preset `{cfg.preset}`; known: {sorted(presets)}")
    properties = {k: v for k, v in presets[cfg.preset].items() if k != "notes"}
    if kind == enums.EncoderKind.visual.value:
        section = cfg.visual
        extra = {"image_size": section.image_size, "channels": section.channels, "patch": section.patch}
    else:
        section = cfg.audio_encoder
        extra = {"n_mels": cfg.audio.n_mels, "patch_time": section.patch_time,
                 "patch_mel": section.patch_mel, "max_patches": section.max_patches,
                 "use_pos_embed": section.use_pos_embed}
    for key in ("depth", "d_model", "n_heads", "mlp_ratio"):
        value = getattr(section, key)
        if value is not None:
            properties[key] = value
    return check_encoder_config(EncoderConfig(kind=kind, **properties, **extra))
