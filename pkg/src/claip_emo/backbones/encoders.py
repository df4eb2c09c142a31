from dataclasses import dataclass
from typing import Union

import numpy as np

from claip_emo import enums
from claip_emo.audio.frontend import MelSpectrogram
from claip_emo.backbones.audio_transformer import AudioTransformer
from claip_emo.backbones.model_registry import EncoderConfig, check_encoder_config
from claip_emo.backbones.vision_transformer import VisionTransformer
from claip_emo.logger import get_logger
from claip_emo.numerics.tensor import Tensor

logger = get_logger(__name__)

VisualEncoder = VisionTransformer
AudioEncoder = AudioTransformer

Encoder = Union[VisionTransformer, AudioTransformer]


@dataclass
class FrameFeatures:
    """Per-frame CLS embeddings, one row per frame: [T, d_V]."""
    matrix: Tensor


@dataclass
class AudioFeatures:
    """Token embeddings over the spectrogram, time-major: [T'_a, d_A]."""
    matrix: Tensor


def make_backbone(seed: int, config: EncoderConfig) -> Encoder:
    """Seeded, frozen stand-in encoder (truncated normal init, std 0.02)."""
    check_encoder_config(config)
    rng = np.random.default_rng(seed)
    if config.kind == enums.EncoderKind.visual.value:
        encoder = VisionTransformer(config, rng=rng)
    else:
        encoder = AudioTransformer(config, rng=rng)
    encoder.freeze()
    logger.debug(f"built {config.kind} backbone depth={config.depth} d_model={config.d_model} "
                 f"params={encoder.num_parameters()}")
    return encoder


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def encode_frame(frame, enc: VisionTransformer) -> Tensor:
    """CLS embedding [d_V] of a single [H, W, C] frame."""
    return enc(_array(frame))


def encode_frames(frames, enc: VisionTransformer) -> FrameFeatures:
    """Encodes [T, H, W, C] frames independently into FrameFeatures."""
    return FrameFeatures(matrix=enc(_array(frames)))


def encode_audio(m: MelSpectrogram, enc: AudioTransformer) -> AudioFeatures:
    return AudioFeatures(matrix=enc(m.frames.data))
