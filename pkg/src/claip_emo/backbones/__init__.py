from claip_emo.backbones.checkpoint import load_checkpoint, save_checkpoint
from claip_emo.backbones.encoders import (
    AudioEncoder, AudioFeatures, FrameFeatures, VisualEncoder, encode_audio, encode_frame, encode_frames,
    make_backbone)
from claip_emo.backbones.model_registry import EncoderConfig, resolve_encoder_config
