from claip_emo.model.aggregation import AudioAggregator, VisualAggregator, aggregate_audio, aggregate_visual
from claip_emo.model.claip_model import (
    ClaipEmoModel, ClipBatch, build_model, load_trained_model, modality_mask, run_gradient_check)
from claip_emo.model.fusion import FusionHead, LinearHead, fuse_predict
