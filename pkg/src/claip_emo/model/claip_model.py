"""The assembled audiovisual classifier and its builders.

``build_model`` wires frozen backbones, adapters (or full fine-tuning),
the two aggregators and the head from a RunConfig. Parameter names of the
assembled model start with the ModuleName attributes (``visual.``,
``audio.``, ``agg_visual.``, ``agg_audio.``, ``head.``), which is what
parameter accounting and checkpoints key on.
"""
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from claip_emo import enums
from claip_emo.adaptation import lora
from claip_emo.audio.frontend import AudioFrontend, MelSpectrogram, Waveform
from claip_emo.backbones import checkpoint
from claip_emo.backbones.encoders import encode_audio, encode_frames, make_backbone
from claip_emo.backbones.model_registry import resolve_encoder_config
from claip_emo.config import RunConfig
from claip_emo.errors import GradientCheckError, InvalidConfigValueError
from claip_emo.logger import get_logger
from claip_emo.model.aggregation import AudioAggregator, VisualAggregator
from claip_emo.model.fusion import FusionHead, LinearHead
from claip_emo.numerics import ops
from claip_emo.numerics.gradcheck import GradCheckReport, check_gradients
from claip_emo.numerics.module import Module
from claip_emo.numerics.tensor import Tensor, default_dtype

logger = get_logger(__name__)

# backbones stand in for pretrained weights, so they do not follow the run seed
PRIOR_SEED = 0
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_ENTRIES = 16


@dataclass
class ClipBatch:
    ids: List[str]
    frames: np.ndarray  # [B, T, H, W, C]
    waveforms: List[Waveform]
    labels: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence) -> "ClipBatch":
        return cls(
            ids=[s.id for s in samples],
            frames=np.stack([s.frames for s in samples]).astype(np.float32),
            waveforms=[s.waveform for s in samples],
            labels=np.asarray([s.label for s in samples], dtype=np.int64),
        )

    def __len__(self):
        return len(self.ids)


class ClaipEmoModel(Module):
    """Frozen encoders with adapters, per-modality pooling and a head.

    A branch that the modality does not use is ``None`` and never runs.
    """

    def __init__(self, modality: str, num_classes: int, head: Module,
                 fusion: str = enums.FusionMode.concat_linear.value,
                 visual: Optional[Module] = None, agg_visual: Optional[Module] = None,
                 audio: Optional[Module] = None, agg_audio: Optional[Module] = None,
                 frontend: Optional[AudioFrontend] = None, adapters: Optional[lora.AdapterSet] = None):
        super().__init__()
        self.modality = modality
        self.num_classes = num_classes
        self.fusion = fusion
        self.visual = visual
        self.audio = audio
        self.agg_visual = agg_visual
        self.agg_audio = agg_audio
        self.head = head
        self.frontend = frontend
        self.adapters = adapters if adapters is not None else lora.AdapterSet()

    @property
    def uses_visual(self) -> bool:
        return self.modality in (enums.Modality.visual.value, enums.Modality.audiovisual.value)

    @property
    def uses_audio(self) -> bool:
        return self.modality in (enums.Modality.audio.value, enums.Modality.audiovisual.value)

    def spectrograms(self, waveforms: Sequence[Waveform]) -> MelSpectrogram:
        mels = [self.frontend(w) for w in waveforms]
        lengths = {m.num_frames for m in mels}
        if len(lengths) != 1:
            raise InvalidConfigValueError(
                f"clips in a batch must have equal length, got spectrogram lengths {sorted(lengths)}")
        first = mels[0]
        stacked = np.stack([m.frames.data for m in mels])
        return MelSpectrogram(frames=Tensor(stacked, dtype=stacked.dtype), hop=first.hop,
                              window=first.window, n_mels=first.n_mels)

    def clip_vectors(self, batch: ClipBatch) -> Tuple[Optional[Tensor], Optional[Tensor]]:
        z_visual = z_audio = None
        if self.uses_visual:
            frame_features = encode_frames(batch.frames, enc=self.visual)
            z_visual = self.agg_visual(frame_features.matrix)
        if self.uses_audio:
            audio_features = encode_audio(self.spectrograms(batch.waveforms), enc=self.audio)
            z_audio = self.agg_audio(audio_features.matrix)
        return z_visual, z_audio

    def features(self, batch: ClipBatch) -> Tensor:
        """Fused pre-classifier vectors z_o, [B, feature_dim]."""
        z_visual, z_audio = self.clip_vectors(batch)
        if self.modality == enums.Modality.audiovisual.value:
            return self.head.fused(z_visual, z_audio)
        return self.head.fused(z_visual if z_visual is not None else z_audio)

    def forward(self, batch: ClipBatch) -> Tensor:
        """Logits [B, K]."""
        return self.head.classifier(self.features(batch))

    def predict_proba(self, batch: ClipBatch) -> np.ndarray:
        return ops.softmax(self.forward(batch), axis=-1).data

    def predict_labels(self, samples: Sequence, batch_size: int = 32) -> np.ndarray:
        """Argmax predictions in sample order, computed in eval mode."""
        was_training = self.training
        self.eval()
        preds = []
        for start in range(0, len(samples), batch_size):
            batch = ClipBatch.from_samples(samples[start:start + batch_size])
            preds.append(np.argmax(self.forward(batch).data, axis=-1))
        self.train(was_training)
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _seed_streams(seed: int) -> List[np.random.SeedSequence]:
    """Independent streams for visual adapters, audio adapters, aggregators, head."""
    return np.random.SeedSequence(seed).spawn(4)


def _make_head(modality: str, fusion: str, visual_dim: int, audio_dim: int, num_classes: int,
               rng: np.random.Generator) -> Module:
    if modality == enums.Modality.audiovisual.value:
        return FusionHead(mode=fusion, visual_dim=visual_dim, audio_dim=audio_dim, num_classes=num_classes, rng=rng)
    dim = visual_dim if modality == enums.Modality.visual.value else audio_dim
    return LinearHead(dim=dim, num_classes=num_classes, rng=rng)


def build_model(cfg: RunConfig, seed: Optional[int] = None) -> ClaipEmoModel:
    """Assembles the model for ``cfg``.

    ``seed`` (default ``cfg.seed``) drives adapter, aggregator, head and
    dropout initialisation. Backbones always come from PRIOR_SEED.
    """
    seed = cfg.seed if seed is None else seed
    visual_seq, audio_seq, agg_seq, head_seq = _seed_streams(seed)
    visual_cfg = resolve_encoder_config(cfg, kind=enums.EncoderKind.visual.value)
    audio_cfg = resolve_encoder_config(cfg, kind=enums.EncoderKind.audio.value)

    visual = make_backbone(seed=PRIOR_SEED, config=visual_cfg)
    audio = make_backbone(seed=PRIOR_SEED, config=audio_cfg)
    adapters = lora.AdapterSet()
    if cfg.lora.full_finetune:
        lora.enable_full_finetune(visual)
        lora.enable_full_finetune(audio)
        logger.info("full fine-tuning: backbone weights are trainable, no adapters injected")
    else:
        adapters = lora.inject(visual, rank=cfg.lora.rank, alpha=cfg.lora.alpha, dropout_p=cfg.lora.dropout,
                               seed=visual_seq, prefix=f"{enums.ModuleName.visual}.")
        adapters = adapters.union(
            lora.inject(audio, rank=cfg.lora.rank, alpha=cfg.lora.alpha, dropout_p=cfg.lora.dropout,
                        seed=audio_seq, prefix=f"{enums.ModuleName.audio}."))

    agg_rng = np.random.default_rng(agg_seq)
    agg_visual = VisualAggregator(mode=cfg.agg.visual, frames=cfg.clip.frames, dim=visual_cfg.d_model,
                                  num_heads=visual_cfg.n_heads, mlp_ratio=visual_cfg.mlp_ratio, rng=agg_rng)
    agg_audio = AudioAggregator(mode=cfg.agg.audio, max_tokens=audio_cfg.max_patches, dim=audio_cfg.d_model,
                                num_heads=audio_cfg.n_heads, mlp_ratio=audio_cfg.mlp_ratio, rng=agg_rng)
    head = _make_head(modality=enums.Modality.audiovisual.value, fusion=cfg.fusion,
                      visual_dim=visual_cfg.d_model, audio_dim=audio_cfg.d_model,
                      num_classes=cfg.data.num_classes, rng=np.random.default_rng(head_seq))
    model = ClaipEmoModel(
        modality=enums.Modality.audiovisual.value, num_classes=cfg.data.num_classes, head=head, fusion=cfg.fusion,
        visual=visual, agg_visual=agg_visual, audio=audio, agg_audio=agg_audio,
        frontend=AudioFrontend.from_settings(cfg.audio), adapters=adapters)
    if cfg.modality != enums.Modality.audiovisual.value:
        model = modality_mask(model, mode=cfg.modality, seed=seed)
    return model


def modality_mask(model: ClaipEmoModel, mode: str, seed: int = 0) -> ClaipEmoModel:
    """A variant of ``model`` that only runs the branches ``mode`` needs.

    Encoders and aggregators are shared with ``model``; the variant gets its
    own freshly initialised head (K x d linear for A or V, FusionHead for AV).
    """
    if mode == model.modality:
        return model
    if mode not in {m.value for m in enums.Modality}:
        raise InvalidConfigValueError(f"unknown modality `{mode}`")
    need_visual = mode in (enums.Modality.visual.value, enums.Modality.audiovisual.value)
    need_audio = mode in (enums.Modality.audio.value, enums.Modality.audiovisual.value)
    if (need_visual and model.visual is None) or (need_audio and model.audio is None):
        raise InvalidConfigValueError(f"a `{model.modality}` model has no branch for modality `{mode}`")
    visual_dim = model.visual.embed_dim if model.visual is not None else 0
    audio_dim = model.audio.embed_dim if model.audio is not None else 0
    head_seq = _seed_streams(seed)[3]
    head = _make_head(modality=mode, fusion=model.fusion,
                      visual_dim=visual_dim, audio_dim=audio_dim, num_classes=model.num_classes,
                      rng=np.random.default_rng(head_seq))
    adapters = lora.AdapterSet(visual=model.adapters.visual if need_visual else OrderedDict(),
                               audio=model.adapters.audio if need_audio else OrderedDict())
    variant = ClaipEmoModel(
        modality=mode, num_classes=model.num_classes, head=head, fusion=model.fusion,
        visual=model.visual if need_visual else None,
        agg_visual=model.agg_visual if need_visual else None,
        audio=model.audio if need_audio else None,
        agg_audio=model.agg_audio if need_audio else None,
        frontend=model.frontend if need_audio else None, adapters=adapters)
    return variant


def load_trained_model(path: str, cfg: RunConfig) -> ClaipEmoModel:
    """Rebuilds the architecture of ``cfg`` and loads a full snapshot into it."""
    model = build_model(cfg)
    checkpoint.load_module(model, path)
    model.eval()
    return model


def toy_gradcheck_config() -> RunConfig:
    """Two frames, three classes, width 32, depth 1."""
    return RunConfig().with_overrides({
        "preset": enums.BackbonePreset.toy.value,
        "clip.frames": 2,
        "clip.duration": 0.2,
        "data.num_classes": 3,
        "visual.image_size": 16,
        "audio_encoder.max_patches": 8,
        "lora.rank": 2,
        "lora.dropout": 0.0,
    })


def random_batch(cfg: RunConfig, batch_size: int, rng: np.random.Generator) -> ClipBatch:
    size, channels = cfg.visual.image_size, cfg.visual.channels
    length = int(round(cfg.clip.duration * cfg.audio.sample_rate))
    return ClipBatch(
        ids=[f"random{i}" for i in range(batch_size)],
        frames=rng.random((batch_size, cfg.clip.frames, size, size, channels)).astype(np.float32),
        waveforms=[Waveform(samples=rng.uniform(-0.5, 0.5, length), sample_rate=cfg.audio.sample_rate)
                   for _ in range(batch_size)],
        labels=rng.integers(0, cfg.data.num_classes, size=batch_size),
    )


def run_gradient_check(seed: int = 0, tolerance: float = GRADCHECK_TOLERANCE,
                       max_entries: Optional[int] = GRADCHECK_ENTRIES) -> GradCheckReport:
    """Checks every trainable tensor of the toy end-to-end graph in float64.

    Up to ``max_entries`` entries of each tensor are compared; None compares
    all of them.

    Adapter B matrices are randomised first so the A gradients are non-zero.

    Raises:
        GradientCheckError: if the max relative error reaches ``tolerance``.
    """
    with default_dtype(np.float64):
        cfg = toy_gradcheck_config()
        model = build_model(cfg, seed=seed)
        model.eval()
        rng = np.random.default_rng(seed)
        for name, param in model.trainable_parameters():
            if name.endswith(".lora_B"):
                param.data = rng.normal(0.0, 0.1, size=param.shape).astype(param.dtype)
        batch = random_batch(cfg, batch_size=2, rng=rng)

        def loss_fn() -> Tensor:
            return ops.cross_entropy(model(batch), batch.labels)

        report = check_gradients(loss_fn, model.trainable_parameters(), max_entries=max_entries, seed=seed)
    if not report.passed(tolerance):
        name, error = report.worst()
        raise GradientCheckError(
            f"reverse-mode gradient of `{name}` disagrees with central differences "
            f"(relative error {error:.3e} >= {tolerance})")
    return report
