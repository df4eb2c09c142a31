"""Synthetic audiovisual emotion clips with controllable difficulty.

Class k owns a seeded visual pattern and a tone at 200 + 60k Hz (odd
tones add the second harmonic). A fraction ``rho`` of clips carries the
class in both modalities; the rest carry it in only one (half audio-only,
half video-only) with the other modality reduced to noise, so neither
modality alone can classify every clip.

With ``temporal_order`` the classes come in pairs (2j, 2j+1) sharing
pattern and tone and differing only in a rising vs falling visual
envelope, so the frame order is the only cue that separates them.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from claip_emo import utils
from claip_emo.audio.audio_io import quantize_pcm16
from claip_emo.audio.frontend import Waveform
from claip_emo.config import RunConfig
from claip_emo.errors import DatasetSpecError
from claip_emo.logger import get_logger

logger = get_logger(__name__)

BASE_TONE_HZ = 200.0
TONE_STEP_HZ = 60.0
TONE_AMPLITUDE = 0.5
HARMONIC_AMPLITUDE = 0.25
ENVELOPE_RANGE = (0.1, 1.0)


class Carrier:
    """Which modalities of a clip carry the label."""
    both = "both"
    audio_only = "audio"
    video_only = "video"


@dataclass
class DatasetSpec:
    num_classes: int = 7
    class_counts: List[int] = field(default_factory=lambda: [50] * 7)
    sigma_v: float = 0.3
    sigma_a: float = 0.1
    rho: float = 0.5
    temporal_order: bool = False
    seed: int = 0
    frames: int = 8
    image_size: int = 32
    channels: int = 1
    sample_rate: int = 16000
    duration: float = 1.0

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "DatasetSpec":
        return cls(num_classes=cfg.data.num_classes, class_counts=cfg.data.counts(),
                   sigma_v=cfg.data.sigma_v, sigma_a=cfg.data.sigma_a, rho=cfg.data.rho,
                   temporal_order=cfg.data.temporal_order, seed=cfg.seed, frames=cfg.clip.frames,
                   image_size=cfg.visual.image_size, channels=cfg.visual.channels,
                   sample_rate=cfg.audio.sample_rate, duration=cfg.clip.duration)

    @property
    def num_samples(self) -> int:
        return int(sum(self.class_counts))

    @property
    def clip_length(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def validate(self) -> "DatasetSpec":
        if self.num_classes < 2:
            raise DatasetSpecError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.class_counts) != self.num_classes:
            raise DatasetSpecError(
                f"{len(self.class_counts)} class counts given for {self.num_classes} classes")
        if any(c < 1 for c in self.class_counts):
            raise DatasetSpecError(f"every class needs at least one clip, got {self.class_counts}")
        if self.sigma_v < 0 or self.sigma_a < 0:
            raise DatasetSpecError("noise levels must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise DatasetSpecError(f"rho must lie in [0, 1], got {self.rho}")
        if self.temporal_order and self.num_classes % 2:
            raise DatasetSpecError("temporal_order pairs classes, so num_classes must be even")
        if self.frames < 1 or self.clip_length < 1:
            raise DatasetSpecError("clips need at least one frame and one audio sample")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ClipSample:
    id: str
    frames: np.ndarray  # [T, H, W, C] in [0, 1]
    waveform: Waveform
    label: int
    carrier: str = Carrier.both


class SyntheticDataset:

    def __init__(self, spec: DatasetSpec, samples: Sequence[ClipSample]):
        self.spec = spec
        self.samples = list(samples)
        self._by_id = {s.id: s for s in self.samples}

    def __len__(self):
        return len(self.samples)

    def __iter__(self) -> Iterator[ClipSample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> ClipSample:
        return self.samples[index]

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.samples]

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([s.label for s in self.samples], dtype=np.int64)

    def by_ids(self, ids: Sequence[str]) -> List[ClipSample]:
        return [self._by_id[i] for i in ids]

    def checksum(self) -> str:
        """sha256 over every clip's frames, waveform and label, in order."""
        arrays = []
        for s in self.samples:
            arrays.extend([s.frames, s.waveform.samples, np.asarray([s.label], dtype=np.int64)])
        return utils.arrays_checksum(arrays)


def class_patterns(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """One [H, W, C] pattern per pattern index, blocky so it survives patching."""
    n_patterns = spec.num_classes // 2 if spec.temporal_order else spec.num_classes
    blocks = max(1, spec.image_size // 8)
    coarse = rng.random((n_patterns, blocks, blocks, spec.channels))
    cells = (np.arange(spec.image_size) * blocks) // spec.image_size
    return coarse[:, cells][:, :, cells]


def class_tone(label: int, spec: DatasetSpec) -> float:
    index = label // 2 if spec.temporal_order else label
    return BASE_TONE_HZ + TONE_STEP_HZ * index


def envelope(label: int, spec: DatasetSpec) -> np.ndarray:
    if not spec.temporal_order:
        return np.ones(spec.frames)
    rising = np.linspace(*ENVELOPE_RANGE, spec.frames)
    return rising if label % 2 == 0 else rising[::-1]


def render_frames(pattern: Optional[np.ndarray], env: np.ndarray, spec: DatasetSpec,
                  rng: np.random.Generator) -> np.ndarray:
    shape = (spec.frames, spec.image_size, spec.image_size, spec.channels)
    if pattern is None:
        clean = np.full(shape, 0.5)
    else:
        clean = 0.5 + env[:, None, None, None] * (pattern[None] - 0.5)
    noisy = clean + rng.normal(0.0, spec.sigma_v, size=shape) if spec.sigma_v > 0 else clean
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def render_audio(tone_hz: Optional[float], harmonic: bool, spec: DatasetSpec,
                 rng: np.random.Generator) -> Waveform:
    t = np.arange(spec.clip_length) / spec.sample_rate
    signal = np.zeros(spec.clip_length)
    if tone_hz is not None:
        phase = rng.uniform(0.0, 2 * np.pi)
        signal += TONE_AMPLITUDE * np.sin(2 * np.pi * tone_hz * t + phase)
        if harmonic:
            signal += HARMONIC_AMPLITUDE * np.sin(4 * np.pi * tone_hz * t + 2 * phase)
    if spec.sigma_a > 0:
        signal += rng.normal(0.0, spec.sigma_a, size=spec.clip_length)
    return Waveform(samples=quantize_pcm16(signal), sample_rate=spec.sample_rate)


def _carrier(spec: DatasetSpec, rng: np.random.Generator) -> str:
    if rng.random() < spec.rho:
        return Carrier.both
    return Carrier.audio_only if rng.random() < 0.5 else Carrier.video_only


def generate(spec: DatasetSpec) -> SyntheticDataset:
    """Renders the dataset for ``spec``; identical specs give identical data."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    patterns = class_patterns(spec, rng)
    samples = []
    for label, count in enumerate(spec.class_counts):
        pattern_index = label // 2 if spec.temporal_order else label
        for j in range(count):
            carrier = _carrier(spec, rng)
            shows_video = carrier != Carrier.audio_only
            shows_audio = carrier != Carrier.video_only
            frames = render_frames(patterns[pattern_index] if shows_video else None,
                                   env=envelope(label, spec), spec=spec, rng=rng)
            waveform = render_audio(class_tone(label, spec) if shows_audio else None,
                                    harmonic=bool(pattern_index % 2), spec=spec, rng=rng)
            samples.append(ClipSample(id=f"c{label:02d}_{j:04d}", frames=frames, waveform=waveform,
                                      label=label, carrier=carrier))
    dataset = SyntheticDataset(spec=spec, samples=samples)
    logger.info(f"generated {len(dataset)} clips over {spec.num_classes} classes "
                f"(rho={spec.rho}, sigma_v={spec.sigma_v}, sigma_a={spec.sigma_a}, "
                f"temporal_order={spec.temporal_order})")
    return dataset
