"""On-disk dataset layout.

    <dir>/dataset.manifest   one JSON object per clip: id, frames_path, wav_path, label
    <dir>/dataset.json       generation spec, clip count and content checksum
    <dir>/frames/<id>.ckpt   frames [T, H, W, C] f32 in the checkpoint container
    <dir>/audio/<id>.wav     mono 16-bit PCM

Paths in the manifest are relative to the dataset directory.
"""
import json
import os
from typing import Dict, List, Optional

import numpy as np

from claip_emo import utils
from claip_emo.audio.audio_io import load_waveform, pad_or_trim, write_wav
from claip_emo.audio.frontend import Waveform
from claip_emo.backbones.checkpoint import TensorRecord, read_tensors, write_tensors
from claip_emo.enums import ArtifactName, ManifestField
from claip_emo.errors import DataError
from claip_emo.harness.synthetic import Carrier, ClipSample, DatasetSpec, SyntheticDataset
from claip_emo.logger import get_logger

logger = get_logger(__name__)

FRAMES_DIR = "frames"
AUDIO_DIR = "audio"
FRAMES_TENSOR = "frames"


def uniform_frame_indices(num_source: int, num_frames: int) -> np.ndarray:
    """``num_frames`` indices at a fixed stride, starting at frame 0.

    Raises:
        DataError: if the clip has fewer frames than requested.
    """
    if num_source < num_frames:
        raise DataError(f"clip has {num_source} frames, {num_frames} are needed")
    stride = num_source // num_frames
    return np.arange(num_frames) * stride


def save_dataset(dataset: SyntheticDataset, out_dir: str) -> str:
    """Writes every clip plus manifest and dataset.json. Returns the manifest path."""
    os.makedirs(os.path.join(out_dir, FRAMES_DIR), exist_ok=True)
    os.makedirs(os.path.join(out_dir, AUDIO_DIR), exist_ok=True)
    entries = []
    for sample in dataset:
        frames_path = os.path.join(FRAMES_DIR, f"{sample.id}.ckpt")
        wav_path = os.path.join(AUDIO_DIR, f"{sample.id}.wav")
        write_tensors(os.path.join(out_dir, frames_path), [TensorRecord(name=FRAMES_TENSOR, array=sample.frames)])
        write_wav(sample.waveform, os.path.join(out_dir, wav_path))
        entries.append({ManifestField.id: sample.id, ManifestField.frames_path: frames_path,
                        ManifestField.wav_path: wav_path, ManifestField.label: int(sample.label),
                        ManifestField.carrier: sample.carrier})
    manifest_path = os.path.join(out_dir, ArtifactName.manifest)
    with open(manifest_path, "w", encoding="utf8") as f:
        f.write(utils.dicts_to_jsonl(entries))
    info = {"spec": dataset.spec.to_dict(), "num_clips": len(dataset), "checksum": dataset.checksum()}
    with open(os.path.join(out_dir, ArtifactName.dataset_info), "w", encoding="utf8") as f:
        json.dump(info, f, indent=2, sort_keys=True)
    logger.info(f"wrote {len(entries)} clips to {out_dir}")
    return manifest_path


def read_manifest(path: str) -> List[Dict]:
    entries = []
    with open(path, "r", encoding="utf8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_number} is not valid JSON: {e}")
            missing = [k for k in (ManifestField.id, ManifestField.frames_path, ManifestField.wav_path,
                                   ManifestField.label) if k not in entry]
            if missing:
                raise DataError(f"{path}:{line_number} is missing {missing}")
            entries.append(entry)
    return entries


def load_clip(entry: Dict, data_dir: str, frames: int, sample_rate: int, duration: float) -> ClipSample:
    """Loads one manifest entry, sampling ``frames`` frames at a fixed stride
    and zero-padding or trimming the waveform to ``duration`` seconds."""
    records = read_tensors(os.path.join(data_dir, entry[ManifestField.frames_path]))
    if FRAMES_TENSOR not in records:
        raise DataError(f"`{entry[ManifestField.frames_path]}` holds no `{FRAMES_TENSOR}` tensor")
    video = records[FRAMES_TENSOR].array.astype(np.float32)
    video = video[uniform_frame_indices(video.shape[0], frames)]
    waveform: Waveform = load_waveform(os.path.join(data_dir, entry[ManifestField.wav_path]),
                                       sample_rate=sample_rate)
    waveform = pad_or_trim(waveform, int(round(duration * sample_rate)))
    return ClipSample(id=entry[ManifestField.id], frames=video, waveform=waveform,
                      label=int(entry[ManifestField.label]),
                      carrier=entry.get(ManifestField.carrier, Carrier.both))


def load_dataset(data_dir: str, frames: Optional[int] = None, sample_rate: Optional[int] = None,
                 duration: Optional[float] = None) -> SyntheticDataset:
    """Loads a directory written by ``save_dataset``.

    Clip geometry defaults to the stored generation spec.
    """
    info_path = os.path.join(data_dir, ArtifactName.dataset_info)
    if os.path.isfile(info_path):
        with open(info_path, "r", encoding="utf8") as f:
            spec = DatasetSpec(**json.load(f)["spec"])
    else:
        spec = DatasetSpec()
    frames = spec.frames if frames is None else frames
    sample_rate = spec.sample_rate if sample_rate is None else sample_rate
    duration = spec.duration if duration is None else duration
    manifest_path = os.path.join(data_dir, ArtifactName.manifest)
    if not os.path.isfile(manifest_path):
        raise DataError(f"no {ArtifactName.manifest} in `{data_dir}`; run `claip-emo generate` first")
    samples = [load_clip(entry, data_dir=data_dir, frames=frames, sample_rate=sample_rate, duration=duration)
               for entry in read_manifest(manifest_path)]
    return SyntheticDataset(spec=spec, samples=samples)
