"""Waveform file I/O: mono 16-bit PCM WAV and raw little-endian f32."""
import os
import wave

import numpy as np

from claip_emo.audio.frontend import Waveform
from claip_emo.errors import AudioFormatError, SampleRateMismatchError
from claip_emo.logger import get_logger

logger = get_logger(__name__)

WAV_EXTENSIONS = (".wav",)
RAW_EXTENSIONS = (".f32", ".raw")
PCM16_SCALE = 32767.0


def read_wav(path: str) -> Waveform:
    try:
        with wave.open(path, "rb") as reader:
            channels = reader.getnchannels()
            width = reader.getsampwidth()
            sample_rate = reader.getframerate()
            frames = reader.readframes(reader.getnframes())
    except wave.Error as e:
        raise AudioFormatError(f"`{path}` is not a readable RIFF/WAV file: {e}")
    if channels != 1 or width != 2:
        raise AudioFormatError(
            f"`{path}` must be mono 16-bit PCM, found {channels} channel(s) of {8 * width}-bit samples")
    pcm = np.frombuffer(frames, dtype="<i2").astype(np.float32)
    return Waveform(samples=pcm / PCM16_SCALE, sample_rate=sample_rate)


def write_wav(w: Waveform, path: str) -> None:
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * PCM16_SCALE).astype("<i2")
    with wave.open(path, "wb") as writer:
        writer.setnchannels(1)
        writer.setsampwidth(2)
        writer.setframerate(w.sample_rate)
        writer.writeframes(pcm.tobytes())


def read_raw_f32(path: str, sample_rate: int) -> Waveform:
    samples = np.fromfile(path, dtype="<f4")
    return Waveform(samples=samples, sample_rate=sample_rate)


def write_raw_f32(w: Waveform, path: str) -> None:
    w.samples.astype("<f4").tofile(path)


def load_waveform(path: str, sample_rate: int) -> Waveform:
    """Reads a waveform, picking the format from the file extension.

    Raw files carry no header and are taken to be at ``sample_rate``.

    Raises:
        AudioFormatError: on an unknown extension or malformed file.
        SampleRateMismatchError: if a WAV header disagrees with ``sample_rate``.
    """
    extension = os.path.splitext(path)[1].lower()
    if extension in WAV_EXTENSIONS:
        w = read_wav(path)
    elif extension in RAW_EXTENSIONS:
        w = read_raw_f32(path, sample_rate=sample_rate)
    else:
        raise AudioFormatError(
            f"unsupported audio extension `{extension}`; use one of {WAV_EXTENSIONS + RAW_EXTENSIONS}")
    if w.sample_rate != sample_rate:
        raise SampleRateMismatchError(
            f"`{path}` is sampled at {w.sample_rate} Hz but the config expects {sample_rate} Hz; "
            f"resampling is not supported")
    return w


def pad_or_trim(w: Waveform, length: int) -> Waveform:
    """Zero-pads at the end, or trims, to exactly ``length`` samples."""
    if len(w) == length:
        return w
    if len(w) > length:
        return Waveform(samples=w.samples[:length], sample_rate=w.sample_rate)
    logger.debug(f"padding waveform from {len(w)} to {length} samples")
    padded = np.zeros(length, dtype=np.float32)
    padded[:len(w)] = w.samples
    return Waveform(samples=padded, sample_rate=w.sample_rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Snaps samples to the 16-bit grid so a WAV round trip is lossless."""
    pcm = np.round(np.clip(samples, -1.0, 1.0) * PCM16_SCALE).astype(np.float32)
    return pcm / np.float32(PCM16_SCALE)
