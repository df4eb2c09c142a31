"""Log-mel spectrogram frontend.

Waveform -> Hann-windowed STFT -> power spectrum -> triangular mel
filterbank (Slaney mel scale) -> log(energy + 1e-10).
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from claip_emo.errors import AudioError, FilterbankError, SampleRateMismatchError, WaveformTooShortError
from claip_emo.numerics.tensor import Tensor, get_default_dtype

LOG_EPS = 1e-10
LOG_FLOOR = float(np.log(LOG_EPS))

# Slaney mel scale: linear below 1 kHz, logarithmic above
_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOG_STEP = np.log(6.4) / 27.0


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float32).reshape(-1))
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size == 0:
            raise AudioError("waveform is empty")

    def __len__(self):
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class MelSpectrogram:
    frames: Tensor
    hop: int
    window: int
    n_mels: int

    @property
    def num_frames(self) -> int:
        return self.frames.shape[-2]


def hz_to_mel(freq):
    freq = np.asarray(freq, dtype=np.float64)
    linear = freq / _F_SP
    log_part = _MIN_LOG_MEL + np.log(np.maximum(freq, _MIN_LOG_HZ) / _MIN_LOG_HZ) / _LOG_STEP
    return np.where(freq >= _MIN_LOG_HZ, log_part, linear)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    linear = mel * _F_SP
    log_part = _MIN_LOG_HZ * np.exp(_LOG_STEP * (np.maximum(mel, _MIN_LOG_MEL) - _MIN_LOG_MEL))
    return np.where(mel >= _MIN_LOG_MEL, log_part, linear)


def num_frames(length: int, window: int, hop: int) -> int:
    if length < window:
        return 0
    return 1 + (length - window) // hop


def hann_window(size: int) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(size, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / size)


def stft(w: Waveform, window: int = 400, hop: int = 160, n_fft: Optional[int] = None) -> np.ndarray:
    """Complex STFT frames [T_a, n_fft // 2 + 1].

    Raises:
        WaveformTooShortError: if the waveform is shorter than one window.
    """
    n_fft = window if n_fft is None else n_fft
    if n_fft < window:
        raise AudioError(f"n_fft ({n_fft}) must be at least the window size ({window})")
    if len(w) < window:
        raise WaveformTooShortError(
            f"waveform has {len(w)} samples, fewer than one analysis window ({window}); "
            f"pad the clip first (see harness.dataset_io.load_clip)")
    samples = w.samples.astype(np.float64)
    count = num_frames(len(w), window, hop)
    framed = np.lib.stride_tricks.sliding_window_view(samples, window)[::hop][:count]
    return np.fft.rfft(framed * hann_window(window), n=n_fft, axis=-1)


def power_spectrum(w: Waveform, window: int = 400, hop: int = 160, n_fft: Optional[int] = None) -> np.ndarray:
    return np.abs(stft(w, window=window, hop=hop, n_fft=n_fft)) ** 2


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Triangular filters [n_mels, n_fft // 2 + 1], peak-normalised to 1.

    Raises:
        FilterbankError: on an invalid band or more filters than FFT bins.
    """
    n_bins = n_fft // 2 + 1
    if not 0.0 <= f_min < f_max <= sample_rate / 2:
        raise FilterbankError(
            f"need 0 <= f_min < f_max <= sample_rate/2, got f_min={f_min} f_max={f_max} "
            f"sample_rate={sample_rate}")
    if n_mels > n_bins:
        raise FilterbankError(f"n_mels ({n_mels}) exceeds the number of FFT bins ({n_bins})")
    bin_freqs = np.linspace(0.0, sample_rate / 2, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (centre - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def filter_centres(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))[1:-1]


def mel_project(power: np.ndarray, filterbank: np.ndarray, hop: int, window: int) -> MelSpectrogram:
    """Applies the filterbank to a power spectrum and log-compresses."""
    if power.shape[-1] != filterbank.shape[1]:
        raise FilterbankError(
            f"power spectrum has {power.shape[-1]} bins, filterbank expects {filterbank.shape[1]}")
    energy = power @ filterbank.T
    log_mel = np.maximum(np.log(energy + LOG_EPS), LOG_FLOOR)
    return MelSpectrogram(frames=Tensor(log_mel, dtype=get_default_dtype()), hop=hop, window=window, n_mels=filterbank.shape[0])


class AudioFrontend:
    """Holds one filterbank and turns waveforms into log-mel spectrograms."""

    def __init__(self, sample_rate: int = 16000, window: int = 400, hop: int = 160,
                 n_mels: int = 64, f_min: float = 50.0, f_max: float = 8000.0,
                 n_fft: Optional[int] = None):
        self.sample_rate = sample_rate
        self.window = window
        self.hop = hop
        self.n_fft = window if n_fft is None else n_fft
        self.n_mels = n_mels
        self.f_min = f_min
        self.f_max = f_max
        self.filterbank = mel_filterbank(
            sample_rate=sample_rate, n_fft=self.n_fft, n_mels=n_mels, f_min=f_min, f_max=f_max)

    @classmethod
    def from_settings(cls, settings) -> "AudioFrontend":
        return cls(sample_rate=settings.sample_rate, window=settings.window, hop=settings.hop,
                   n_mels=settings.n_mels, f_min=settings.f_min, f_max=settings.f_max,
                   n_fft=settings.n_fft)

    def num_frames(self, length: int) -> int:
        return num_frames(length, self.window, self.hop)

    def log_mel(self, w: Waveform) -> MelSpectrogram:
        if w.sample_rate != self.sample_rate:
            raise SampleRateMismatchError(
                f"waveform is {w.sample_rate} Hz, the frontend is configured for {self.sample_rate} Hz")
        power = power_spectrum(w, window=self.window, hop=self.hop, n_fft=self.n_fft)
        return mel_project(power, self.filterbank, hop=self.hop, window=self.window)

    def __call__(self, w: Waveform) -> MelSpectrogram:
        return self.log_mel(w)
