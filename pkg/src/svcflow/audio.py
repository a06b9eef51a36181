"""Mono audio container, WAV I/O and resampling."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import InputError

DEFAULT_SAMPLE_RATE = 24000


def frame_count(n_samples: int, hop: int) -> int:
    """Number of centred frames (frame ``i`` is centred on sample ``i * hop``).

    Every frame-wise feature in the package uses this count so that pitch,
    loudness and STFT frames line up one-to-one.
    """
    if hop <= 0:
        raise InputError(f"hop must be positive, got {hop}")
    if n_samples < 1:
        raise InputError("audio is empty")
    return 1 + (n_samples - 1) // hop


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InputError(f"audio must be mono (1-D), got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise InputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise InputError("audio contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate)

    @classmethod
    def sine(cls, freq, duration=1.0, amplitude=0.5, sample_rate=DEFAULT_SAMPLE_RATE, phase=0.0):
        t = np.arange(int(round(duration * sample_rate))) / sample_rate
        return cls(amplitude * np.sin(2 * np.pi * freq * t + phase), sample_rate)


def resample(audio: AudioBuffer, target_rate: int = DEFAULT_SAMPLE_RATE) -> AudioBuffer:
    """Polyphase (linear-phase FIR) resampling to ``target_rate``."""
    if audio.sample_rate == target_rate:
        return audio
    ratio = Fraction(target_rate, audio.sample_rate)
    y = resample_poly(audio.samples, ratio.numerator, ratio.denominator)
    return AudioBuffer(y, target_rate)


def read_wav(path, target_rate: int | None = DEFAULT_SAMPLE_RATE) -> AudioBuffer:
    """Read a mono WAV file (integer PCM or float) into ``[-1, 1]`` floats.

    Multi-channel files are downmixed by averaging.  When ``target_rate`` is
    given the signal is resampled on ingestion.
    """
    try:
        rate, data = wavfile.read(Path(path))
    except (ValueError, OSError) as exc:
        raise InputError(f"cannot read WAV {path}: {exc}") from exc
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        if info.min == 0:  # unsigned 8-bit
            data = (data.astype(np.float64) - (info.max + 1) / 2) / ((info.max + 1) / 2)
        else:
            data = data.astype(np.float64) / -float(info.min)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    audio = AudioBuffer(data, int(rate))
    if target_rate is not None:
        audio = resample(audio, target_rate)
    return audio


def write_wav(path, audio: AudioBuffer, subtype: str = "float32") -> None:
    """Write mono WAV as 32-bit float (default) or 16-bit PCM (``"pcm16"``)."""
    if subtype == "float32":
        data = audio.samples.astype(np.float32)
    elif subtype == "pcm16":
        data = np.round(np.clip(audio.samples, -1.0, 1.0) * 32767).astype(np.int16)
    else:
        raise InputError(f"unsupported WAV subtype {subtype!r}")
    wavfile.write(Path(path), int(audio.sample_rate), data)
