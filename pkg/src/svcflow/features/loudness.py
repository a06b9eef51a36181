"""A-weighted frame loudness from the power spectrum."""

from __future__ import annotations

import numpy as np

from ..audio import AudioBuffer
from ..errors import ConfigError
from .stft import analysis_window, frame_signal

LOUDNESS_FLOOR_DB = -100.0

# IEC 61672 pole frequencies (Hz)
_F1, _F2, _F3, _F4 = 20.598997, 107.65265, 737.86223, 12194.217


def _a_response(freqs):
    f2 = np.asarray(freqs, dtype=np.float64) ** 2
    return (_F4 ** 2 * f2 ** 2) / (
        (f2 + _F1 ** 2) * np.sqrt((f2 + _F2 ** 2) * (f2 + _F3 ** 2)) * (f2 + _F4 ** 2)
    )


def a_weighting_db(freqs) -> np.ndarray:
    """A-weighting gain in dB, normalised to exactly 0 dB at 1 kHz.

    The response is zero at DC, which maps to ``-inf`` dB.
    """
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(_a_response(freqs) / _a_response(1000.0))


def a_weighted_power(power_spectrum, sample_rate: int, fft_size: int) -> np.ndarray:
    """Sum of A-weighted bin powers along the last axis."""
    freqs = np.fft.rfftfreq(fft_size, 1.0 / sample_rate)
    gain = 10.0 ** (a_weighting_db(freqs) / 10.0)
    return np.sum(np.asarray(power_spectrum) * gain, axis=-1)


def power_to_db(power, floor_db: float = LOUDNESS_FLOOR_DB) -> np.ndarray:
    power = np.asarray(power, dtype=np.float64)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power)
    return np.maximum(db, floor_db)


def extract_loudness(audio: AudioBuffer, hop: int = 240, fft_size: int = 1024, window: str = "hann") -> np.ndarray:
    """Per-frame A-weighted loudness in dB, floored at -100 dB.

    Power is normalised by the squared window sum, so a full-scale sinusoid
    near 1 kHz reads about 10*log10(3/8) = -4.26 dB irrespective of
    ``fft_size`` (the Hann main lobe spreads its power over three bins).
    """
    if fft_size & (fft_size - 1) or fft_size < 2 * hop:
        raise ConfigError(f"fft_size must be a power of two >= 2*hop, got {fft_size} (hop {hop})")
    win = analysis_window(window, fft_size)
    frames = frame_signal(audio.samples, fft_size, hop) * win
    power = np.abs(np.fft.rfft(frames, axis=-1)) ** 2 / win.sum() ** 2
    return power_to_db(a_weighted_power(power, audio.sample_rate, fft_size))
