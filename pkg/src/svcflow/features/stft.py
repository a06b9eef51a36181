"""Short-time Fourier transform with exact weighted overlap-add inverse."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import check_NOLA, get_window

from ..audio import AudioBuffer, frame_count
from ..errors import ConfigError, InputError


@dataclass(frozen=True)
class StftFrames:
    """One-sided complex spectrogram, shape ``(n_frames, fft_size // 2 + 1)``."""

    frames: np.ndarray
    fft_size: int
    hop: int
    window: str
    n_samples: int
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)


def analysis_window(name: str, fft_size: int) -> np.ndarray:
    try:
        return get_window(name, fft_size, fftbins=True).astype(np.float64)
    except ValueError as exc:
        raise ConfigError(f"unknown window {name!r}") from exc


def check_invertible(fft_size: int, hop: int, window: str = "hann") -> None:
    """Raise ``ConfigError`` unless the window/hop pair admits WOLA inversion."""
    if hop <= 0 or hop > fft_size:
        raise ConfigError(f"hop {hop} must be in (0, fft_size={fft_size}]")
    win = analysis_window(window, fft_size)
    if not check_NOLA(win, fft_size, fft_size - hop):
        raise ConfigError(f"window {window!r} with fft_size={fft_size}, hop={hop} is not invertible")


def frame_signal(x: np.ndarray, frame_len: int, hop: int, pad_mode: str = "reflect") -> np.ndarray:
    """Centred frames, shape ``(frame_count(len(x), hop), frame_len)``.

    Reflect padding falls back to zero padding when the signal is shorter
    than half a frame.
    """
    x = np.asarray(x, dtype=np.float64)
    n = frame_count(len(x), hop)
    pad = frame_len // 2
    if pad_mode == "reflect" and len(x) <= pad:
        pad_mode = "constant"
    padded = np.pad(x, (pad, pad), mode=pad_mode)
    idx = np.arange(n)[:, None] * hop + np.arange(frame_len)[None, :]
    return padded[idx]


def stft(audio: AudioBuffer, fft_size: int = 1024, hop: int = 240, window: str = "hann") -> StftFrames:
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ConfigError(f"fft_size must be a power of two, got {fft_size}")
    if hop <= 0:
        raise ConfigError(f"hop must be positive, got {hop}")
    win = analysis_window(window, fft_size)
    frames = frame_signal(audio.samples, fft_size, hop) * win
    spec = np.fft.rfft(frames, axis=-1)
    return StftFrames(spec, fft_size, hop, window, len(audio), audio.sample_rate)


def istft(frames: StftFrames) -> AudioBuffer:
    """Inverse of :func:`stft` by window-squared normalised overlap-add."""
    n_fft, hop = frames.fft_size, frames.hop
    check_invertible(n_fft, hop, frames.window)
    if frames.n_bins != n_fft // 2 + 1:
        raise InputError(f"expected {n_fft // 2 + 1} bins, got {frames.n_bins}")
    expected = frame_count(frames.n_samples, hop)
    if frames.n_frames != expected:
        raise InputError(f"{frames.n_frames} frames cannot describe {frames.n_samples} samples (need {expected})")
    win = analysis_window(frames.window, n_fft)
    chunks = np.fft.irfft(frames.frames, n=n_fft, axis=-1) * win
    total = (frames.n_frames - 1) * hop + n_fft
    out = np.zeros(total)
    norm = np.zeros(total)
    for i, chunk in enumerate(chunks):
        start = i * hop
        out[start:start + n_fft] += chunk
        norm[start:start + n_fft] += win * win
    pad = n_fft // 2
    out = out[pad:pad + frames.n_samples]
    norm = norm[pad:pad + frames.n_samples]
    if np.any(norm < 1e-10):
        raise ConfigError("overlap-add normaliser vanishes inside the signal")
    return AudioBuffer(out / norm, frames.sample_rate)
