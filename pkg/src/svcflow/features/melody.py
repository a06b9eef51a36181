"""Melody features: paired F0/loudness contours and pitch-shift factor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..audio import AudioBuffer
from ..errors import InputError, NoVoicingError
from .loudness import LOUDNESS_FLOOR_DB, extract_loudness
from .pitch import F0_MAX, F0_MIN, extract_pitch


def minmax_normalize(x) -> np.ndarray:
    """Affine map of ``x`` onto [0, 1]; a constant sequence maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


@dataclass(frozen=True)
class MelodySeries:
    f0: np.ndarray
    loudness: np.ndarray
    hop: int = 240
    sample_rate: int = 24000

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        loud = np.asarray(self.loudness, dtype=np.float64).reshape(-1)
        if f0.shape != loud.shape:
            raise InputError(f"f0 has {f0.size} frames but loudness has {loud.size}")
        if np.any(f0 < 0) or not np.all(np.isfinite(f0)):
            raise InputError("f0 must be finite and non-negative")
        if self.hop <= 0:
            raise InputError(f"hop must be positive, got {self.hop}")
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "loudness", loud)

    def __len__(self):
        return self.f0.size

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0

    @property
    def f0_minmax(self) -> np.ndarray:
        """Per-utterance min-max normalised F0 (metrics view)."""
        return minmax_normalize(self.f0)

    def shifted(self, factor: float) -> "MelodySeries":
        return MelodySeries(self.f0 * factor, self.loudness, self.hop, self.sample_rate)

    def condition_channels(self) -> np.ndarray:
        """Two conditioning channels in [0, 1], shape ``(n_frames, 2)``.

        F0 is mapped on a log scale over the estimator search range and
        loudness over [floor, 0] dB.  The ranges are fixed rather than
        per-utterance so that a pitch shift survives normalisation.
        Unvoiced frames carry 0.
        """
        f0 = np.clip(self.f0, F0_MIN, F0_MAX)
        pitch = np.log(f0 / F0_MIN) / np.log(F0_MAX / F0_MIN)
        pitch = np.where(self.voiced, pitch, 0.0)
        loud = np.clip((self.loudness - LOUDNESS_FLOOR_DB) / -LOUDNESS_FLOOR_DB, 0.0, 1.0)
        return np.stack([pitch, loud], axis=1)


def assemble_melody(f0, loudness, hop: int = 240, sample_rate: int = 24000) -> MelodySeries:
    return MelodySeries(f0, loudness, hop, sample_rate)


def extract_melody(audio: AudioBuffer, hop: int = 240, fft_size: int = 1024) -> MelodySeries:
    f0 = extract_pitch(audio, hop)
    loud = extract_loudness(audio, hop, fft_size)
    return MelodySeries(f0, loud, hop, audio.sample_rate)


def pitch_shift_factor(source_f0, target_f0) -> float:
    """Ratio of median voiced target F0 to median voiced source F0."""
    src = np.asarray(source_f0, dtype=np.float64)
    tgt = np.asarray(target_f0, dtype=np.float64)
    src, tgt = src[src > 0], tgt[tgt > 0]
    if src.size == 0 or tgt.size == 0:
        which = "source" if src.size == 0 else "target"
        raise NoVoicingError(f"{which} contour has no voiced frames")
    return float(np.median(tgt) / np.median(src))
