"""Pitch, loudness and STFT feature extraction."""

from .loudness import a_weighting_db, extract_loudness
from .melody import MelodySeries, assemble_melody, extract_melody, minmax_normalize, pitch_shift_factor
from .pitch import METHODS, estimate_pitch_single, extract_pitch, fuse_candidates
from .stft import StftFrames, check_invertible, istft, stft

__all__ = [
    "METHODS",
    "MelodySeries",
    "StftFrames",
    "a_weighting_db",
    "assemble_melody",
    "check_invertible",
    "estimate_pitch_single",
    "extract_loudness",
    "extract_melody",
    "extract_pitch",
    "fuse_candidates",
    "istft",
    "minmax_normalize",
    "pitch_shift_factor",
    "stft",
]
