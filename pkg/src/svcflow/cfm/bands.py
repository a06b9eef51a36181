"""Multi-band layout of packed STFT frames.

A one-sided spectrum of ``fft_size`` points has ``fft_size / 2 + 1`` bins
but the DC and Nyquist bins are purely real.  Packing the Nyquist real part
into the (always zero) imaginary slot of DC gives ``fft_size / 2`` complex
*slots* that carry the spectrum losslessly.  Bands are equal-width slot
ranges with a fixed overlap; each band is a ``(frames, 2 * width)`` real
array laid out as ``[real parts | imaginary parts]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError


def pack_spectrum(frames: np.ndarray) -> np.ndarray:
    """Complex ``(T, N/2 + 1)`` bins to real ``(T, N)`` slots ``[re | im]``."""
    frames = np.asarray(frames)
    n_slots = frames.shape[-1] - 1
    re = frames.real[..., :n_slots]
    im = np.concatenate([frames.real[..., n_slots:], frames.imag[..., 1:n_slots]], axis=-1)
    return np.concatenate([re, im], axis=-1)


def unpack_spectrum(packed: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_spectrum`."""
    packed = np.asarray(packed, dtype=np.float64)
    n_slots = packed.shape[-1] // 2
    re, im = packed[..., :n_slots], packed[..., n_slots:]
    out = np.zeros(packed.shape[:-1] + (n_slots + 1,), dtype=np.complex128)
    out[..., :n_slots] = re
    out[..., n_slots] = im[..., 0]
    out[..., 1:n_slots] += 1j * im[..., 1:]
    return out


@dataclass(frozen=True)
class BandSpec:
    fft_size: int = 1024
    hop: int = 240
    n_bands: int = 4
    overlap: int = 8
    ranges: tuple = field(init=False)

    def __post_init__(self):
        if self.fft_size < 4 or self.fft_size & (self.fft_size - 1):
            raise ConfigError(f"fft_size must be a power of two >= 4, got {self.fft_size}")
        if self.n_bands < 1 or self.overlap < 0:
            raise ConfigError("n_bands must be >= 1 and overlap >= 0")
        n_slots = self.fft_size // 2
        overlap = self.overlap if self.n_bands > 1 else 0
        total = n_slots + (self.n_bands - 1) * overlap
        if total % self.n_bands:
            raise ConfigError(
                f"{n_slots} slots cannot be split into {self.n_bands} equal bands with overlap {overlap}")
        width = total // self.n_bands
        if width <= overlap:
            raise ConfigError(f"band width {width} must exceed the overlap {overlap}")
        stride = width - overlap
        ranges = tuple((b * stride, b * stride + width) for b in range(self.n_bands))
        if ranges[0][0] != 0 or ranges[-1][1] != n_slots:
            raise ConfigError("band ranges do not cover the spectrum")
        object.__setattr__(self, "ranges", ranges)

    @property
    def n_slots(self) -> int:
        return self.fft_size // 2

    @property
    def width(self) -> int:
        return self.ranges[0][1] - self.ranges[0][0]

    @property
    def channels(self) -> int:
        """Real channels per band (real and imaginary halves)."""
        return 2 * self.width

    @property
    def band_overlap(self) -> int:
        return self.overlap if self.n_bands > 1 else 0

    def to_dict(self) -> dict:
        return {"fft_size": self.fft_size, "hop": self.hop, "n_bands": self.n_bands, "overlap": self.overlap}

    def merge_matrix(self) -> np.ndarray:
        """``(n_bands * channels, 2 * n_slots)`` matrix averaging overlapped slots."""
        s, w = self.n_slots, self.width
        counts = np.zeros(s)
        for lo, hi in self.ranges:
            counts[lo:hi] += 1
        m = np.zeros((self.n_bands * 2 * w, 2 * s))
        for b, (lo, hi) in enumerate(self.ranges):
            base = b * 2 * w
            for j in range(w):
                slot = lo + j
                m[base + j, slot] = 1.0 / counts[slot]
                m[base + w + j, s + slot] = 1.0 / counts[slot]
        return m


def band_split(packed: np.ndarray, spec: BandSpec) -> np.ndarray:
    """``(..., T, 2 * n_slots)`` packed frames to ``(..., n_bands, T, channels)``."""
    packed = np.asarray(packed)
    if packed.shape[-1] != 2 * spec.n_slots:
        raise ShapeError(f"expected {2 * spec.n_slots} packed channels, got {packed.shape[-1]}")
    s = spec.n_slots
    bands = [np.concatenate([packed[..., lo:hi], packed[..., s + lo:s + hi]], axis=-1) for lo, hi in spec.ranges]
    return np.stack(bands, axis=-3)


def band_merge(bands, spec: BandSpec):
    """Inverse of :func:`band_split`; overlapped slots are averaged.

    Accepts an ndarray or a :class:`~svcflow.nn.Tensor` (differentiable).
    """
    from ..nn import ops as T
    from ..nn.tensor import Tensor

    shape = bands.shape
    if shape[-3] != spec.n_bands or shape[-1] != spec.channels:
        raise ShapeError(f"bands shape {shape} does not match {spec.n_bands} bands x {spec.channels} channels")
    lead = shape[:-3]
    n_t = shape[-2]
    perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    merge = spec.merge_matrix()
    if isinstance(bands, Tensor):
        flat = T.reshape(T.transpose(bands, perm), lead + (n_t, spec.n_bands * spec.channels))
        return T.matmul(flat, merge.astype(bands.dtype))
    flat = np.transpose(bands, perm).reshape(lead + (n_t, spec.n_bands * spec.channels))
    return flat @ merge


def overlap_pairs(spec: BandSpec):
    """Local channel indices shared by bands ``b`` and ``b + 1``: (left_idx, right_idx)."""
    w, ov = spec.width, spec.band_overlap
    left = np.concatenate([np.arange(w - ov, w), w + np.arange(w - ov, w)])
    right = np.concatenate([np.arange(ov), w + np.arange(ov)])
    return left, right
