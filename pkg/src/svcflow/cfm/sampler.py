"""Euler integration of the learned flow from Gaussian noise."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, SamplingError
from ..features.stft import StftFrames, istft
from ..nn.rng import make_rng
from ..nn.tensor import no_grad
from .bands import BandSpec, band_merge, band_split, unpack_spectrum


def euler_integrate(field, z0, n_steps=10, cond=None) -> np.ndarray:
    """Integrate ``dz/dt = field(z, t, cond)`` from t=0 to 1 in ``n_steps`` equal steps."""
    if n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    z = np.array(z0, dtype=np.float64)
    dt = 1.0 / n_steps
    with no_grad():
        for i in range(n_steps):
            v = field(z, i * dt, cond)
            v = np.asarray(getattr(v, "data", v), dtype=np.float64)
            z = z + dt * v
            if not np.all(np.isfinite(z)):
                raise SamplingError(f"non-finite state after Euler step {i}", step=i)
    return z


def sample_spectrum(field, cond, spec: BandSpec, n_frames: int, n_steps=10, seed=0, guidance=1.0) -> np.ndarray:
    """Draw packed full-spectrum frames ``(n_frames, 2 * n_slots)``.

    Noise is drawn on the full spectrum and split, so overlapping band slots
    start from the same value.  Only ``guidance == 1`` (plain conditional
    field) is supported.
    """
    if guidance != 1.0:
        raise ConfigError("only guidance scale 1.0 is supported")
    rng = make_rng(seed, "sample")
    z0 = rng.standard_normal((n_frames, 2 * spec.n_slots))
    bands = band_split(z0, spec)[None]
    z1 = euler_integrate(field, bands, n_steps, cond)
    return band_merge(z1, spec)[0]


def euler_sample(field, cond, spec: BandSpec, n_frames: int, n_steps=10, seed=0, scale=1.0,
                 sample_rate=24000, window="hann"):
    """Generate a waveform: sample packed spectra, undo scaling, inverse STFT.

    Returns ``(StftFrames, AudioBuffer)``; the audio has ``n_frames * hop``
    samples.
    """
    packed = sample_spectrum(field, cond, spec, n_frames, n_steps, seed) * scale
    frames = StftFrames(unpack_spectrum(packed), spec.fft_size, spec.hop, window,
                        n_frames * spec.hop, sample_rate)
    return frames, istft(frames)


def oracle_field(x1, z0):
    """Constant field ``x1 - z0``: Euler integration from ``z0`` lands on ``x1``."""
    target = np.asarray(x1) - np.asarray(z0)
    return lambda z, t, cond: target
