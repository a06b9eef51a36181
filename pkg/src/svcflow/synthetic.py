"""Synthetic singers: harmonic audio, structured SSL features, speaker embeddings.

Lets the whole pipeline run without pretrained encoders.  A "speaker" is
a seed: it fixes a timbre offset added to SSL layers and a centroid for
its embedding vectors.  Content is a sequence of phone ids whose
embeddings are shared by all speakers.
"""

from __future__ import annotations

import numpy as np

from .audio import AudioBuffer, frame_count
from .matching import QUERY_LAYERS, VALUE_LAYER, SslSequence
from .nn.rng import make_rng

N_PHONES = 24


def f0_contour(n_frames, rng, lo=140.0, hi=340.0, frame_rate=100.0) -> np.ndarray:
    """Smooth random glide in log-frequency within ``[lo, hi]`` Hz."""
    t = np.arange(n_frames) / frame_rate
    centre = 0.5 * (np.log(lo) + np.log(hi))
    half = 0.5 * (np.log(hi) - np.log(lo))
    curve = np.zeros(n_frames)
    for rate in (0.35, 0.8, 1.7):
        curve += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * rate * rng.uniform(0.7, 1.3) * t + rng.uniform(0, 2 * np.pi))
    curve /= max(np.abs(curve).max(), 1e-9)
    return np.exp(centre + 0.9 * half * curve)


def harmonic_audio(f0_frames, hop=240, sample_rate=24000, n_harmonics=4, amplitude=0.3, phase=0.0) -> AudioBuffer:
    """Sum of harmonics ``1/h`` following a frame-rate F0 contour.

    The contour is linearly interpolated to sample rate; frame ``i`` sits at
    sample ``i * hop``.  Output length is ``(len(f0) - 1) * hop + 1``.
    """
    f0_frames = np.asarray(f0_frames, dtype=np.float64)
    n = (len(f0_frames) - 1) * hop + 1
    f0 = np.interp(np.arange(n), np.arange(len(f0_frames)) * hop, f0_frames)
    ph = phase + 2 * np.pi * np.cumsum(f0) / sample_rate
    x = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        x += np.where(h * f0 < 0.45 * sample_rate, np.sin(h * ph) / h, 0.0)
    x *= amplitude / sum(1.0 / h for h in range(1, n_harmonics + 1))
    return AudioBuffer(x, sample_rate)


def phone_sequence(n_frames, rng, mean_len=6) -> np.ndarray:
    ids = []
    while len(ids) < n_frames:
        ids.extend([int(rng.integers(N_PHONES))] * int(rng.integers(mean_len // 2, 2 * mean_len)))
    return np.asarray(ids[:n_frames])


def ssl_features(phones, speaker: int, dim=32, layers=None, noise=0.05, seed=0) -> SslSequence:
    """Layer features: shared phone embedding, per-layer mix, speaker offset, noise.

    Content layers (the query layers) carry a weak speaker offset, the value
    layer a strong one, mimicking early-timbre / late-content SSL layers.
    """
    layers = tuple(layers) if layers is not None else tuple(sorted({VALUE_LAYER, *QUERY_LAYERS}))
    table = make_rng(0, "phones").normal(size=(N_PHONES, dim))
    offset = make_rng(speaker, "speaker-offset").normal(size=dim)
    rng = make_rng(seed, f"ssl-noise-{speaker}")
    feats = {}
    for layer in layers:
        mix = np.eye(dim) + 0.1 * make_rng(layer, "layer-mix").normal(size=(dim, dim))
        timbre = 0.8 if layer == VALUE_LAYER else 0.1
        feats[layer] = table[phones] @ mix + timbre * offset + noise * rng.normal(size=(len(phones), dim))
    return SslSequence(feats, source_id=f"spk{speaker}-seed{seed}")


def speaker_embeddings(speaker: int, dim=16, n_vectors=4, spread=0.1) -> np.ndarray:
    rng = make_rng(speaker, "speaker-emb")
    centre = rng.normal(size=dim)
    return centre + spread * rng.normal(size=(n_vectors, dim))


def make_utterance(speaker: int, seed: int, duration=1.0, f0_range=(140.0, 340.0), hop=240,
                   sample_rate=24000, ssl_dim=32, d_spk=16, n_harmonics=4) -> dict:
    """One synthetic utterance: ``audio``, ``f0`` (frame rate), ``ssl``, ``speaker_emb``.

    SSL frames run at half the melody frame rate, so upsampling by two
    lands within one frame of the melody length.
    """
    rng = make_rng(seed, f"utterance-{speaker}")
    n_samples = int(round(duration * sample_rate))
    n_mel = frame_count(n_samples, hop)
    f0 = f0_contour(n_mel, rng, *f0_range, frame_rate=sample_rate / hop)
    audio = harmonic_audio(f0, hop, sample_rate, n_harmonics)
    n_ssl = (n_mel + 1) // 2
    ssl = ssl_features(phone_sequence(n_ssl, rng), speaker, ssl_dim, seed=seed)
    return {"audio": audio, "f0": f0, "ssl": ssl, "speaker_emb": speaker_embeddings(speaker, d_spk)}
